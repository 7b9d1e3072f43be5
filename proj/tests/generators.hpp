#pragma once

// Hand-rolled generators for property tests. Every generator takes the rng by
// reference so a failing case is reproducible from the test's seed.

#include <cmath>
#include <random>
#include <vector>

#include <spframe/spframe.hpp>

namespace gen {

using namespace spframe;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 vec3(std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Vec3 unit_vec3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do v = {n(rng), n(rng), n(rng)};
  while (norm(v) < 1e-6);
  return (1.0 / norm(v)) * v;
}

inline Mat3 rotation(std::mt19937_64& rng) { return random_rotation(rng()).rotation; }

inline Quaternion quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quaternion q;
  do q = {n(rng), n(rng), n(rng), n(rng)};
  while (q.norm() < 1e-3);
  return q;
}

// Columns are lattice vectors. Rejects cells whose condition number exceeds
// max_condition (estimated as the ratio of extreme singular values).
inline Mat3 lattice_matrix(std::mt19937_64& rng, double max_condition = 1e4) {
  for (;;) {
    Mat3 m;
    for (auto& row : m)
      for (double& x : row) x = uniform(rng, -4.0, 4.0);
    if (std::abs(det(m)) < 1e-3) continue;
    const SymmetricEigen e = eigen_symmetric(transpose(m) * m);
    if (!(e.values[2] > 0)) continue;
    if (std::sqrt(e.values[0] / e.values[2]) < max_condition) return m;
  }
}

// Lattice with a well separated covariance spectrum so PCA frames exist.
inline Mat3 pca_lattice_matrix(std::mt19937_64& rng) {
  for (;;) {
    const Mat3 m = lattice_matrix(rng, 50.0);
    std::vector<Vec3> pts{column(m, 0), column(m, 1), column(m, 2)};
    const Vec3 c = (1.0 / 3.0) * (pts[0] + pts[1] + pts[2]);
    Mat3 cov{};
    for (auto& p : pts) {
      p = p - c;
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) cov[r][k] += p[r] * p[k];
    }
    const SymmetricEigen e = eigen_symmetric(cov);
    // Centred lattice vectors span a plane, so the smallest eigenvalue is 0.
    if (e.values[0] - e.values[1] > 0.05 * e.values[0] && e.values[1] > 0.05 * e.values[0]) return m;
  }
}

inline std::vector<Vec3> frac_coords(std::mt19937_64& rng, std::size_t n) {
  std::vector<Vec3> f(n);
  for (auto& x : f) x = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
  return f;
}

inline Structure structure(std::mt19937_64& rng, std::size_t min_atoms = 2, std::size_t max_atoms = 4) {
  RandomStructureOptions o;
  o.min_atoms = min_atoms;
  o.max_atoms = max_atoms;
  return random_structure(rng, o);
}

inline RigidMotion rigid_motion(std::mt19937_64& rng, double translation = 5.0) {
  return random_rigid_motion(rng, translation);
}

// Integer cell shift each atom picks up when apply_rigid_motion wraps it.
inline std::vector<std::array<int, 3>> wrap_shifts(const Structure& s, const RigidMotion& m) {
  const Lattice moved(m.rotation * s.lattice().matrix());
  const Structure w = apply_rigid_motion(s, m);
  std::vector<std::array<int, 3>> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Vec3 u = moved.cart_to_frac(m.rotation * s.cart(i) + m.translation);
    for (int c = 0; c < 3; ++c) out[i][c] = static_cast<int>(std::lround(u[c] - w.frac()[i][c]));
  }
  return out;
}

inline Tensor tensor(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = uniform(rng, lo, hi);
  return t;
}

inline Structure simple_cubic(double a = 1.0, int z = 6) {
  return Structure(Lattice(a * identity3()), {z}, {{0.0, 0.0, 0.0}});
}

}  // namespace gen
