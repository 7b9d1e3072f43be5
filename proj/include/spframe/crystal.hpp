#pragma once

// Crystal structures: lattice, fractional/Cartesian coordinates, rigid motions,
// space-group operations and orbit detection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "kernels.hpp"
#include "linalg.hpp"

namespace spframe {

constexpr double kMinLatticeVolume = 1e-8;
constexpr double kWrapGuard = 1e-12;

// Lattice vectors stored as the columns of L.
class Lattice {
 public:
  explicit Lattice(const Mat3& columns) : m_(columns) {
    for (const auto& row : m_)
      for (double x : row)
        if (!std::isfinite(x)) fail<InvalidLattice>("lattice has non-finite entries");
    inv_ = inverse(m_, kMinLatticeVolume);
  }

  static Lattice from_rows(const Mat3& rows) { return Lattice(transpose(rows)); }

  const Mat3& matrix() const { return m_; }
  const Mat3& inverse_matrix() const { return inv_; }
  Vec3 vector(int k) const { return column(m_, k); }
  double volume() const { return std::abs(det(m_)); }

  Vec3 frac_to_cart(const Vec3& f) const { return m_ * f; }
  Vec3 cart_to_frac(const Vec3& x) const { return inv_ * x; }

  // Distance between the lattice planes spanned by the two other vectors.
  double plane_spacing(int k) const {
    const Vec3 n = cross(vector((k + 1) % 3), vector((k + 2) % 3));
    return volume() / norm(n);
  }

 private:
  Mat3 m_;
  Mat3 inv_;
};

inline double wrap_frac(double f) {
  double w = f - std::floor(f);
  if (w >= 1.0 - kWrapGuard) w = 0.0;
  return w;
}

inline Vec3 wrap_frac(const Vec3& f) { return {wrap_frac(f[0]), wrap_frac(f[1]), wrap_frac(f[2])}; }

inline bool in_unit_cell(const Vec3& f) {
  for (double x : f)
    if (!(x >= 0.0 && x < 1.0)) return false;
  return true;
}

class Structure {
 public:
  Structure(Lattice lattice, std::vector<int> species, std::vector<Vec3> frac)
      : lattice_(std::move(lattice)), species_(std::move(species)), frac_(std::move(frac)) {
    if (species_.empty()) fail<InputError>("structure has no atoms");
    if (species_.size() != frac_.size())
      fail<InputError>("species and frac_coords differ in length (" + std::to_string(species_.size()) +
                       " vs " + std::to_string(frac_.size()) + ")");
    for (std::size_t i = 0; i < frac_.size(); ++i)
      if (!in_unit_cell(frac_[i]))
        fail<InputError>("fractional coordinate of atom " + std::to_string(i) + " outside [0,1)");
  }

  // Wraps the coordinates first.
  static Structure wrapped(Lattice lattice, std::vector<int> species, std::vector<Vec3> frac) {
    for (auto& f : frac) f = wrap_frac(f);
    return Structure(std::move(lattice), std::move(species), std::move(frac));
  }

  const Lattice& lattice() const { return lattice_; }
  const std::vector<int>& species() const { return species_; }
  const std::vector<Vec3>& frac() const { return frac_; }
  std::size_t size() const { return species_.size(); }
  Vec3 cart(std::size_t i) const { return lattice_.frac_to_cart(frac_[i]); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> x(size());
    for (std::size_t i = 0; i < size(); ++i) x[i] = cart(i);
    return x;
  }

  Structure permuted(const std::vector<std::size_t>& order) const {
    if (order.size() != size()) fail<ContractError>("permutation length differs from atom count");
    std::vector<int> sp;
    std::vector<Vec3> fr;
    for (std::size_t k : order) {
      sp.push_back(species_.at(k));
      fr.push_back(frac_.at(k));
    }
    return Structure(lattice_, std::move(sp), std::move(fr));
  }

 private:
  Lattice lattice_;
  std::vector<int> species_;
  std::vector<Vec3> frac_;
};

struct RigidMotion {
  Mat3 rotation = identity3();
  Vec3 translation{0.0, 0.0, 0.0};
};

inline void validate(const RigidMotion& g) {
  if (orthogonality_error(g.rotation) >= 1e-12 || std::abs(det(g.rotation) - 1.0) >= 1e-12)
    fail<ContractError>("rigid motion rotation is not in SO(3)");
}

struct SymmetryOp {
  IntMat3 w_rot{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 w_trans{0.0, 0.0, 0.0};
};

inline SymmetryOp identity_op() { return {}; }

// Q_g = L · W · L⁻¹.
inline Mat3 cartesian_rotation(const SymmetryOp& op, const Lattice& lattice) {
  return lattice.matrix() * to_real(op.w_rot) * lattice.inverse_matrix();
}

inline void validate(const SymmetryOp& op, const Lattice& lattice) {
  const int d = det(op.w_rot);
  if (d != 1 && d != -1) fail<InvalidOp>("symmetry op has |det(w_rot)| = " + std::to_string(std::abs(d)));
  for (double t : op.w_trans)
    if (!std::isfinite(t)) fail<InvalidOp>("symmetry op translation is not finite");
  const double err = orthogonality_error(cartesian_rotation(op, lattice));
  if (!(err < 1e-8))
    fail<InvalidOp>("symmetry op is not orthogonal in Cartesian form (error " + std::to_string(err) + ")");
}

inline Vec3 apply(const SymmetryOp& op, const Vec3& f) {
  const Vec3 r{op.w_rot[0][0] * f[0] + op.w_rot[0][1] * f[1] + op.w_rot[0][2] * f[2],
               op.w_rot[1][0] * f[0] + op.w_rot[1][1] * f[1] + op.w_rot[1][2] * f[2],
               op.w_rot[2][0] * f[0] + op.w_rot[2][1] * f[1] + op.w_rot[2][2] * f[2]};
  return r + op.w_trans;
}

inline SymmetryOp compose(const SymmetryOp& a, const SymmetryOp& b) {
  // a ∘ b: f ↦ Wa (Wb f + tb) + ta
  SymmetryOp out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      out.w_rot[r][c] = 0;
      for (int k = 0; k < 3; ++k) out.w_rot[r][c] += a.w_rot[r][k] * b.w_rot[k][c];
    }
  out.w_trans = spframe::apply(a, b.w_trans);
  return out;
}

inline Structure apply_rigid_motion(const Structure& s, const RigidMotion& g) {
  validate(g);
  const Lattice lattice(g.rotation * s.lattice().matrix());
  std::vector<Vec3> frac(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    frac[i] = lattice.cart_to_frac(g.rotation * s.cart(i) + g.translation);
  return Structure::wrapped(lattice, s.species(), std::move(frac));
}

inline Structure apply_symmetry_op(const Structure& s, const SymmetryOp& op) {
  validate(op, s.lattice());
  std::vector<Vec3> frac(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) frac[i] = spframe::apply(op, s.frac()[i]);
  return Structure::wrapped(s.lattice(), s.species(), std::move(frac));
}

// Fractional difference reduced to the nearest lattice image.
inline Vec3 min_image(const Vec3& df) {
  return {df[0] - std::round(df[0]), df[1] - std::round(df[1]), df[2] - std::round(df[2])};
}

inline double frac_distance(const Vec3& a, const Vec3& b) { return norm(min_image(b - a)); }

// Shortest Cartesian distance between atom i and any periodic image of atom j.
inline double min_image_distance(const Structure& s, std::size_t i, std::size_t j) {
  const Vec3 df = min_image(s.frac()[j] - s.frac()[i]);
  double best = INFINITY;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) {
        const Vec3 f{df[0] + a, df[1] + b, df[2] + c};
        best = std::min(best, norm(s.lattice().frac_to_cart(f)));
      }
  return best;
}

// Index of the atom sitting at fractional position f (within tol), or -1.
inline long find_atom(const Structure& s, const Vec3& f, double tol) {
  for (std::size_t j = 0; j < s.size(); ++j)
    if (frac_distance(f, s.frac()[j]) <= tol) return static_cast<long>(j);
  return -1;
}

// Partition of atom indices into symmetry orbits. Each orbit is sorted and
// orbits are ordered by their smallest member.
inline std::vector<std::vector<std::size_t>> orbits(const Structure& s, const std::vector<SymmetryOp>& ops,
                                                    double tol = 1e-5) {
  if (!(tol > 0)) fail<ContractError>("orbit tolerance must be positive");
  std::vector<std::size_t> parent(s.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t k = 0; k < ops.size(); ++k) {
    validate(ops[k], s.lattice());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const long j = find_atom(s, spframe::apply(ops[k], s.frac()[i]), tol);
      if (j < 0)
        fail<SymmetryViolation>("op " + std::to_string(k) + " maps atom " + std::to_string(i) +
                                " onto no atom");
      if (s.species()[static_cast<std::size_t>(j)] != s.species()[i])
        fail<SymmetryViolation>("op " + std::to_string(k) + " maps atom " + std::to_string(i) + " (Z=" +
                                std::to_string(s.species()[i]) + ") onto atom " + std::to_string(j) +
                                " (Z=" + std::to_string(s.species()[static_cast<std::size_t>(j)]) + ")");
      const std::size_t a = find(i), b = find(static_cast<std::size_t>(j));
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<std::vector<std::size_t>> out;
  std::vector<long> slot(s.size(), -1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t r = find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<long>(out.size());
      out.emplace_back();
    }
    out[static_cast<std::size_t>(slot[r])].push_back(i);
  }
  return out;
}

// Rotation from a raw (unnormalized) quaternion.
inline Mat3 rotation_from_quaternion(const std::array<double, 4>& q) {
  const auto m = kernels::quaternion_rows(q);
  return {{{m[0], m[1], m[2]}, {m[3], m[4], m[5]}, {m[6], m[7], m[8]}}};
}

// Uniform rotation: an isotropic Gaussian 4-vector is a uniformly distributed
// direction on S³.
inline RigidMotion random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, 4> q{};
  do {
    for (double& x : q) x = normal(rng);
  } while (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] < 1e-12);
  return {rotation_from_quaternion(q), {0.0, 0.0, 0.0}};
}

}  // namespace spframe
