#pragma once

// Frames are 3×3 rotations whose rows are the frame axes. A direction given as
// a row vector v is canonicalized as v·Fᵀ. Under a rotation Q of the input
// (column convention x ↦ Qx, L ↦ QL) an equivariant frame transforms as
// F ↦ F·Qᵀ, equivalently axes() ↦ Q·axes().

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "crystal.hpp"
#include "error.hpp"
#include "kernels.hpp"
#include "linalg.hpp"

namespace spframe {

constexpr double kFrameTol = 1e-10;
constexpr double kCollinearEps = 1e-6;
constexpr double kSpectralGap = 1e-8;

class Frame {
 public:
  Frame() : m_(identity3()) {}

  explicit Frame(const Mat3& m, double tol = kFrameTol) : m_(m) {
    const double orth = orthogonality_error(m_);
    const double d = det(m_);
    if (!(orth < tol) || !(std::abs(d - 1.0) < tol))
      fail<ContractError>("not a rotation: orthogonality error " + std::to_string(orth) + ", det " +
                          std::to_string(d));
  }

  static Frame identity() { return Frame(); }

  static Frame from_flat(const double* rows, double tol = kFrameTol) {
    return Frame({{{rows[0], rows[1], rows[2]}, {rows[3], rows[4], rows[5]}, {rows[6], rows[7], rows[8]}}},
                 tol);
  }

  const Mat3& matrix() const { return m_; }
  // Axes as columns (Fᵀ).
  Mat3 axes() const { return transpose(m_); }

  std::array<double, 9> flat() const {
    return {m_[0][0], m_[0][1], m_[0][2], m_[1][0], m_[1][1], m_[1][2], m_[2][0], m_[2][1], m_[2][2]};
  }

 private:
  Mat3 m_;
};

struct Quaternion {
  double a = 1.0, b = 0.0, c = 0.0, d = 0.0;

  double norm() const { return std::sqrt(a * a + b * b + c * c + d * d); }
  std::array<double, 4> components() const { return {a, b, c, d}; }
};

inline Frame quat_to_rotation(const Quaternion& q) {
  if (!(q.norm() > 1e-12)) fail<DegenerateQuaternion>("quaternion norm below 1e-12");
  return Frame(rotation_from_quaternion(q.components()));
}

enum class GlobalMethod { qr, polar, pca };

inline std::string to_string(GlobalMethod m) {
  switch (m) {
    case GlobalMethod::qr: return "qr";
    case GlobalMethod::polar: return "polar";
    case GlobalMethod::pca: return "pca";
  }
  return "?";
}

inline GlobalMethod parse_global_method(const std::string& s) {
  if (s == "qr") return GlobalMethod::qr;
  if (s == "polar") return GlobalMethod::polar;
  if (s == "pca") return GlobalMethod::pca;
  fail<InputError>("unknown global frame method '" + s + "' (expected qr, polar or pca)");
}

namespace detail {

// Flips the first column when the determinant is negative.
inline Mat3 fix_handedness(Mat3 q) {
  if (det(q) < 0)
    for (int r = 0; r < 3; ++r) q[r][0] = -q[r][0];
  return q;
}

}  // namespace detail

// PCA frame of a point set. The sign of each of the first two eigenvectors is
// fixed by the first point whose projection onto it is clearly nonzero, the
// third by the determinant. Projections are rotation invariant, so the
// result is equivariant. Returns the axes as columns; nullopt when the
// spectrum is degenerate or no projection resolves a sign.
inline std::optional<Mat3> pca_axes(std::vector<Vec3> points, bool center) {
  if (points.empty()) return std::nullopt;
  if (center) {
    Vec3 t{0, 0, 0};
    for (const auto& p : points) t = t + p;
    t = (1.0 / static_cast<double>(points.size())) * t;
    for (auto& p : points) p = p - t;
  }
  Mat3 cov{};
  double scale = 0.0;
  for (const auto& p : points) {
    scale = std::max(scale, norm(p));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cov[r][c] += p[r] * p[c];
  }
  const SymmetricEigen eig = eigen_symmetric(cov);
  if (!(eig.values[0] - eig.values[1] > kSpectralGap) || !(eig.values[1] - eig.values[2] > kSpectralGap))
    return std::nullopt;
  std::array<Vec3, 3> u{column(eig.vectors, 0), column(eig.vectors, 1), column(eig.vectors, 2)};
  const double tol = 1e-9 * std::max(scale, 1.0);
  for (int i = 0; i < 2; ++i) {
    double sign = 0.0;
    for (const auto& p : points) {
      const double proj = dot(p, u[i]);
      if (std::abs(proj) > tol) {
        sign = proj > 0 ? 1.0 : -1.0;
        break;
      }
    }
    if (sign == 0.0) return std::nullopt;
    u[i] = sign * u[i];
  }
  Mat3 axes = from_columns(u[0], u[1], u[2]);
  if (det(axes) < 0) axes = from_columns(u[0], u[1], -1.0 * u[2]);
  return axes;
}

inline Frame global_frame(const Lattice& lattice, GlobalMethod method) {
  const Mat3& l = lattice.matrix();
  switch (method) {
    case GlobalMethod::qr:
      return Frame(transpose(detail::fix_handedness(qr_positive(l).q)));
    case GlobalMethod::polar:
      return Frame(transpose(detail::fix_handedness(polar_orthogonal(l))));
    case GlobalMethod::pca: {
      const auto axes = pca_axes({lattice.vector(0), lattice.vector(1), lattice.vector(2)}, true);
      if (!axes) fail<DegenerateSpectrum>("lattice covariance spectrum is degenerate; use qr instead");
      return Frame(transpose(*axes));
    }
  }
  fail<ContractError>("unknown global frame method");
}

inline void check_not_collinear(const Vec3& v1, const Vec3& v2) {
  const double n1 = norm(v1);
  if (!(n1 > kCollinearEps)) fail<CollinearityError>("first vector has near-zero length");
  const Vec3 e1 = (1.0 / n1) * v1;
  const Vec3 r = v2 - dot(e1, v2) * e1;
  if (!(norm(r) > kCollinearEps)) fail<CollinearityError>("vectors are collinear");
}

inline bool collinear(const Vec3& v1, const Vec3& v2) {
  const double n1 = norm(v1);
  if (!(n1 > kCollinearEps)) return true;
  const Vec3 e1 = (1.0 / n1) * v1;
  return !(norm(v2 - dot(e1, v2) * e1) > kCollinearEps);
}

inline Frame gram_schmidt_frame(const Vec3& v1, const Vec3& v2) {
  check_not_collinear(v1, v2);
  const auto rows = kernels::gram_schmidt_rows<double>({v1[0], v1[1], v1[2], v2[0], v2[1], v2[2]});
  return Frame::from_flat(rows.data());
}

inline Frame compose_spframe(const Frame& f_inv, const Frame& f_global) {
  return Frame(f_inv.matrix() * f_global.matrix());
}

inline Vec3 canonicalize(const Vec3& v, const Frame& f) { return f.matrix() * v; }

inline std::vector<Vec3> canonicalize(const std::vector<Vec3>& vectors, const Frame& f) {
  std::vector<Vec3> out;
  out.reserve(vectors.size());
  for (const auto& v : vectors) out.push_back(canonicalize(v, f));
  return out;
}

struct SphericalHarmonics {
  double y0;
  Vec3 y1;
  std::array<double, 5> y2;
};

inline SphericalHarmonics spherical_harmonics(const Vec3& u) {
  if (!(std::abs(norm(u) - 1.0) <= 1e-8)) fail<ContractError>("spherical harmonics need a unit vector");
  const auto y = kernels::harmonics_rows<double>(u);
  return {y[0], {y[1], y[2], y[3]}, {y[4], y[5], y[6], y[7], y[8]}};
}

// Cosines between a canonicalized edge direction and the three canonicalized
// lattice vectors.
inline Vec3 angle_features(const Vec3& direction, const Frame& f, const Lattice& lattice,
                           const Frame& f_lattice) {
  const Vec3 d = canonicalize(direction, f);
  const double nd = norm(d);
  Vec3 out{};
  for (int k = 0; k < 3; ++k) {
    const Vec3 l = canonicalize(lattice.vector(k), f_lattice);
    out[k] = dot(d, l) / (nd * norm(l));
  }
  return out;
}

}  // namespace spframe
