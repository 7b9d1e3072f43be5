#pragma once

// Small fixed-size 3-vector / 3x3-matrix algebra. Everything is templated on the
// scalar so the same routines serve plain doubles and the forward-mode dual
// numbers used to differentiate per-row kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>

#include "error.hpp"

namespace spframe {

template <class S> using Vec3T = std::array<S, 3>;
// Row-major: m[r][c].
template <class S> using Mat3T = std::array<std::array<S, 3>, 3>;

using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;
using IntMat3 = std::array<std::array<int, 3>, 3>;

template <class S>
constexpr Vec3T<S> operator+(const Vec3T<S>& a, const Vec3T<S>& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

template <class S>
constexpr Vec3T<S> operator-(const Vec3T<S>& a, const Vec3T<S>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

template <class S>
constexpr Vec3T<S> operator*(double s, const Vec3T<S>& a) {
  return {s * a[0], s * a[1], s * a[2]};
}

template <class S>
constexpr S dot(const Vec3T<S>& a, const Vec3T<S>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <class S>
constexpr Vec3T<S> cross(const Vec3T<S>& a, const Vec3T<S>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

template <class S>
S norm(const Vec3T<S>& a) {
  using std::sqrt;
  return sqrt(dot(a, a));
}

template <class S>
Vec3T<S> scaled(const Vec3T<S>& a, const S& s) {
  return {a[0] * s, a[1] * s, a[2] * s};
}

inline Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

template <class S>
constexpr Mat3T<S> transpose(const Mat3T<S>& m) {
  Mat3T<S> t{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t[r][c] = m[c][r];
  return t;
}

template <class S>
constexpr Mat3T<S> operator*(const Mat3T<S>& a, const Mat3T<S>& b) {
  Mat3T<S> m{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      S acc = a[r][0] * b[0][c];
      acc = acc + a[r][1] * b[1][c];
      acc = acc + a[r][2] * b[2][c];
      m[r][c] = acc;
    }
  return m;
}

template <class S>
constexpr Vec3T<S> operator*(const Mat3T<S>& m, const Vec3T<S>& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

// Row vector times matrix: v·M.
template <class S>
constexpr Vec3T<S> row_times(const Vec3T<S>& v, const Mat3T<S>& m) {
  return {v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
          v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
          v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2]};
}

inline Mat3 operator-(const Mat3& a, const Mat3& b) {
  Mat3 m{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = a[r][c] - b[r][c];
  return m;
}

inline Mat3 operator*(double s, const Mat3& a) {
  Mat3 m{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = s * a[r][c];
  return m;
}

template <class S>
constexpr S det(const Mat3T<S>& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline int det(const IntMat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline Mat3 to_real(const IntMat3& m) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m[i][j];
  return r;
}

// Throws InvalidLattice when |det| <= min_abs_det.
inline Mat3 inverse(const Mat3& m, double min_abs_det = 0.0) {
  const double d = det(m);
  if (!(std::abs(d) > min_abs_det))
    fail<InvalidLattice>("matrix is singular (det = " + std::to_string(d) + ")");
  Mat3 inv{};
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
  return inv;
}

inline Vec3 column(const Mat3& m, int c) { return {m[0][c], m[1][c], m[2][c]}; }

inline Mat3 from_columns(const Vec3& a, const Vec3& b, const Vec3& c) {
  return {{{a[0], b[0], c[0]}, {a[1], b[1], c[1]}, {a[2], b[2], c[2]}}};
}

inline Mat3 from_rows(const Vec3& a, const Vec3& b, const Vec3& c) {
  return {{a, b, c}};
}

inline double max_abs(const Mat3& m) {
  double r = 0.0;
  for (const auto& row : m)
    for (double x : row) r = std::max(r, std::abs(x));
  return r;
}

inline double max_abs_diff(const Mat3& a, const Mat3& b) { return max_abs(a - b); }

inline double max_abs_diff(const Vec3& a, const Vec3& b) {
  return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

inline double frobenius(const Mat3& m) {
  double s = 0.0;
  for (const auto& row : m)
    for (double x : row) s += x * x;
  return std::sqrt(s);
}

// ‖MᵀM − I‖∞ (entrywise max).
inline double orthogonality_error(const Mat3& m) {
  return max_abs_diff(transpose(m) * m, identity3());
}

struct SymmetricEigen {
  std::array<double, 3> values;  // descending
  Mat3 vectors;                  // column k pairs with values[k]
};

// Cyclic Jacobi sweeps; converges to machine precision for 3x3 in a handful of
// sweeps.
inline SymmetricEigen eigen_symmetric(const Mat3& input) {
  Mat3 a = input;
  Mat3 v = identity3();
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2] + off;
    if (off <= 1e-34 * scale || off == 0.0) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x][x] > a[y][y]; });
  SymmetricEigen out{};
  for (int k = 0; k < 3; ++k) {
    out.values[k] = a[order[k]][order[k]];
    for (int r = 0; r < 3; ++r) out.vectors[r][k] = v[r][order[k]];
  }
  return out;
}

struct QRFactors {
  Mat3 q;
  Mat3 r;
};

// Gram-Schmidt with one reorthogonalization pass. Diagonal of R comes out
// strictly positive for an invertible input, which fixes the factorization
// uniquely.
inline QRFactors qr_positive(const Mat3& m) {
  std::array<Vec3, 3> q{};
  Mat3 r{};
  for (int j = 0; j < 3; ++j) {
    Vec3 v = column(m, j);
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < j; ++i) {
        const double proj = dot(q[i], v);
        r[i][j] += proj;
        v = v - proj * q[i];
      }
    const double len = norm(v);
    if (!(len > 0.0)) fail<InvalidLattice>("QR of a singular matrix");
    r[j][j] = len;
    q[j] = (1.0 / len) * v;
  }
  return {from_columns(q[0], q[1], q[2]), r};
}

// Orthogonal polar factor via scaled Newton iteration X ← ½(ζX + (ζX)⁻ᵀ).
inline Mat3 polar_orthogonal(const Mat3& m) {
  Mat3 x = m;
  for (int it = 0; it < 100; ++it) {
    const Mat3 inv_t = transpose(inverse(x));
    const double zeta = it < 12 ? std::sqrt(frobenius(inv_t) / frobenius(x)) : 1.0;
    Mat3 next{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) next[r][c] = 0.5 * (zeta * x[r][c] + inv_t[r][c] / zeta);
    const double delta = frobenius(next - x);
    x = next;
    if (delta <= 1e-15 * frobenius(x)) break;
  }
  return x;
}

}  // namespace spframe
