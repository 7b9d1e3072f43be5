#pragma once

// Small per-row kernels written once over a generic scalar. The double
// instantiation produces values; the Dual instantiation produces the exact
// Jacobian used by row_map's backward pass.

#include <array>
#include <cmath>

#include "linalg.hpp"

namespace spframe::kernels {

// Normalized quaternion (a, b, c, d) to a rotation matrix, flattened row-major.
template <class S>
std::array<S, 9> quaternion_rows(const std::array<S, 4>& q) {
  using std::sqrt;
  const S s = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  const S a = q[0] / s, b = q[1] / s, c = q[2] / s, d = q[3] / s;
  return {a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d),         2.0 * (b * d + a * c),
          2.0 * (b * c + a * d),         a * a - b * b + c * c - d * d, 2.0 * (c * d - a * b),
          2.0 * (b * d - a * c),         2.0 * (c * d + a * b),         a * a - b * b - c * c + d * d};
}

// Rows (v̄₁, v̄₂, v̄₁×v̄₂) from the concatenation (v₁, v₂).
template <class S>
std::array<S, 9> gram_schmidt_rows(const std::array<S, 6>& v) {
  const Vec3T<S> v1{v[0], v[1], v[2]};
  Vec3T<S> w{v[3], v[4], v[5]};
  const S inv1 = 1.0 / norm(v1);
  const Vec3T<S> e1{v1[0] * inv1, v1[1] * inv1, v1[2] * inv1};
  for (int pass = 0; pass < 2; ++pass) {
    const S p = dot(e1, w);
    w = {w[0] - p * e1[0], w[1] - p * e1[1], w[2] - p * e1[2]};
  }
  const S inv2 = 1.0 / norm(w);
  const Vec3T<S> e2{w[0] * inv2, w[1] * inv2, w[2] * inv2};
  const Vec3T<S> e3 = cross(e1, e2);
  return {e1[0], e1[1], e1[2], e2[0], e2[1], e2[2], e3[0], e3[1], e3[2]};
}

// Real spherical harmonics up to degree 2 of a unit vector:
// [Y₀ | Y₁ (3) | Y₂ (5)] with Y₀ = 1, Y₁ = u and |Y₂| = 1 on the sphere.
template <class S>
std::array<S, 9> harmonics_rows(const std::array<S, 3>& u) {
  const double r3 = std::sqrt(3.0);
  const S& x = u[0];
  const S& y = u[1];
  const S& z = u[2];
  return {S(1.0),
          x,
          y,
          z,
          r3 * (x * y),
          r3 * (y * z),
          0.5 * (3.0 * (z * z) - 1.0),
          r3 * (x * z),
          (0.5 * r3) * (x * x - y * y)};
}

// Input (ê, F) with F row-major; canonicalizes ê·Fᵀ and embeds it.
template <class S>
std::array<S, 9> canonical_harmonics_rows(const std::array<S, 12>& in) {
  std::array<S, 3> u{};
  for (int r = 0; r < 3; ++r) u[r] = in[0] * in[3 + 3 * r] + in[1] * in[4 + 3 * r] + in[2] * in[5 + 3 * r];
  return harmonics_rows(u);
}

// Row-major product F·G of a variable F with a fixed G.
template <class S>
std::array<S, 9> right_multiply_rows(const std::array<S, 9>& f, const Mat3& g) {
  std::array<S, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out[3 * r + c] = f[3 * r] * g[0][c] + f[3 * r + 1] * g[1][c] + f[3 * r + 2] * g[2][c];
  return out;
}

}  // namespace spframe::kernels
