#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "generators.hpp"

using namespace spframe;

TEST(Matmul, HandMultiplication) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {0, 1, 1, 0});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.data(), (std::vector<double>{2, 1, 4, 3}));
}

TEST(Matmul, IdentityAndZero) {
  std::mt19937_64 rng(1);
  const Tensor m = gen::tensor(rng, {3, 5});
  const Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(matmul(eye, m).data(), m.data());
  const Tensor z({4, 3});
  const Tensor zm = matmul(z, m);
  for (double x : zm.data()) EXPECT_EQ(x, 0.0);
}

TEST(Matmul, MatchesNaiveLoop) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 7, k = 1 + rng() % 7, n = 1 + rng() % 7;
    const Tensor a = gen::tensor(rng, {m, k}), b = gen::tensor(rng, {k, n});
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < k; ++q) s += a.at(i, q) * b.at(q, j);
        EXPECT_NEAR(c.at(i, j), s, 1e-13);
      }
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Elementwise, KnownValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  std::mt19937_64 rng(3);
  const Tensor v = gen::tensor(rng, {4, 3});
  EXPECT_EQ(hadamard(v, Tensor({4, 3}, 1.0)).data(), v.data());
  EXPECT_THROW(add(v, Tensor({3, 4})), DimensionError);
}

TEST(Linalg, DeterminantAndInverse) {
  const Mat3 m{{{2, 0, 0}, {0, 3, 0}, {0, 0, 4}}};
  EXPECT_EQ(det(m), 24.0);
  const Mat3 inv = inverse(m);
  EXPECT_NEAR(inv[1][1], 1.0 / 3.0, 1e-16);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Mat3 a = gen::lattice_matrix(rng);
    EXPECT_LT(max_abs_diff(a * inverse(a), identity3()), 1e-9);
  }
  const Mat3 singular{{{1, 2, 3}, {2, 4, 6}, {0, 0, 1}}};
  EXPECT_THROW(inverse(singular, 1e-12), InvalidLattice);
}

TEST(Linalg, SymmetricEigenReconstructs) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    Mat3 a = gen::lattice_matrix(rng);
    a = transpose(a) * a;
    const SymmetricEigen e = eigen_symmetric(a);
    EXPECT_GE(e.values[0], e.values[1]);
    EXPECT_GE(e.values[1], e.values[2]);
    EXPECT_LT(orthogonality_error(e.vectors), 1e-12);
    Mat3 d{};
    for (int k = 0; k < 3; ++k) d[k][k] = e.values[k];
    EXPECT_LT(max_abs_diff(e.vectors * d * transpose(e.vectors), a), 1e-10 * (1 + max_abs(a)));
  }
}

TEST(Linalg, QrPositiveDiagonal) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    const Mat3 a = gen::lattice_matrix(rng);
    const QRFactors f = qr_positive(a);
    EXPECT_LT(orthogonality_error(f.q), 1e-12);
    for (int k = 0; k < 3; ++k) EXPECT_GT(f.r[k][k], 0.0);
    EXPECT_EQ(f.r[1][0], 0.0);
    EXPECT_EQ(f.r[2][0], 0.0);
    EXPECT_EQ(f.r[2][1], 0.0);
    EXPECT_LT(max_abs_diff(f.q * f.r, a), 1e-12 * (1 + max_abs(a)));
  }
}

TEST(Linalg, PolarFactor) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    const Mat3 a = gen::lattice_matrix(rng, 1e3);
    const Mat3 u = polar_orthogonal(a);
    EXPECT_LT(orthogonality_error(u), 1e-12);
    // P = Uᵀ A must be symmetric positive definite.
    const Mat3 p = transpose(u) * a;
    EXPECT_LT(max_abs_diff(p, transpose(p)), 1e-9 * (1 + max_abs(a)));
    const SymmetricEigen e = eigen_symmetric(p);
    EXPECT_GT(e.values[2], 0.0);
  }
}

TEST(Dual, ProductRuleAndSqrt) {
  using D = Dual<2>;
  const D x = D::variable(3.0, 0), y = D::variable(2.0, 1);
  const D f = x * x * y + sqrt(x * y) / y;
  // ∂f/∂x = 2xy + ½(xy)^{-1/2}, ∂f/∂y = x² − ½ x^{1/2} y^{-3/2}
  EXPECT_NEAR(f.v, 18.0 + std::sqrt(6.0) / 2.0, 1e-14);
  EXPECT_NEAR(f.d[0], 12.0 + 0.5 / std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(f.d[1], 9.0 - 0.5 * std::sqrt(3.0) * std::pow(2.0, -1.5), 1e-12);
}

TEST(Dual, KernelJacobianMatchesFiniteDifference) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    std::array<double, 4> q;
    for (double& x : q) x = gen::uniform(rng, -2, 2);
    std::array<Dual<4>, 4> qd;
    for (int i = 0; i < 4; ++i) qd[i] = Dual<4>::variable(q[i], i);
    const auto jd = kernels::quaternion_rows(qd);
    for (int i = 0; i < 4; ++i) {
      auto qp = q, qm = q;
      qp[i] += 1e-6;
      qm[i] -= 1e-6;
      const auto fp = kernels::quaternion_rows(qp), fm = kernels::quaternion_rows(qm);
      for (int o = 0; o < 9; ++o) EXPECT_NEAR(jd[o].d[i], (fp[o] - fm[o]) / 2e-6, 1e-7);
    }
  }
}
