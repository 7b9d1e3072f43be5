#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "generators.hpp"

using namespace spframe;

namespace {

const GlobalMethod kMethods[] = {GlobalMethod::qr, GlobalMethod::polar, GlobalMethod::pca};

bool is_rotation(const Mat3& m, double tol) {
  return orthogonality_error(m) < tol && std::abs(det(m) - 1.0) < tol;
}

}  // namespace

TEST(GlobalFrame, QrExamples) {
  EXPECT_EQ(global_frame(Lattice(identity3()), GlobalMethod::qr).matrix(), identity3());
  // Raw Q = diag(−1, 1, 1) has det −1; flipping its first column gives I.
  const Mat3 reflect{{{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  EXPECT_LT(max_abs_diff(global_frame(Lattice(reflect), GlobalMethod::qr).matrix(), identity3()), 1e-15);
  EXPECT_LT(max_abs_diff(global_frame(Lattice(reflect), GlobalMethod::polar).matrix(), identity3()), 1e-15);
}

TEST(GlobalFrame, PcaDegenerateCubicFails) {
  EXPECT_THROW(global_frame(Lattice(identity3()), GlobalMethod::pca), DegenerateSpectrum);
  EXPECT_THROW(global_frame(Lattice(3.5 * identity3()), GlobalMethod::pca), DegenerateSpectrum);
}

TEST(GlobalFrame, ParseMethod) {
  EXPECT_EQ(parse_global_method("polar"), GlobalMethod::polar);
  EXPECT_THROW(parse_global_method("svd"), InputError);
}

// Property: axes(F(Q·L)) = Q·axes(F(L)), every output a proper rotation.
TEST(GlobalFrame, EquivarianceProperty) {
  std::mt19937_64 rng(1);
  for (GlobalMethod method : kMethods) {
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const Mat3 l = method == GlobalMethod::pca ? gen::pca_lattice_matrix(rng) : gen::lattice_matrix(rng);
      const Mat3 q = gen::rotation(rng);
      const Frame f = global_frame(Lattice(l), method);
      const Frame fq = global_frame(Lattice(q * l), method);
      ASSERT_TRUE(is_rotation(f.matrix(), 1e-10));
      worst = std::max(worst, max_abs_diff(fq.axes(), q * f.axes()));
    }
    EXPECT_LT(worst, 1e-9) << to_string(method);
  }
}

TEST(Quaternion, WorkedExamples) {
  EXPECT_LT(max_abs_diff(quat_to_rotation({1, 0, 0, 0}).matrix(), identity3()), 1e-14);
  EXPECT_LT(max_abs_diff(quat_to_rotation({0, 0, 0, 1}).matrix(), Mat3{{{-1, 0, 0}, {0, -1, 0}, {0, 0, 1}}}), 1e-14);
  EXPECT_LT(max_abs_diff(quat_to_rotation({0.5, 0.5, 0.5, 0.5}).matrix(), Mat3{{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}}}),
            1e-14);
  EXPECT_THROW(quat_to_rotation({0, 0, 0, 0}), DegenerateQuaternion);
}

// Oracle: the rotation by angle θ about unit axis n is q = (cos θ/2, sin θ/2 · n).
TEST(Quaternion, AxisAngleOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const Vec3 n = gen::unit_vec3(rng);
    const double theta = gen::uniform(rng, -3.1, 3.1);
    const double s = std::sin(theta / 2);
    const Mat3 r = quat_to_rotation({std::cos(theta / 2), s * n[0], s * n[1], s * n[2]}).matrix();
    // Rodrigues: R = cos θ I + sin θ [n]× + (1 − cos θ) n nᵀ
    const Mat3 k{{{0, -n[2], n[1]}, {n[2], 0, -n[0]}, {-n[1], n[0], 0}}};
    Mat3 expected{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        expected[i][j] = (i == j ? std::cos(theta) : 0.0) + std::sin(theta) * k[i][j] +
                         (1 - std::cos(theta)) * n[i] * n[j];
    EXPECT_LT(max_abs_diff(r, expected), 1e-13);
  }
}

TEST(Quaternion, GaugeInvarianceProperty) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10000; ++t) {
    const Quaternion q = gen::quaternion(rng);
    const Mat3 r = quat_to_rotation(q).matrix();
    ASSERT_TRUE(is_rotation(r, 1e-12));
    for (double s : {-1.0, 0.5, 3.0, -1e-3, 1e3}) {
      const Mat3 rs = quat_to_rotation({s * q.a, s * q.b, s * q.c, s * q.d}).matrix();
      EXPECT_LT(max_abs_diff(rs, r), 1e-12);
    }
  }
}

TEST(GramSchmidt, Examples) {
  EXPECT_LT(max_abs_diff(gram_schmidt_frame({2, 0, 0}, {1, 1, 0}).matrix(), identity3()), 1e-15);
  EXPECT_THROW(gram_schmidt_frame({1, 0, 0}, {2, 0, 0}), CollinearityError);
  EXPECT_THROW(gram_schmidt_frame({0, 0, 0}, {0, 1, 0}), CollinearityError);
  EXPECT_TRUE(collinear({1, 0, 0}, {1, 1e-7, 0}));
  EXPECT_FALSE(collinear({1, 0, 0}, {1, 1e-5, 0}));
}

TEST(GramSchmidt, EquivarianceProperty) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 1000; ++t) {
    const Vec3 v1 = gen::vec3(rng), v2 = gen::vec3(rng);
    if (collinear(v1, v2)) continue;
    const Mat3 q = gen::rotation(rng);
    const Frame f = gram_schmidt_frame(v1, v2), fq = gram_schmidt_frame(q * v1, q * v2);
    EXPECT_LT(max_abs_diff(fq.axes(), q * f.axes()), 1e-10);
  }
}

TEST(Compose, IdentityAndClosure) {
  std::mt19937_64 rng(5);
  const Frame g(gen::rotation(rng));
  EXPECT_EQ(compose_spframe(Frame::identity(), g).matrix(), g.matrix());
  EXPECT_EQ(compose_spframe(g, Frame::identity()).matrix(), g.matrix());
  for (int t = 0; t < 1000; ++t) {
    const Frame c = compose_spframe(Frame(gen::rotation(rng)), Frame(gen::rotation(rng)));
    EXPECT_TRUE(is_rotation(c.matrix(), 1e-10));
  }
  EXPECT_THROW(Frame(Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, -1}}}), ContractError);
}

TEST(Canonicalize, IdentityAndIsometry) {
  std::mt19937_64 rng(6);
  const std::vector<Vec3> v{gen::vec3(rng), gen::vec3(rng), gen::vec3(rng)};
  EXPECT_EQ(canonicalize(v, Frame::identity()), v);
  const Frame f(gen::rotation(rng));
  const auto out = canonicalize(v, f);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(norm(out[i]), norm(v[i]), 1e-12);
}

// Property: rotating the vectors and the frame's axes together cancels.
// In row form this is (v·Qᵀ)·(F·Qᵀ)ᵀ = v·Fᵀ.
TEST(Canonicalize, CancellationProperty) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 1000; ++t) {
    const Vec3 v = gen::vec3(rng);
    const Mat3 q = gen::rotation(rng);
    const Frame f(gen::rotation(rng));
    const Frame fq(f.matrix() * transpose(q));
    EXPECT_LT(max_abs_diff(canonicalize(q * v, fq), canonicalize(v, f)), 1e-12);
  }
}

// Property: global-frame canonicalization of edge vectors is invariant
// under rigid motions of the whole system.
TEST(Canonicalize, RigidMotionInvariance) {
  std::mt19937_64 rng(8);
  for (GlobalMethod method : {GlobalMethod::qr, GlobalMethod::polar}) {
    for (int t = 0; t < 50; ++t) {
      const Structure s = gen::structure(rng);
      const RigidMotion m = gen::rigid_motion(rng);
      const Frame f = global_frame(s.lattice(), method);
      const Frame fm = global_frame(Lattice(m.rotation * s.lattice().matrix()), method);
      for (const Vec3& v : s.positions()) {
        const Vec3 d = v - s.cart(0);
        EXPECT_LT(max_abs_diff(canonicalize(m.rotation * d, fm), canonicalize(d, f)), 1e-10);
      }
    }
  }
}

TEST(Harmonics, KnownValuesAndConstantNorm) {
  const SphericalHarmonics z = spherical_harmonics({0, 0, 1});
  EXPECT_EQ(z.y0, 1.0);
  EXPECT_EQ(z.y1, (Vec3{0, 0, 1}));
  EXPECT_THROW(spherical_harmonics({0, 0, 2}), ContractError);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 1000; ++t) {
    const auto y = spherical_harmonics(gen::unit_vec3(rng)).y2;
    double n2 = 0.0;
    for (double c : y) n2 += c * c;
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-12);
  }
}

// Property: rotations act orthogonally on the degree-2 block, so pairwise
// inner products are preserved.
TEST(Harmonics, DegreeTwoPairwiseDots) {
  std::mt19937_64 rng(10);
  auto dot5 = [](const std::array<double, 5>& a, const std::array<double, 5>& b) {
    double s = 0.0;
    for (int k = 0; k < 5; ++k) s += a[k] * b[k];
    return s;
  };
  for (int t = 0; t < 1000; ++t) {
    const Vec3 u = gen::unit_vec3(rng), v = gen::unit_vec3(rng);
    const Mat3 q = gen::rotation(rng);
    EXPECT_NEAR(dot5(spherical_harmonics(u).y2, spherical_harmonics(v).y2),
                dot5(spherical_harmonics(q * u).y2, spherical_harmonics(q * v).y2), 1e-10);
    // Closed form: Y₂(u)·Y₂(v) = (3(u·v)² − 1)/2.
    EXPECT_NEAR(dot5(spherical_harmonics(u).y2, spherical_harmonics(v).y2),
                0.5 * (3 * dot(u, v) * dot(u, v) - 1), 1e-12);
  }
}

TEST(AngleFeatures, Examples) {
  const Lattice ortho(Mat3{{{3, 0, 0}, {0, 4, 0}, {0, 0, 5}}});
  const Vec3 c = angle_features({0, 1, 0}, Frame::identity(), ortho, Frame::identity());
  EXPECT_LT(max_abs_diff(c, Vec3{0, 1, 0}), 1e-15);

  const Mat3 cols = lattice_from_parameters(3.0, 3.5, 4.0, 1.2, 1.4, 1.9);
  const Lattice l(cols);
  const Vec3 along = angle_features((1.0 / norm(l.vector(0))) * l.vector(0), Frame::identity(), l, Frame::identity());
  EXPECT_NEAR(along[0], 1.0, 1e-15);
  EXPECT_NEAR(along[1], std::cos(1.9), 1e-12);
  EXPECT_NEAR(along[2], std::cos(1.4), 1e-12);
}

TEST(AngleFeatures, RigidMotionInvariance) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    const Lattice l(gen::lattice_matrix(rng, 100));
    const Vec3 d = gen::unit_vec3(rng), v1 = gen::vec3(rng), v2 = gen::vec3(rng);
    if (collinear(v1, v2)) continue;
    const Mat3 q = gen::rotation(rng);
    const Frame f = gram_schmidt_frame(v1, v2), fq = gram_schmidt_frame(q * v1, q * v2);
    const Frame fl = global_frame(l, GlobalMethod::qr);
    const Lattice lq(q * l.matrix());
    const Frame flq = global_frame(lq, GlobalMethod::qr);
    EXPECT_LT(max_abs_diff(angle_features(q * d, fq, lq, flq), angle_features(d, f, l, fl)), 1e-10);
  }
}
