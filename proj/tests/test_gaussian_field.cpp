#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <filesystem>

#include "gsd/field/covariance.hpp"
#include "gsd/field/gaussian_cloud.hpp"
#include "gsd/field/rotation6d.hpp"
#include "gsd/field/sh.hpp"
#include "test_util.hpp"

using namespace gsd;
using gsd::test::fd_grad;
using gsd::test::random_tensor;
using gsd::test::rel_err;

namespace {

Rotation6D random_rotation6d(Rng& rng) {
    for (;;) {
        Rotation6D r{Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)),
                     Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2))};
        if (r.a1.norm() < 0.1) continue;
        const Vec3 b1 = r.a1.normalized();
        if ((r.a2 - b1.dot(r.a2) * b1).norm() < 0.1) continue;
        return r;
    }
}

}  // namespace

TEST(Rotation6D, IdentityInputGivesIdentityMatrix) {
    const Mat3 m = f_v2m(Vec3(1, 0, 0), Vec3(0, 1, 0));
    EXPECT_TRUE(m.isIdentity(0));  // exact
}

TEST(Rotation6D, NormalizationKillsScale) {
    const Mat3 m = f_v2m(Vec3(2, 0, 0), Vec3(0, 3, 0));
    EXPECT_TRUE(m.isIdentity(0));
}

TEST(Rotation6D, HandGramSchmidtOracle) {
    // b1 = N(0,1,0) = (0,1,0); w = (1,0,0) - 0*b1; b2 = (1,0,0);
    // b3 = b1 x b2 = (0,0,-1)
    const Mat3 m = f_v2m(Vec3(0, 1, 0), Vec3(1, 0, 0));
    EXPECT_EQ(m(0, 0), 0);
    EXPECT_EQ(m(1, 0), 1);
    EXPECT_EQ(m(0, 1), 1);
    EXPECT_EQ(m(2, 2), -1);
}

TEST(Rotation6D, DegenerateInputsRejected) {
    EXPECT_THROW(f_v2m(Vec3(0, 0, 0), Vec3(0, 1, 0)), RotationDegeneracyError);
    EXPECT_THROW(f_v2m(Vec3(1, 0, 0), Vec3(2, 0, 0)), RotationDegeneracyError);
    EXPECT_THROW(f_v2m(Vec3(1e-9, 0, 0), Vec3(0, 1, 0)), RotationDegeneracyError);
}

TEST(Rotation6D, OrthonormalityAndDeterminant) {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        const Mat3 m = f_v2m(random_rotation6d(rng));
        EXPECT_LT((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_NEAR(m.determinant(), 1.0, 1e-10);
    }
}

TEST(Rotation6D, ScaleInvariance) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Rotation6D r = random_rotation6d(rng);
        // powers of two scale the computation exactly
        const Mat3 base = f_v2m(r);
        const Mat3 scaled = f_v2m(Vec3(4 * r.a1), Vec3(0.5 * r.a2));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) EXPECT_EQ(base(i, j), scaled(i, j));
        // arbitrary positive scales agree to rounding
        const Mat3 odd = f_v2m(Vec3(rng.uniform(0.1, 5.0) * r.a1),
                               Vec3(rng.uniform(0.1, 5.0) * r.a2));
        EXPECT_LT((base - odd).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Rotation6D, ContinuityUnderPerturbation) {
    Rng rng(5);
    const double delta = 1e-6, lipschitz = 100.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Rotation6D r = random_rotation6d(rng);
        Rotation6D rp = r;
        for (int i = 0; i < 3; ++i) {
            rp.a1[i] += delta * rng.uniform(-1, 1);
            rp.a2[i] += delta * rng.uniform(-1, 1);
        }
        const double diff = (f_v2m(r) - f_v2m(rp)).norm();
        EXPECT_LT(diff, lipschitz * delta * std::sqrt(6.0));
    }
}

TEST(Rotation6D, RoundTripThroughMatrixEncoding) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const Mat3 m = f_v2m(random_rotation6d(rng));
        const Mat3 back = f_v2m(rot6d_from_matrix(m));
        EXPECT_LT((m - back).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Rotation6D, BatchedOpMatchesScalarPathAndFiniteDifferences) {
    Rng rng(7);
    Tensor r6 = Tensor::zeros({4, 6});
    {
        auto p = r6.mutable_data();
        for (int64_t i = 0; i < 4; ++i) {
            const Rotation6D r = random_rotation6d(rng);
            for (int j = 0; j < 3; ++j) {
                p[6 * i + j] = r.a1[j];
                p[6 * i + 3 + j] = r.a2[j];
            }
        }
    }
    r6.set_requires_grad(true);
    Tensor mats = rot6d_to_matrix(r6);
    for (int64_t i = 0; i < 4; ++i) {
        const Vec3 a1(r6.at(6 * i), r6.at(6 * i + 1), r6.at(6 * i + 2));
        const Vec3 a2(r6.at(6 * i + 3), r6.at(6 * i + 4), r6.at(6 * i + 5));
        const Mat3 m = f_v2m(a1, a2);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) EXPECT_EQ(mats.at(9 * i + 3 * a + b), m(a, b));
    }

    Tensor probe = random_tensor({4, 9}, rng);
    auto f = [&]() { return mean(mul(rot6d_to_matrix(r6), probe)).item(); };
    backward(mean(mul(rot6d_to_matrix(r6), probe)));
    for (int64_t i = 0; i < r6.numel(); ++i)
        EXPECT_LT(rel_err(r6.grad()[i], fd_grad(f, r6, i)), 1e-4) << "rot6d grad " << i;
}

TEST(Rotation6D, ComposeRotationsGradCheck) {
    Rng rng(8);
    Tensor a = Tensor::zeros({3, 9}), b = Tensor::zeros({3, 9});
    {
        auto pa = a.mutable_data();
        auto pb = b.mutable_data();
        for (int64_t i = 0; i < 3; ++i) {
            const Mat3 ma = f_v2m(random_rotation6d(rng));
            const Mat3 mb = f_v2m(random_rotation6d(rng));
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) {
                    pa[9 * i + 3 * r + c] = ma(r, c);
                    pb[9 * i + 3 * r + c] = mb(r, c);
                }
        }
    }
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor probe = random_tensor({3, 9}, rng);
    auto f = [&]() { return mean(mul(compose_rotations(a, b), probe)).item(); };
    backward(mean(mul(compose_rotations(a, b), probe)));
    for (Tensor* t : {&a, &b})
        for (int64_t i : gsd::test::sample_indices(t->numel(), 10, 9))
            EXPECT_LT(rel_err(t->grad()[i], fd_grad(f, *t, i)), 1e-4);

    // value check against Eigen product
    Tensor c = compose_rotations(a, b);
    for (int64_t i = 0; i < 3; ++i) {
        Mat3 ma, mb;
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 3; ++cc) {
                ma(r, cc) = a.at(9 * i + 3 * r + cc);
                mb(r, cc) = b.at(9 * i + 3 * r + cc);
            }
        const Mat3 mc = ma * mb;
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 3; ++cc)
                EXPECT_NEAR(c.at(9 * i + 3 * r + cc), mc(r, cc), 1e-14);
    }
}

TEST(Covariance, DiagonalCase) {
    const Mat3 sigma = build_covariance(Rotation6D{Vec3(1, 0, 0), Vec3(0, 1, 0)}, Vec3(1, 2, 3));
    EXPECT_DOUBLE_EQ(sigma(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(sigma(1, 1), 4.0);
    EXPECT_DOUBLE_EQ(sigma(2, 2), 9.0);
    EXPECT_DOUBLE_EQ(sigma(0, 1), 0.0);
}

TEST(Covariance, ZRotationOracle) {
    // 90-degree z rotation: columns (0,1,0) and (-1,0,0); explicit R S S^T R^T
    // product gives diag(4,1,1) for s=(1,2,1).
    const Mat3 sigma = build_covariance(Rotation6D{Vec3(0, 1, 0), Vec3(-1, 0, 0)}, Vec3(1, 2, 1));
    EXPECT_NEAR(sigma(0, 0), 4.0, 1e-14);
    EXPECT_NEAR(sigma(1, 1), 1.0, 1e-14);
    EXPECT_NEAR(sigma(2, 2), 1.0, 1e-14);
    EXPECT_NEAR(sigma(0, 1), 0.0, 1e-14);
}

TEST(Covariance, SymmetricPsdProperty) {
    Rng rng(10);
    for (int trial = 0; trial < 500; ++trial) {
        const Rotation6D r = random_rotation6d(rng);
        const Vec3 s(rng.uniform(0.01, 3), rng.uniform(0.01, 3), rng.uniform(0.01, 3));
        const Mat3 sigma = build_covariance(r, s);
        EXPECT_EQ((sigma - sigma.transpose()).cwiseAbs().maxCoeff(), 0.0);  // exactly symmetric
        Eigen::SelfAdjointEigenSolver<Mat3> eig(sigma);
        EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
    }
}

TEST(Covariance, RejectsNonPositiveScale) {
    EXPECT_THROW(build_covariance(Rotation6D{Vec3(1, 0, 0), Vec3(0, 1, 0)}, Vec3(1, 0, 1)),
                 ParamError);
}

TEST(Covariance, BatchedOpGradCheck) {
    Rng rng(11);
    const int64_t n = 3;
    Tensor rot = Tensor::zeros({n, 9});
    {
        auto p = rot.mutable_data();
        for (int64_t i = 0; i < n; ++i) {
            const Mat3 m = f_v2m(random_rotation6d(rng));
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) p[9 * i + 3 * r + c] = m(r, c);
        }
    }
    Tensor scales = random_tensor({n, 3}, rng, 0.2, 2.0);
    rot.set_requires_grad(true);
    scales.set_requires_grad(true);
    Tensor probe = random_tensor({n, 6}, rng);
    auto f = [&]() { return mean(mul(build_cov3d(rot, scales), probe)).item(); };
    backward(mean(mul(build_cov3d(rot, scales), probe)));
    for (Tensor* t : {&rot, &scales})
        for (int64_t i : gsd::test::sample_indices(t->numel(), 10, 12))
            EXPECT_LT(rel_err(t->grad()[i], fd_grad(f, *t, i)), 1e-4);

    // packed values match the scalar construction
    Tensor packed = build_cov3d(rot, scales);
    for (int64_t i = 0; i < n; ++i) {
        Mat3 m;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m(r, c) = rot.at(9 * i + 3 * r + c);
        const Vec3 s(scales.at(3 * i), scales.at(3 * i + 1), scales.at(3 * i + 2));
        const Mat3 sigma = m * s.cwiseProduct(s).asDiagonal() * m.transpose();
        EXPECT_NEAR(packed.at(6 * i + 0), sigma(0, 0), 1e-13);
        EXPECT_NEAR(packed.at(6 * i + 1), sigma(0, 1), 1e-13);
        EXPECT_NEAR(packed.at(6 * i + 2), sigma(0, 2), 1e-13);
        EXPECT_NEAR(packed.at(6 * i + 3), sigma(1, 1), 1e-13);
        EXPECT_NEAR(packed.at(6 * i + 4), sigma(1, 2), 1e-13);
        EXPECT_NEAR(packed.at(6 * i + 5), sigma(2, 2), 1e-13);
    }
}

TEST(SphericalHarmonics, DegreeZeroIsIsotropic) {
    const real coeffs[3] = {0.4, -0.2, 0.1};
    const Vec3 d1 = Vec3(1, 2, 3).normalized(), d2 = Vec3(-1, 0, 1).normalized();
    const Vec3 c1 = eval_sh_color_value(coeffs, d1, 0);
    const Vec3 c2 = eval_sh_color_value(coeffs, d2, 0);
    EXPECT_EQ(c1, c2);
    EXPECT_NEAR(c1[0], 0.4 * 0.28209479177387814 + 0.5, 1e-14);
}

TEST(SphericalHarmonics, ZeroCoefficientsGiveMidGray) {
    const real coeffs[12] = {0};
    const Vec3 c = eval_sh_color_value(coeffs, Vec3(0, 0, 1), 1);
    EXPECT_DOUBLE_EQ(c[0], 0.5);
    EXPECT_DOUBLE_EQ(c[1], 0.5);
    EXPECT_DOUBLE_EQ(c[2], 0.5);
}

TEST(SphericalHarmonics, DegreeOneSignFlipsWithDirection) {
    // tabulated degree-1 basis at +z / -z: (0, +-kSH1*z, 0) for the z term
    real coeffs[12] = {0};
    coeffs[0 * 4 + 2] = 0.3;  // red channel, basis index 2 (the z term)
    const Vec3 up = eval_sh_color_value(coeffs, Vec3(0, 0, 1), 1);
    const Vec3 down = eval_sh_color_value(coeffs, Vec3(0, 0, -1), 1);
    const double expected = 0.3 * 0.4886025119029199;
    EXPECT_NEAR(up[0] - 0.5, expected, 1e-14);
    EXPECT_NEAR(down[0] - 0.5, -expected, 1e-14);
    EXPECT_DOUBLE_EQ(up[1], 0.5);
}

TEST(SphericalHarmonics, ClampAbsorbsOutOfRange) {
    real coeffs[3] = {10.0, -10.0, 0.0};
    const Vec3 c = eval_sh_color_value(coeffs, Vec3(0, 0, 1), 0);
    EXPECT_DOUBLE_EQ(c[0], 1.0);
    EXPECT_DOUBLE_EQ(c[1], 0.0);
    EXPECT_DOUBLE_EQ(c[2], 0.5);
}

TEST(SphericalHarmonics, BatchedOpGradCheckAllDegrees) {
    for (int degree = 0; degree <= 3; ++degree) {
        Rng rng(20 + degree);
        const int64_t n = 3;
        const int k = sh_coeff_count(degree);
        // small coefficients keep colors inside (0,1): clamp stays inactive
        Tensor sh = random_tensor({n, 3 * k}, rng, -0.15, 0.15).set_requires_grad(true);
        Tensor pos = random_tensor({n, 3}, rng, 1.0, 2.0).set_requires_grad(true);
        const Vec3 cam(-1.0, -0.5, -2.0);
        Tensor probe = random_tensor({n, 3}, rng);
        auto f = [&]() { return mean(mul(eval_sh_color(sh, pos, cam, degree), probe)).item(); };
        backward(mean(mul(eval_sh_color(sh, pos, cam, degree), probe)));
        for (Tensor* t : {&sh, &pos})
            for (int64_t i : gsd::test::sample_indices(t->numel(), 8, 21))
                EXPECT_LT(rel_err(t->grad()[i], fd_grad(f, *t, i)), 1e-4)
                    << "degree " << degree;
    }
}

TEST(GaussianCloud, ActivationsRespectRanges) {
    Rng rng(30);
    GaussianCloud cloud = make_cloud(16, 1);
    for (auto& v : cloud.log_scales.mutable_data()) v = rng.uniform(-4, 2);
    for (auto& v : cloud.opacity_logits.mutable_data()) v = rng.uniform(-8, 8);
    Tensor s = cloud.activated_scales();
    Tensor o = cloud.activated_opacity();
    for (int64_t i = 0; i < s.numel(); ++i) EXPECT_GT(s.at(i), 0.0);
    for (int64_t i = 0; i < o.numel(); ++i) {
        EXPECT_GT(o.at(i), 0.0);
        EXPECT_LT(o.at(i), 1.0);
    }
    cloud.validate();
}

TEST(GaussianCloud, DegenerateRotationRowRejected) {
    GaussianCloud cloud = make_cloud(2, 0);
    auto r = cloud.rot6d.mutable_data();
    r[6 + 3] = 1;  // row 1: a2 = a1 = (1,0,0)
    r[6 + 4] = 0;
    try {
        cloud.validate();
        FAIL() << "expected RotationDegeneracyError";
    } catch (const RotationDegeneracyError& e) {
        EXPECT_NE(std::string(e.what()).find("parallel"), std::string::npos);
    }
}

TEST(GaussianCloud, PlyRoundTrip) {
    Rng rng(31);
    GaussianCloud cloud = make_cloud(10, 1);
    for (auto& v : cloud.positions.mutable_data()) v = rng.uniform(-2, 2);
    for (auto& v : cloud.log_scales.mutable_data()) v = rng.uniform(-3, 0);
    for (auto& v : cloud.opacity_logits.mutable_data()) v = rng.uniform(-2, 2);
    for (auto& v : cloud.sh_coeffs.mutable_data()) v = rng.uniform(-1, 1);

    const auto path = std::filesystem::temp_directory_path() / "gsd_cloud_test.ply";
    save_cloud_ply(path.string(), cloud);
    GaussianCloud loaded = load_cloud_ply(path.string());
    ASSERT_EQ(loaded.count(), cloud.count());
    EXPECT_EQ(loaded.sh_degree, 1);
    // storage is f32: agree to single precision
    for (int64_t i = 0; i < cloud.positions.numel(); ++i)
        EXPECT_NEAR(loaded.positions.at(i), cloud.positions.at(i), 1e-6);
    for (int64_t i = 0; i < cloud.sh_coeffs.numel(); ++i)
        EXPECT_NEAR(loaded.sh_coeffs.at(i), cloud.sh_coeffs.at(i), 1e-6);
    std::filesystem::remove(path);
}

TEST(GaussianCloud, XyzOnlyPlyImport) {
    const auto path = std::filesystem::temp_directory_path() / "gsd_xyz_test.ply";
    save_ply(path.string(), {"x", "y", "z"}, {{1, 2, 3}, {4, 5, 6}});
    GaussianCloud cloud = load_cloud_ply(path.string(), 2);
    ASSERT_EQ(cloud.count(), 2);
    EXPECT_DOUBLE_EQ(cloud.positions.at(4), 5.0);
    EXPECT_EQ(cloud.sh_degree, 2);
    // defaults: identity rotation rows
    EXPECT_DOUBLE_EQ(cloud.rot6d.at(0), 1.0);
    EXPECT_DOUBLE_EQ(cloud.rot6d.at(4), 1.0);
    std::filesystem::remove(path);
}
