#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "convcaps/capsule.hpp"
#include "convcaps/reference.hpp"

using namespace convcaps;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (i64 i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

double norm_of(const double* p, i64 n) {
    double acc = 0;
    for (i64 i = 0; i < n; ++i) acc += p[i] * p[i];
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("squash maps zero to zero and norms to n^2/(1+n^2)") {
    Tensor<double> zero(Shape{4});
    Tensor<double> z = squash(zero);
    for (int i = 0; i < 4; ++i) CHECK(z.data()[i] == 0.0);

    Tensor<double> unit(Shape{2}, std::vector<double>{1.0, 0.0});
    CHECK(norm_of(squash(unit).data(), 2) == doctest::Approx(0.5).epsilon(1e-12));

    Tensor<double> three(Shape{3}, std::vector<double>{3.0, 0.0, 0.0});
    CHECK(norm_of(squash(three).data(), 3) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("squash keeps direction and stays below unit norm") {
    Rng rng(2);
    Tensor<double> s = random_tensor<double>({50, 6}, rng, -4, 4);
    Tensor<double> v = squash(s);
    for (int r = 0; r < 50; ++r) {
        const double n = norm_of(v.data() + r * 6, 6);
        CHECK(n < 1.0);
        // parallel: cross ratios match
        const double sn = norm_of(s.data() + r * 6, 6);
        for (int a = 0; a < 6; ++a)
            CHECK(v.data()[r * 6 + a] ==
                  doctest::Approx(s.data()[r * 6 + a] * sn / (1 + sn * sn)).epsilon(1e-9));
    }
}

TEST_CASE("squash gradients match finite differences") {
    Rng rng(3);
    Tensor<double> s = random_tensor<double>({5, 4}, rng, -2, 2);
    s.set_requires_grad(true);
    Tensor<double> probe = random_tensor<double>({5, 4}, rng);
    const double err =
        grad_check<double>([&] { return sum(mul(squash(s), probe)); }, s, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("primary caps splits channels into squashed pose vectors") {
    Tensor<double> zero(Shape{2, 2, 2, 8});
    CapsuleMap<double> zc = primary_caps(zero, 2);
    CHECK(zc.poses.shape() == Shape{2, 2, 2, 2, 4});
    for (i64 i = 0; i < zc.poses.size(); ++i) CHECK(zc.poses.data()[i] == 0.0);

    Rng rng(4);
    Tensor<double> feats = random_tensor<double>({2, 2, 2, 128}, rng, -3, 3);
    CapsuleMap<double> caps = primary_caps(feats, 8);
    CHECK(caps.poses.shape() == Shape{2, 2, 2, 8, 16});
    CHECK(caps.types() == 8);
    CHECK(caps.pose_dim() == 16);
    for (i64 r = 0; r < caps.poses.size() / 16; ++r)
        CHECK(norm_of(caps.poses.data() + r * 16, 16) < 1.0);

    CHECK_THROWS_AS(primary_caps(feats, 7), usage_error);
}

TEST_CASE("routing a single vote to a single type is squash with full coupling") {
    Rng rng(5);
    Tensor<double> votes = random_tensor<double>({1, 1, 4}, rng, -2, 2);
    for (int iters : {1, 3, 5}) {
        auto [poses, couplings] = dynamic_routing(votes, iters);
        CHECK(couplings.item() == 1.0);
        Tensor<double> direct = squash(reshape(votes, {4}));
        for (int a = 0; a < 4; ++a)
            CHECK(poses.data()[a] == doctest::Approx(direct.data()[a]).epsilon(1e-12));
    }
}

TEST_CASE("one routing iteration leaves couplings exactly uniform") {
    Rng rng(6);
    const i64 J = 8;
    Tensor<double> votes = random_tensor<double>({5, J, 3}, rng);
    auto [poses, couplings] = dynamic_routing(votes, 1);
    for (i64 i = 0; i < couplings.size(); ++i)
        CHECK(couplings.data()[i] == 1.0 / static_cast<double>(J));  // bit-exact
}

TEST_CASE("agreeing votes win coupling mass after three iterations") {
    // Vote 0 points along +x like output 0 will; vote 1 along +y. After the
    // agreement updates each vote couples harder to the type it reinforces.
    Tensor<double> votes(Shape{2, 2, 2},
                         std::vector<double>{
                             2.0, 0.0,  /* vote 0 -> type 0 */ 0.1, 0.1,
                             0.1, 0.1, /* vote 1 -> type 1 */ 0.0, 2.0,
                         });
    auto [poses, couplings] = dynamic_routing(votes, 3);
    const double c00 = couplings.data()[0], c01 = couplings.data()[1];
    const double c10 = couplings.data()[2], c11 = couplings.data()[3];
    CHECK(c00 > c01);
    CHECK(c11 > c10);

    // Independent slow-path unroll agrees bit-for-bit tolerances aside.
    std::vector<double> ref_poses(4), ref_c(4);
    reference::route_votes(2, 2, 2, 3, votes.data(), ref_poses.data(), ref_c.data());
    for (int i = 0; i < 4; ++i) {
        CHECK(poses.data()[i] == doctest::Approx(ref_poses[i]).epsilon(1e-12));
        CHECK(couplings.data()[i] == doctest::Approx(ref_c[i]).epsilon(1e-12));
    }
}

TEST_CASE("coupling rows sum to one at any iteration count") {
    Rng rng(7);
    Tensor<double> votes = random_tensor<double>({12, 5, 3}, rng, -2, 2);
    for (int iters = 1; iters <= 4; ++iters) {
        auto [poses, couplings] = dynamic_routing(votes, iters);
        for (i64 n = 0; n < 12; ++n) {
            double s = 0;
            for (i64 j = 0; j < 5; ++j) {
                const double c = couplings.data()[n * 5 + j];
                CHECK(c >= 0.0);
                CHECK(c <= 1.0);
                s += c;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("routing depends only on inner products: rotation equivariance") {
    Rng rng(8);
    const i64 N = 6, J = 3, A = 2;
    Tensor<double> votes = random_tensor<double>({N, J, A}, rng, -2, 2);
    const double th = 0.7;
    const double R[2][2] = {{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}};
    Tensor<double> rotated(Shape{N, J, A});
    for (i64 r = 0; r < N * J; ++r) {
        const double x = votes.data()[r * 2], y = votes.data()[r * 2 + 1];
        rotated.data()[r * 2] = R[0][0] * x + R[0][1] * y;
        rotated.data()[r * 2 + 1] = R[1][0] * x + R[1][1] * y;
    }
    auto [poses, couplings] = dynamic_routing(votes, 3);
    auto [rposes, rcouplings] = dynamic_routing(rotated, 3);
    for (i64 i = 0; i < couplings.size(); ++i)
        CHECK(rcouplings.data()[i] == doctest::Approx(couplings.data()[i]).epsilon(1e-6));
    for (i64 j = 0; j < J; ++j) {
        const double x = poses.data()[j * 2], y = poses.data()[j * 2 + 1];
        CHECK(rposes.data()[j * 2] == doctest::Approx(R[0][0] * x + R[0][1] * y).epsilon(1e-6));
        CHECK(rposes.data()[j * 2 + 1] ==
              doctest::Approx(R[1][0] * x + R[1][1] * y).epsilon(1e-6));
    }
}

TEST_CASE("routing gradients flow through the unrolled loop") {
    Rng rng(9);
    Tensor<double> votes = random_tensor<double>({4, 3, 2}, rng, -1.5, 1.5);
    votes.set_requires_grad(true);
    Tensor<double> probe = random_tensor<double>({3, 2}, rng);
    const double err = grad_check<double>(
        [&] {
            auto [poses, couplings] = dynamic_routing(votes, 3);
            return sum(mul(poses, probe));
        },
        votes, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("conv_capsule on all-zero input emits zero poses and uniform couplings") {
    Tensor<double> zero(Shape{4, 4, 4, 2, 3});
    CapsuleMap<double> in{zero};
    Rng rng(10);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 2, 4, 3, 5}, rng);
    auto res = conv_capsule(in, w, ConvSpec::make(3, 2), 3);
    CHECK(res.out.poses.shape() == Shape{2, 2, 2, 4, 5});
    for (i64 i = 0; i < res.out.poses.size(); ++i) CHECK(res.out.poses.data()[i] == 0.0);
    for (i64 i = 0; i < res.couplings.size(); ++i)
        CHECK(res.couplings.data()[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("conv_capsule shape chain: stride 2 halves the capsule grid") {
    Rng rng(11);
    Tensor<float> poses = random_tensor<float>({8, 8, 8, 8, 16}, rng, -0.3, 0.3);
    CapsuleMap<float> in{poses};
    Tensor<float> w = random_tensor<float>({3, 3, 3, 8, 8, 16, 16}, rng, -0.1, 0.1);
    auto res = conv_capsule(in, w, ConvSpec::make(3, 2), 3);
    CHECK(res.out.poses.shape() == Shape{4, 4, 4, 8, 16});
    CHECK(res.couplings.shape() == Shape{4, 4, 4, 27 * 8, 8});
}

TEST_CASE("conv_capsule with k=1 identity weight is voxelwise squash") {
    Rng rng(12);
    Tensor<double> poses = random_tensor<double>({1, 1, 1, 1, 4}, rng, -2, 2);
    CapsuleMap<double> in{poses};
    Tensor<double> w(Shape{1, 1, 1, 1, 1, 4, 4});
    for (int a = 0; a < 4; ++a) w.data()[a * 4 + a] = 1.0;
    auto res = conv_capsule(in, w, ConvSpec::make(1), 3);
    Tensor<double> direct = squash(poses);
    for (i64 i = 0; i < 4; ++i)
        CHECK(res.out.poses.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
    CHECK(res.couplings.item() == 1.0);
}

TEST_CASE("conv_capsule agrees with the per-voxel routing reference") {
    Rng rng(13);
    const i64 X = 3, Tin = 2, Ain = 3, Tout = 3, Aout = 2;
    const int k = 3, stride = 2;
    Tensor<double> poses = random_tensor<double>({X, X, X, Tin, Ain}, rng);
    Tensor<double> w = random_tensor<double>({k, k, k, Tin, Tout, Ain, Aout}, rng);
    auto res = conv_capsule(CapsuleMap<double>{poses}, w, ConvSpec::make(k, stride), 3);

    const i64 Xo = 2, N = k * k * k * Tin;
    std::vector<double> votes(static_cast<size_t>(N * Tout * Aout));
    std::vector<double> ref_poses(static_cast<size_t>(Tout * Aout));
    std::vector<double> ref_c(static_cast<size_t>(N * Tout));
    for (i64 xo = 0; xo < Xo; ++xo)
        for (i64 yo = 0; yo < Xo; ++yo)
            for (i64 zo = 0; zo < Xo; ++zo) {
                // build votes independently of the library's gather/transform
                for (int kx = 0; kx < k; ++kx)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kz = 0; kz < k; ++kz)
                            for (i64 t = 0; t < Tin; ++t) {
                                const i64 n = ((kx * k + ky) * k + kz) * Tin + t;
                                const i64 ix = xo * stride + kx - 1;
                                const i64 iy = yo * stride + ky - 1;
                                const i64 iz = zo * stride + kz - 1;
                                const bool inside = ix >= 0 && ix < X && iy >= 0 && iy < X &&
                                                    iz >= 0 && iz < X;
                                for (i64 j = 0; j < Tout; ++j)
                                    for (i64 ao = 0; ao < Aout; ++ao) {
                                        double acc = 0;
                                        if (inside)
                                            for (i64 ai = 0; ai < Ain; ++ai)
                                                acc += poses.data()[(((ix * X + iy) * X + iz) *
                                                                         Tin +
                                                                     t) *
                                                                        Ain +
                                                                    ai] *
                                                       w.data()[((((n)*Tout + j) * Ain + ai) *
                                                                 Aout) +
                                                                ao];
                                        votes[static_cast<size_t>((n * Tout + j) * Aout + ao)] =
                                            acc;
                                    }
                            }
                reference::route_votes(N, Tout, Aout, 3, votes.data(), ref_poses.data(),
                                       ref_c.data());
                const i64 vox = (xo * Xo + yo) * Xo + zo;
                for (i64 i = 0; i < Tout * Aout; ++i)
                    CHECK(res.out.poses.data()[vox * Tout * Aout + i] ==
                          doctest::Approx(ref_poses[static_cast<size_t>(i)]).epsilon(1e-12));
                for (i64 i = 0; i < N * Tout; ++i)
                    CHECK(res.couplings.data()[vox * N * Tout + i] ==
                          doctest::Approx(ref_c[static_cast<size_t>(i)]).epsilon(1e-12));
            }
}

TEST_CASE("conv_capsule output poses stay strictly below unit norm") {
    Rng rng(14);
    Tensor<double> poses = random_tensor<double>({4, 4, 4, 3, 4}, rng, -1, 1);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 3, 2, 4, 4}, rng, -1, 1);
    auto res = conv_capsule(CapsuleMap<double>{poses}, w, ConvSpec::make(3), 3);
    const i64 A = 4;
    for (i64 r = 0; r < res.out.poses.size() / A; ++r)
        CHECK(norm_of(res.out.poses.data() + r * A, A) < 1.0 - 1e-9);
}

TEST_CASE("conv_capsule is deterministic") {
    Rng rng(15);
    Tensor<double> poses = random_tensor<double>({4, 4, 4, 2, 3}, rng);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 2, 2, 3, 3}, rng);
    auto a = conv_capsule(CapsuleMap<double>{poses}, w, ConvSpec::make(3, 2), 3);
    auto b = conv_capsule(CapsuleMap<double>{poses}, w, ConvSpec::make(3, 2), 3);
    for (i64 i = 0; i < a.out.poses.size(); ++i)
        CHECK(a.out.poses.data()[i] == b.out.poses.data()[i]);
    for (i64 i = 0; i < a.couplings.size(); ++i)
        CHECK(a.couplings.data()[i] == b.couplings.data()[i]);
}

TEST_CASE("conv_capsule gradients match finite differences") {
    Rng rng(16);
    Tensor<double> poses = random_tensor<double>({2, 2, 2, 2, 2}, rng, -1, 1);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 2, 2, 2, 2}, rng, -1, 1);
    poses.set_requires_grad(true);
    w.set_requires_grad(true);
    Tensor<double> probe = random_tensor<double>({1, 1, 1, 2, 2}, rng);
    const double err = grad_check<double>(
        [&] {
            auto res = conv_capsule(CapsuleMap<double>{poses}, w, ConvSpec::make(3, 2), 2);
            return sum(mul(res.out.poses, probe));
        },
        {poses, w}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("capsule_length is the voxelwise pose norm") {
    Tensor<double> poses(Shape{1, 1, 1, 2, 2}, std::vector<double>{0.3, 0.4, 0.0, 0.0});
    Tensor<double> len = capsule_length(CapsuleMap<double>{poses});
    CHECK(len.shape() == Shape{1, 1, 1, 2});
    CHECK(len.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(len.data()[1] == 0.0);
}

TEST_CASE("capsule layer rejects bad arguments") {
    Tensor<double> poses(Shape{2, 2, 2, 2, 3});
    Tensor<double> w(Shape{3, 3, 3, 2, 2, 3, 3});
    CHECK_THROWS_AS(conv_capsule(CapsuleMap<double>{poses}, w, ConvSpec::make(3), 0),
                    usage_error);
    Tensor<double> wrong_tin(Shape{3, 3, 3, 1, 2, 3, 3});
    CHECK_THROWS_AS(conv_capsule(CapsuleMap<double>{poses}, wrong_tin, ConvSpec::make(3), 3),
                    usage_error);
    Tensor<double> votes(Shape{2, 2});
    CHECK_THROWS_AS(dynamic_routing(votes, 3), usage_error);
}
