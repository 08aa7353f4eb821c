#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "convcaps/conv.hpp"
#include "convcaps/reference.hpp"

using namespace convcaps;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (i64 i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("identity 1x1x1 kernel reproduces the input exactly") {
    Tensor<double> in(Shape{4, 4, 4, 1});
    in.data()[(2 * 4 + 2) * 4 + 2] = 1.0;  // single hot voxel
    Tensor<double> w(Shape{1, 1, 1, 1, 1}, std::vector<double>{1.0});
    Tensor<double> bias(Shape{1});
    Tensor<double> out = conv3d(in, w, bias, ConvSpec::make(1));
    REQUIRE(out.shape() == in.shape());
    for (i64 i = 0; i < in.size(); ++i) CHECK(out.data()[i] == in.data()[i]);
}

TEST_CASE("all-ones 3x3x3 kernel sums the whole 3x3x3 input at the center") {
    std::vector<double> vals(27);
    std::iota(vals.begin(), vals.end(), 1.0);  // 1..27
    Tensor<double> in(Shape{3, 3, 3, 1}, std::move(vals));
    Tensor<double> w(Shape{3, 3, 3, 1, 1}, std::vector<double>(27, 1.0));
    Tensor<double> bias(Shape{1});
    Tensor<double> out = conv3d(in, w, bias, ConvSpec::make(3));
    const double center = out.data()[((1 * 3 + 1) * 3 + 1)];
    CHECK(center == doctest::Approx(378.0).epsilon(1e-12));  // 27*28/2
}

TEST_CASE("stride-2 same padding halves each spatial extent") {
    Rng rng(5);
    Tensor<float> in = random_tensor<float>({32, 32, 32, 4}, rng);
    Tensor<float> w = random_tensor<float>({3, 3, 3, 4, 2}, rng);
    Tensor<float> bias = random_tensor<float>({2}, rng);
    Tensor<float> out = conv3d(in, w, bias, ConvSpec::make(3, 2));
    CHECK(out.shape() == Shape{16, 16, 16, 2});
}

TEST_CASE("output extent obeys ceil(in/stride) for many geometries") {
    for (i64 extent : {1, 2, 3, 5, 7, 8, 15, 16, 31, 32}) {
        for (int stride : {1, 2, 3}) {
            for (int k : {1, 3, 5}) {
                for (int dil : {1, 2, 3}) {
                    auto g = kernels::make_conv_geom(extent, extent, extent, 1, 1, k, stride,
                                                     stride, stride, dil, dil, dil);
                    const i64 want = (extent + stride - 1) / stride;
                    CHECK(g.Xo == want);
                    CHECK(g.Xo == reference::conv_out_extent(extent, stride));
                }
            }
        }
    }
}

TEST_CASE("convolution is linear in its input") {
    Rng rng(9);
    Tensor<double> x = random_tensor<double>({5, 4, 3, 2}, rng);
    Tensor<double> y = random_tensor<double>({5, 4, 3, 2}, rng);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 2, 3}, rng);
    Tensor<double> zero_bias(Shape{3});
    const ConvSpec spec = ConvSpec::make(3);
    const double alpha = 1.7, beta = -0.4;

    Tensor<double> mix = add(scale(x, alpha), scale(y, beta));
    Tensor<double> lhs = conv3d(mix, w, zero_bias, spec);
    Tensor<double> rhs = add(scale(conv3d(x, w, zero_bias, spec), alpha),
                             scale(conv3d(y, w, zero_bias, spec), beta));
    for (i64 i = 0; i < lhs.size(); ++i) {
        const double denom = std::max(std::abs(rhs.data()[i]), 1e-10);
        CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) / denom < 1e-10);
    }
}

TEST_CASE("parallel conv matches the naive reference over random geometries") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const i64 X = 1 + static_cast<i64>(rng.below(6));
        const i64 Y = 1 + static_cast<i64>(rng.below(6));
        const i64 Z = 1 + static_cast<i64>(rng.below(6));
        const i64 Cin = 1 + static_cast<i64>(rng.below(4));
        const i64 Cout = 1 + static_cast<i64>(rng.below(4));
        const int k = rng.below(2) ? 3 : (rng.below(2) ? 1 : 5);
        const int stride = 1 + static_cast<int>(rng.below(3));
        const int dil = 1 + static_cast<int>(rng.below(3));

        Tensor<double> in = random_tensor<double>({X, Y, Z, Cin}, rng);
        Tensor<double> w = random_tensor<double>({k, k, k, Cin, Cout}, rng);
        Tensor<double> bias = random_tensor<double>({Cout}, rng);
        Tensor<double> out = conv3d(in, w, bias, ConvSpec::make(k, stride, dil));

        std::vector<double> ref(static_cast<size_t>(out.size()));
        reference::conv3d(X, Y, Z, Cin, Cout, k, stride, dil, in.data(), w.data(), bias.data(),
                          ref.data());
        for (i64 i = 0; i < out.size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(33);
    Tensor<double> in = random_tensor<double>({4, 4, 4, 2}, rng);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 2, 2}, rng);
    Tensor<double> bias = random_tensor<double>({2}, rng);
    in.set_requires_grad(true);
    w.set_requires_grad(true);
    bias.set_requires_grad(true);
    Tensor<double> probe = random_tensor<double>({2, 2, 2, 2}, rng);  // stride-2 output shape

    const double err = grad_check<double>(
        [&] { return sum(mul(conv3d(in, w, bias, ConvSpec::make(3, 2)), probe)); },
        {in, w, bias}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("dilated conv gradients match finite differences") {
    Rng rng(34);
    Tensor<double> in = random_tensor<double>({5, 5, 5, 1}, rng);
    Tensor<double> w = random_tensor<double>({3, 3, 3, 1, 2}, rng);
    Tensor<double> bias = random_tensor<double>({2}, rng);
    in.set_requires_grad(true);
    w.set_requires_grad(true);
    bias.set_requires_grad(true);
    Tensor<double> probe = random_tensor<double>({5, 5, 5, 2}, rng);

    const double err = grad_check<double>(
        [&] { return sum(mul(conv3d(in, w, bias, ConvSpec::make(3, 1, 2)), probe)); },
        {in, w, bias}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("conv3d validates shapes and kernel parity") {
    Tensor<double> in(Shape{4, 4, 4, 2});
    Tensor<double> w(Shape{3, 3, 3, 2, 2});
    Tensor<double> bias(Shape{2});
    CHECK_THROWS_AS(conv3d(in, w, bias, ConvSpec::make(2)), usage_error);
    CHECK_THROWS_AS(conv3d(in, w, Tensor<double>(Shape{3}), ConvSpec::make(3)), usage_error);
    Tensor<double> wrong_cin(Shape{3, 3, 3, 1, 2});
    CHECK_THROWS_AS(conv3d(in, wrong_cin, bias, ConvSpec::make(3)), usage_error);
}

TEST_CASE("upsampling a constant volume stays constant") {
    Tensor<double> in(Shape{3, 2, 4, 2}, std::vector<double>(48, 3.25));
    Tensor<double> out = upsample3d(in, 2);
    CHECK(out.shape() == Shape{6, 4, 8, 2});
    for (i64 i = 0; i < out.size(); ++i) CHECK(out.data()[i] == doctest::Approx(3.25));
}

TEST_CASE("upsampling a single voxel replicates it") {
    Tensor<double> in(Shape{1, 1, 1, 1}, std::vector<double>{7.0});
    Tensor<double> out = upsample3d(in, 2);
    CHECK(out.shape() == Shape{2, 2, 2, 1});
    for (i64 i = 0; i < 8; ++i) CHECK(out.data()[i] == doctest::Approx(7.0));
}

TEST_CASE("upsampling [0,1] along one axis gives the quarter-sample ramp") {
    Tensor<double> in(Shape{2, 1, 1, 1}, std::vector<double>{0.0, 1.0});
    Tensor<double> out = upsample3d(in, 2);
    const double want[4] = {0.0, 0.25, 0.75, 1.0};
    for (int i = 0; i < 4; ++i)
        CHECK(out.data()[i * 2 * 2] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("parallel upsampling matches the naive reference") {
    Rng rng(55);
    Tensor<double> in = random_tensor<double>({3, 4, 2, 3}, rng);
    Tensor<double> out = upsample3d(in, 2);
    std::vector<double> ref(static_cast<size_t>(out.size()));
    reference::upsample2x(3, 4, 2, 3, in.data(), ref.data());
    for (i64 i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("upsample gradients match finite differences") {
    Rng rng(56);
    Tensor<double> in = random_tensor<double>({2, 3, 2, 2}, rng);
    in.set_requires_grad(true);
    Tensor<double> probe = random_tensor<double>({4, 6, 4, 2}, rng);
    const double err = grad_check<double>(
        [&] { return sum(mul(upsample3d(in, 2), probe)); }, in, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("only factor-2 upsampling is supported") {
    Tensor<double> in(Shape{2, 2, 2, 1});
    CHECK_THROWS_AS(upsample3d(in, 3), usage_error);
}
