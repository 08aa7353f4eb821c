#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "convcaps/common.hpp"
#include "convcaps/kernels.hpp"
#include "convcaps/reference.hpp"

using namespace convcaps;

namespace {

std::vector<double> random_buf(size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
    std::vector<double> out(n);
    Rng rng(seed);
    for (auto& v : out) v = rng.uniform(lo, hi);
    return out;
}

double time_best_of(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const char* name, double par_ms, double ser_ms, double diff) {
    std::printf("%-12s  parallel %8.2f ms   serial %8.2f ms   speedup %5.2fx   max|diff| %g\n",
                name, par_ms, ser_ms, ser_ms / par_ms, diff);
}

void bench_conv() {
    const i64 X = 24, Y = 24, Z = 24, Cin = 8, Cout = 16;
    const int k = 3, stride = 1, dil = 1;
    const auto g = kernels::make_conv_geom(X, Y, Z, Cin, Cout, k, stride, stride, stride, dil,
                                           dil, dil);
    const auto in = random_buf(static_cast<size_t>(g.in_voxels() * Cin), 1);
    const auto w = random_buf(static_cast<size_t>(k * k * k * Cin * Cout), 2, -0.2, 0.2);
    const auto bias = random_buf(static_cast<size_t>(Cout), 3);
    std::vector<double> out_par(static_cast<size_t>(g.out_voxels() * Cout));
    std::vector<double> out_ser(out_par.size());

    const double par = time_best_of(
        3, [&] { kernels::conv3d_forward(g, in.data(), w.data(), bias.data(), out_par.data()); });
    const double ser = time_best_of(3, [&] {
        reference::conv3d(X, Y, Z, Cin, Cout, k, stride, dil, in.data(), w.data(), bias.data(),
                          out_ser.data());
    });
    report("conv3d", par, ser, max_abs_diff(out_par, out_ser));
}

void bench_upsample() {
    const i64 X = 48, Y = 48, Z = 48, C = 16;
    const auto in = random_buf(static_cast<size_t>(X * Y * Z * C), 4);
    std::vector<double> out_par(static_cast<size_t>(8 * X * Y * Z * C));
    std::vector<double> out_ser(out_par.size());

    const double par =
        time_best_of(5, [&] { kernels::upsample2x_forward(X, Y, Z, C, in.data(), out_par.data()); });
    const double ser =
        time_best_of(5, [&] { reference::upsample2x(X, Y, Z, C, in.data(), out_ser.data()); });
    report("upsample2x", par, ser, max_abs_diff(out_par, out_ser));
}

void bench_squash() {
    const i64 rows = 200000, A = 16;
    const auto in = random_buf(static_cast<size_t>(rows * A), 5, -3, 3);
    std::vector<double> out_par(in.size()), out_ser(in.size());

    const double par =
        time_best_of(5, [&] { kernels::squash_forward(rows, A, in.data(), out_par.data()); });
    const double ser = time_best_of(5, [&] {
        for (i64 r = 0; r < rows; ++r) reference::squash(A, in.data() + r * A, out_ser.data() + r * A);
    });
    report("squash", par, ser, max_abs_diff(out_par, out_ser));
}

void bench_routing() {
    // one routing pass over a 6^3 grid worth of positions
    const i64 V = 216, N = 27 * 8, J = 8, A = 16;
    const int iterations = 3;
    const auto votes = random_buf(static_cast<size_t>(V * N * J * A), 6, -0.5, 0.5);
    std::vector<double> poses_ser(static_cast<size_t>(V * J * A));
    std::vector<double> coup_ser(static_cast<size_t>(V * N * J));

    // parallel path: the routing recurrence built from the shipped kernels
    std::vector<double> c(static_cast<size_t>(V * N * J)), b(c.size());
    std::vector<double> s(static_cast<size_t>(V * J * A)), p(s.size());
    const double par = time_best_of(3, [&] {
        std::fill(b.begin(), b.end(), 0.0);
        for (int it = 0; it < iterations; ++it) {
            for (i64 v = 0; v < V; ++v)
                for (i64 n = 0; n < N; ++n) {
                    double mx = b[static_cast<size_t>((v * N + n) * J)];
                    for (i64 j = 1; j < J; ++j)
                        mx = std::max(mx, b[static_cast<size_t>((v * N + n) * J + j)]);
                    double denom = 0;
                    for (i64 j = 0; j < J; ++j)
                        denom += std::exp(b[static_cast<size_t>((v * N + n) * J + j)] - mx);
                    for (i64 j = 0; j < J; ++j)
                        c[static_cast<size_t>((v * N + n) * J + j)] =
                            std::exp(b[static_cast<size_t>((v * N + n) * J + j)] - mx) / denom;
                }
            kernels::contract_votes_forward(V, N, J, A, c.data(), votes.data(), s.data());
            kernels::squash_forward(V * J, A, s.data(), p.data());
            if (it + 1 < iterations) {
                std::vector<double> agree(c.size());
                kernels::agreement_forward(V, N, J, A, votes.data(), p.data(), agree.data());
                for (size_t i = 0; i < b.size(); ++i) b[i] += agree[i];
            }
        }
    });
    const double ser = time_best_of(3, [&] {
        for (i64 v = 0; v < V; ++v)
            reference::route_votes(N, J, A, iterations, votes.data() + v * N * J * A,
                                   poses_ser.data() + v * J * A, coup_ser.data() + v * N * J);
    });
    report("routing", par, ser, max_abs_diff(p, poses_ser));
}

}  // namespace

int main() {
    std::printf("kernel benchmark, %d worker thread(s)\n", max_threads());
    bench_conv();
    bench_upsample();
    bench_squash();
    bench_routing();
    return 0;
}
