#include "convcaps/reference.hpp"

#include <cmath>

namespace convcaps::reference {

i64 conv_out_extent(i64 in, int stride) {
    i64 out = in / stride;
    if (out * stride < in) ++out;
    return out;
}

namespace {
double at_or_zero(const double* in, i64 X, i64 Y, i64 Z, i64 C, i64 x, i64 y, i64 z, i64 c) {
    if (x < 0 || x >= X || y < 0 || y >= Y || z < 0 || z >= Z) return 0.0;
    return in[((x * Y + y) * Z + z) * C + c];
}
}  // namespace

void conv3d(i64 X, i64 Y, i64 Z, i64 Cin, i64 Cout, int k, int stride, int dilation,
            const double* in, const double* w, const double* bias, double* out) {
    const i64 Xo = conv_out_extent(X, stride);
    const i64 Yo = conv_out_extent(Y, stride);
    const i64 Zo = conv_out_extent(Z, stride);
    const int half = (k - 1) / 2;
    for (i64 xo = 0; xo < Xo; ++xo)
        for (i64 yo = 0; yo < Yo; ++yo)
            for (i64 zo = 0; zo < Zo; ++zo)
                for (i64 co = 0; co < Cout; ++co) {
                    double acc = bias ? bias[co] : 0.0;
                    for (int kx = 0; kx < k; ++kx)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kz = 0; kz < k; ++kz)
                                for (i64 ci = 0; ci < Cin; ++ci) {
                                    const double v = at_or_zero(
                                        in, X, Y, Z, Cin, xo * stride + (kx - half) * dilation,
                                        yo * stride + (ky - half) * dilation,
                                        zo * stride + (kz - half) * dilation, ci);
                                    acc += v * w[(((static_cast<i64>(kx) * k + ky) * k + kz) *
                                                      Cin +
                                                  ci) *
                                                     Cout +
                                                 co];
                                }
                    out[((xo * Yo + yo) * Zo + zo) * Cout + co] = acc;
                }
}

void upsample2x(i64 X, i64 Y, i64 Z, i64 C, const double* in, double* out) {
    const i64 Xo = 2 * X, Yo = 2 * Y, Zo = 2 * Z;
    for (i64 ox = 0; ox < Xo; ++ox)
        for (i64 oy = 0; oy < Yo; ++oy)
            for (i64 oz = 0; oz < Zo; ++oz)
                for (i64 c = 0; c < C; ++c) {
                    const double fx = (ox + 0.5) / 2.0 - 0.5;
                    const double fy = (oy + 0.5) / 2.0 - 0.5;
                    const double fz = (oz + 0.5) / 2.0 - 0.5;
                    double acc = 0.0;
                    for (int a = 0; a <= 1; ++a)
                        for (int b = 0; b <= 1; ++b)
                            for (int d = 0; d <= 1; ++d) {
                                const i64 x0 = static_cast<i64>(std::floor(fx)) + a;
                                const i64 y0 = static_cast<i64>(std::floor(fy)) + b;
                                const i64 z0 = static_cast<i64>(std::floor(fz)) + d;
                                const double wx =
                                    a == 0 ? 1.0 - (fx - std::floor(fx)) : fx - std::floor(fx);
                                const double wy =
                                    b == 0 ? 1.0 - (fy - std::floor(fy)) : fy - std::floor(fy);
                                const double wz =
                                    d == 0 ? 1.0 - (fz - std::floor(fz)) : fz - std::floor(fz);
                                const i64 xc = x0 < 0 ? 0 : (x0 >= X ? X - 1 : x0);
                                const i64 yc = y0 < 0 ? 0 : (y0 >= Y ? Y - 1 : y0);
                                const i64 zc = z0 < 0 ? 0 : (z0 >= Z ? Z - 1 : z0);
                                acc += wx * wy * wz * in[((xc * Y + yc) * Z + zc) * C + c];
                            }
                    out[((ox * Yo + oy) * Zo + oz) * C + c] = acc;
                }
}

void squash(i64 A, const double* s, double* v) {
    double n2 = 0.0;
    for (i64 a = 0; a < A; ++a) n2 += s[a] * s[a];
    const double n = std::sqrt(n2);
    const double f = n / (1.0 + n2);
    for (i64 a = 0; a < A; ++a) v[a] = s[a] * f;
}

void route_votes(i64 N, i64 J, i64 A, int iterations, const double* votes, double* poses,
                 double* couplings) {
    std::vector<double> b(static_cast<size_t>(N * J), 0.0);
    std::vector<double> s(static_cast<size_t>(J * A), 0.0);
    for (int it = 0; it < iterations; ++it) {
        // couplings = softmax of b over j
        for (i64 n = 0; n < N; ++n) {
            double m = b[static_cast<size_t>(n * J)];
            for (i64 j = 1; j < J; ++j) m = std::max(m, b[static_cast<size_t>(n * J + j)]);
            double z = 0.0;
            for (i64 j = 0; j < J; ++j) {
                couplings[n * J + j] = std::exp(b[static_cast<size_t>(n * J + j)] - m);
                z += couplings[n * J + j];
            }
            for (i64 j = 0; j < J; ++j) couplings[n * J + j] /= z;
        }
        // weighted vote sum, squashed
        for (i64 j = 0; j < J; ++j) {
            for (i64 a = 0; a < A; ++a) {
                double acc = 0.0;
                for (i64 n = 0; n < N; ++n)
                    acc += couplings[n * J + j] * votes[(n * J + j) * A + a];
                s[static_cast<size_t>(j * A + a)] = acc;
            }
            squash(A, s.data() + j * A, poses + j * A);
        }
        // agreement update on all but the last pass
        if (it + 1 < iterations) {
            for (i64 n = 0; n < N; ++n)
                for (i64 j = 0; j < J; ++j) {
                    double acc = 0.0;
                    for (i64 a = 0; a < A; ++a)
                        acc += votes[(n * J + j) * A + a] * poses[j * A + a];
                    b[static_cast<size_t>(n * J + j)] += acc;
                }
        }
    }
}

}  // namespace convcaps::reference
