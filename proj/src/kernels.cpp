#include "convcaps/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace convcaps::kernels {

namespace {
inline i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

// Per-axis trilinear corner pair for x2 upsampling, align_corners off.
struct Corner {
    i64 i0, i1;
    double w0, w1;
};

inline Corner corner(i64 o, i64 extent) {
    const double f = (static_cast<double>(o) + 0.5) * 0.5 - 0.5;
    const double fl = std::floor(f);
    const double frac = f - fl;
    Corner c;
    c.i0 = std::clamp(static_cast<i64>(fl), i64(0), extent - 1);
    c.i1 = std::clamp(static_cast<i64>(fl) + 1, i64(0), extent - 1);
    c.w0 = 1.0 - frac;
    c.w1 = frac;
    return c;
}
}  // namespace

ConvGeom make_conv_geom(i64 X, i64 Y, i64 Z, i64 Cin, i64 Cout, int k, int sx, int sy, int sz,
                        int dx, int dy, int dz) {
    if (X < 1 || Y < 1 || Z < 1) throw usage_error("conv: zero-size input");
    if (Cin < 1 || Cout < 1) throw usage_error("conv: channel counts must be positive");
    if (k < 1 || k % 2 == 0) throw usage_error("conv: kernel extent must be odd and positive");
    if (sx < 1 || sy < 1 || sz < 1) throw usage_error("conv: stride must be positive");
    if (dx < 1 || dy < 1 || dz < 1) throw usage_error("conv: dilation must be positive");
    ConvGeom g{X, Y, Z, Cin, Cout, k, sx, sy, sz, dx, dy, dz, 0, 0, 0};
    g.Xo = ceil_div(X, sx);
    g.Yo = ceil_div(Y, sy);
    g.Zo = ceil_div(Z, sz);
    return g;
}

template <typename T>
void conv3d_forward(const ConvGeom& g, const T* in, const T* w, const T* bias, T* out) {
    const int c = (g.k - 1) / 2;
    const i64 kcc = g.Cin * g.Cout;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
    for (i64 xo = 0; xo < g.Xo; ++xo) {
        for (i64 yo = 0; yo < g.Yo; ++yo) {
            for (i64 zo = 0; zo < g.Zo; ++zo) {
                T* orow = out + ((xo * g.Yo + yo) * g.Zo + zo) * g.Cout;
                for (i64 co = 0; co < g.Cout; ++co) orow[co] = bias ? bias[co] : T(0);
                for (int kx = 0; kx < g.k; ++kx) {
                    const i64 ix = xo * g.sx + static_cast<i64>(kx - c) * g.dx;
                    if (ix < 0 || ix >= g.X) continue;
                    for (int ky = 0; ky < g.k; ++ky) {
                        const i64 iy = yo * g.sy + static_cast<i64>(ky - c) * g.dy;
                        if (iy < 0 || iy >= g.Y) continue;
                        for (int kz = 0; kz < g.k; ++kz) {
                            const i64 iz = zo * g.sz + static_cast<i64>(kz - c) * g.dz;
                            if (iz < 0 || iz >= g.Z) continue;
                            const T* irow = in + ((ix * g.Y + iy) * g.Z + iz) * g.Cin;
                            const T* wblk =
                                w + static_cast<i64>((kx * g.k + ky) * g.k + kz) * kcc;
                            for (i64 ci = 0; ci < g.Cin; ++ci) {
                                const T v = irow[ci];
                                const T* wrow = wblk + ci * g.Cout;
                                for (i64 co = 0; co < g.Cout; ++co) orow[co] += v * wrow[co];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_input(const ConvGeom& g, const T* w, const T* dout, T* din) {
    const int c = (g.k - 1) / 2;
    const i64 kcc = g.Cin * g.Cout;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
    for (i64 ix = 0; ix < g.X; ++ix) {
        for (i64 iy = 0; iy < g.Y; ++iy) {
            for (i64 iz = 0; iz < g.Z; ++iz) {
                T* drow = din + ((ix * g.Y + iy) * g.Z + iz) * g.Cin;
                for (int kx = 0; kx < g.k; ++kx) {
                    const i64 nx = ix - static_cast<i64>(kx - c) * g.dx;
                    if (nx < 0 || nx % g.sx) continue;
                    const i64 xo = nx / g.sx;
                    if (xo >= g.Xo) continue;
                    for (int ky = 0; ky < g.k; ++ky) {
                        const i64 ny = iy - static_cast<i64>(ky - c) * g.dy;
                        if (ny < 0 || ny % g.sy) continue;
                        const i64 yo = ny / g.sy;
                        if (yo >= g.Yo) continue;
                        for (int kz = 0; kz < g.k; ++kz) {
                            const i64 nz = iz - static_cast<i64>(kz - c) * g.dz;
                            if (nz < 0 || nz % g.sz) continue;
                            const i64 zo = nz / g.sz;
                            if (zo >= g.Zo) continue;
                            const T* dorow =
                                dout + ((xo * g.Yo + yo) * g.Zo + zo) * g.Cout;
                            const T* wblk =
                                w + static_cast<i64>((kx * g.k + ky) * g.k + kz) * kcc;
                            for (i64 ci = 0; ci < g.Cin; ++ci) {
                                const T* wrow = wblk + ci * g.Cout;
                                T acc = T(0);
                                for (i64 co = 0; co < g.Cout; ++co) acc += dorow[co] * wrow[co];
                                drow[ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_weight(const ConvGeom& g, const T* in, const T* dout, T* dw) {
    const int c = (g.k - 1) / 2;
    const i64 kcc = g.Cin * g.Cout;
    const int taps = g.k * g.k * g.k;
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int t = 0; t < taps; ++t) {
        const int kx = t / (g.k * g.k);
        const int ky = (t / g.k) % g.k;
        const int kz = t % g.k;
        T* dwblk = dw + static_cast<i64>(t) * kcc;
        for (i64 xo = 0; xo < g.Xo; ++xo) {
            const i64 ix = xo * g.sx + static_cast<i64>(kx - c) * g.dx;
            if (ix < 0 || ix >= g.X) continue;
            for (i64 yo = 0; yo < g.Yo; ++yo) {
                const i64 iy = yo * g.sy + static_cast<i64>(ky - c) * g.dy;
                if (iy < 0 || iy >= g.Y) continue;
                for (i64 zo = 0; zo < g.Zo; ++zo) {
                    const i64 iz = zo * g.sz + static_cast<i64>(kz - c) * g.dz;
                    if (iz < 0 || iz >= g.Z) continue;
                    const T* irow = in + ((ix * g.Y + iy) * g.Z + iz) * g.Cin;
                    const T* dorow = dout + ((xo * g.Yo + yo) * g.Zo + zo) * g.Cout;
                    for (i64 ci = 0; ci < g.Cin; ++ci) {
                        const T v = irow[ci];
                        T* dwrow = dwblk + ci * g.Cout;
                        for (i64 co = 0; co < g.Cout; ++co) dwrow[co] += v * dorow[co];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_bias(const ConvGeom& g, const T* dout, T* dbias) {
    const i64 vox = g.out_voxels();
    for (i64 v = 0; v < vox; ++v) {
        const T* dorow = dout + v * g.Cout;
        for (i64 co = 0; co < g.Cout; ++co) dbias[co] += dorow[co];
    }
}

template <typename T>
void upsample2x_forward(i64 X, i64 Y, i64 Z, i64 C, const T* in, T* out) {
    const i64 Xo = 2 * X, Yo = 2 * Y, Zo = 2 * Z;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
    for (i64 ox = 0; ox < Xo; ++ox) {
        for (i64 oy = 0; oy < Yo; ++oy) {
            const Corner cx = corner(ox, X);
            const Corner cy = corner(oy, Y);
            for (i64 oz = 0; oz < Zo; ++oz) {
                const Corner cz = corner(oz, Z);
                T* orow = out + ((ox * Yo + oy) * Zo + oz) * C;
                for (i64 ch = 0; ch < C; ++ch) orow[ch] = T(0);
                const i64 xs[2] = {cx.i0, cx.i1};
                const double wx[2] = {cx.w0, cx.w1};
                const i64 ys[2] = {cy.i0, cy.i1};
                const double wy[2] = {cy.w0, cy.w1};
                const i64 zs[2] = {cz.i0, cz.i1};
                const double wz[2] = {cz.w0, cz.w1};
                for (int a = 0; a < 2; ++a) {
                    for (int b = 0; b < 2; ++b) {
                        for (int d = 0; d < 2; ++d) {
                            const T wgt = static_cast<T>(wx[a] * wy[b] * wz[d]);
                            const T* irow = in + ((xs[a] * Y + ys[b]) * Z + zs[d]) * C;
                            for (i64 ch = 0; ch < C; ++ch) orow[ch] += wgt * irow[ch];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void upsample2x_backward(i64 X, i64 Y, i64 Z, i64 C, const T* dout, T* din) {
    const i64 Xo = 2 * X, Yo = 2 * Y, Zo = 2 * Z;
    // Scatter, serialized per channel (channels are independent gradient regions).
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 ch = 0; ch < C; ++ch) {
        for (i64 ox = 0; ox < Xo; ++ox) {
            const Corner cx = corner(ox, X);
            for (i64 oy = 0; oy < Yo; ++oy) {
                const Corner cy = corner(oy, Y);
                for (i64 oz = 0; oz < Zo; ++oz) {
                    const Corner cz = corner(oz, Z);
                    const T g = dout[((ox * Yo + oy) * Zo + oz) * C + ch];
                    const i64 xs[2] = {cx.i0, cx.i1};
                    const double wx[2] = {cx.w0, cx.w1};
                    const i64 ys[2] = {cy.i0, cy.i1};
                    const double wy[2] = {cy.w0, cy.w1};
                    const i64 zs[2] = {cz.i0, cz.i1};
                    const double wz[2] = {cz.w0, cz.w1};
                    for (int a = 0; a < 2; ++a) {
                        for (int b = 0; b < 2; ++b) {
                            for (int d = 0; d < 2; ++d) {
                                din[((xs[a] * Y + ys[b]) * Z + zs[d]) * C + ch] +=
                                    static_cast<T>(wx[a] * wy[b] * wz[d]) * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

CapsGeom make_caps_geom(i64 X, i64 Y, i64 Z, i64 Tin, i64 Ain, i64 Tout, i64 Aout, int k, int sx,
                        int sy, int sz, int dx, int dy, int dz) {
    if (Tin < 1 || Ain < 1 || Tout < 1 || Aout < 1)
        throw usage_error("capsule layer: type/pose extents must be positive");
    const ConvGeom base = make_conv_geom(X, Y, Z, 1, 1, k, sx, sy, sz, dx, dy, dz);
    CapsGeom g{X,  Y,  Z,  Tin, Ain, Tout,    Aout,    k,
               sx, sy, sz, dx,  dy,  dz,      base.Xo, base.Yo,
               base.Zo, static_cast<i64>(k) * k * k * Tin};
    return g;
}

template <typename T>
void caps_gather_forward(const CapsGeom& g, const T* in, T* u) {
    const int c = (g.k - 1) / 2;
    const i64 block = g.Tin * g.Ain;  // one tap's worth of poses
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
    for (i64 xo = 0; xo < g.Xo; ++xo) {
        for (i64 yo = 0; yo < g.Yo; ++yo) {
            for (i64 zo = 0; zo < g.Zo; ++zo) {
                T* urow = u + ((xo * g.Yo + yo) * g.Zo + zo) * g.N * g.Ain;
                for (int kx = 0; kx < g.k; ++kx) {
                    const i64 ix = xo * g.sx + static_cast<i64>(kx - c) * g.dx;
                    for (int ky = 0; ky < g.k; ++ky) {
                        const i64 iy = yo * g.sy + static_cast<i64>(ky - c) * g.dy;
                        for (int kz = 0; kz < g.k; ++kz) {
                            const i64 iz = zo * g.sz + static_cast<i64>(kz - c) * g.dz;
                            T* dst = urow +
                                     static_cast<i64>((kx * g.k + ky) * g.k + kz) * block;
                            if (ix < 0 || ix >= g.X || iy < 0 || iy >= g.Y || iz < 0 ||
                                iz >= g.Z) {
                                std::fill(dst, dst + block, T(0));
                            } else {
                                const T* src = in + ((ix * g.Y + iy) * g.Z + iz) * block;
                                std::copy(src, src + block, dst);
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void caps_gather_backward(const CapsGeom& g, const T* du, T* din) {
    const int c = (g.k - 1) / 2;
    const i64 block = g.Tin * g.Ain;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
    for (i64 ix = 0; ix < g.X; ++ix) {
        for (i64 iy = 0; iy < g.Y; ++iy) {
            for (i64 iz = 0; iz < g.Z; ++iz) {
                T* drow = din + ((ix * g.Y + iy) * g.Z + iz) * block;
                for (int kx = 0; kx < g.k; ++kx) {
                    const i64 nx = ix - static_cast<i64>(kx - c) * g.dx;
                    if (nx < 0 || nx % g.sx) continue;
                    const i64 xo = nx / g.sx;
                    if (xo >= g.Xo) continue;
                    for (int ky = 0; ky < g.k; ++ky) {
                        const i64 ny = iy - static_cast<i64>(ky - c) * g.dy;
                        if (ny < 0 || ny % g.sy) continue;
                        const i64 yo = ny / g.sy;
                        if (yo >= g.Yo) continue;
                        for (int kz = 0; kz < g.k; ++kz) {
                            const i64 nz = iz - static_cast<i64>(kz - c) * g.dz;
                            if (nz < 0 || nz % g.sz) continue;
                            const i64 zo = nz / g.sz;
                            if (zo >= g.Zo) continue;
                            const T* src =
                                du + (((xo * g.Yo + yo) * g.Zo + zo) * g.N +
                                      static_cast<i64>((kx * g.k + ky) * g.k + kz) * g.Tin) *
                                         g.Ain;
                            for (i64 i = 0; i < block; ++i) drow[i] += src[i];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void vote_transform_forward(const CapsGeom& g, const T* u, const T* w, T* votes) {
    const i64 V = g.out_voxels();
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 v = 0; v < V; ++v) {
        const T* uvox = u + v * g.N * g.Ain;
        T* vvox = votes + v * g.N * g.Tout * g.Aout;
        for (i64 n = 0; n < g.N; ++n) {
            const T* urow = uvox + n * g.Ain;
            for (i64 j = 0; j < g.Tout; ++j) {
                T* vrow = vvox + (n * g.Tout + j) * g.Aout;
                const T* wblk = w + (n * g.Tout + j) * g.Ain * g.Aout;
                for (i64 ao = 0; ao < g.Aout; ++ao) vrow[ao] = T(0);
                for (i64 ai = 0; ai < g.Ain; ++ai) {
                    const T s = urow[ai];
                    const T* wrow = wblk + ai * g.Aout;
                    for (i64 ao = 0; ao < g.Aout; ++ao) vrow[ao] += s * wrow[ao];
                }
            }
        }
    }
}

template <typename T>
void vote_transform_backward_u(const CapsGeom& g, const T* w, const T* dvotes, T* du) {
    const i64 V = g.out_voxels();
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 v = 0; v < V; ++v) {
        T* duvox = du + v * g.N * g.Ain;
        const T* dvvox = dvotes + v * g.N * g.Tout * g.Aout;
        for (i64 n = 0; n < g.N; ++n) {
            T* durow = duvox + n * g.Ain;
            for (i64 j = 0; j < g.Tout; ++j) {
                const T* dvrow = dvvox + (n * g.Tout + j) * g.Aout;
                const T* wblk = w + (n * g.Tout + j) * g.Ain * g.Aout;
                for (i64 ai = 0; ai < g.Ain; ++ai) {
                    const T* wrow = wblk + ai * g.Aout;
                    T acc = T(0);
                    for (i64 ao = 0; ao < g.Aout; ++ao) acc += dvrow[ao] * wrow[ao];
                    durow[ai] += acc;
                }
            }
        }
    }
}

template <typename T>
void vote_transform_backward_w(const CapsGeom& g, const T* u, const T* dvotes, T* dw) {
    const i64 V = g.out_voxels();
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 n = 0; n < g.N; ++n) {
        for (i64 j = 0; j < g.Tout; ++j) {
            T* dwblk = dw + (n * g.Tout + j) * g.Ain * g.Aout;
            for (i64 v = 0; v < V; ++v) {
                const T* urow = u + (v * g.N + n) * g.Ain;
                const T* dvrow = dvotes + ((v * g.N + n) * g.Tout + j) * g.Aout;
                for (i64 ai = 0; ai < g.Ain; ++ai) {
                    const T s = urow[ai];
                    T* dwrow = dwblk + ai * g.Aout;
                    for (i64 ao = 0; ao < g.Aout; ++ao) dwrow[ao] += s * dvrow[ao];
                }
            }
        }
    }
}

template <typename T>
void contract_votes_forward(i64 V, i64 N, i64 J, i64 A, const T* c, const T* u, T* s) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 v = 0; v < V; ++v) {
        T* svox = s + v * J * A;
        for (i64 i = 0; i < J * A; ++i) svox[i] = T(0);
        const T* cvox = c + v * N * J;
        const T* uvox = u + v * N * J * A;
        for (i64 n = 0; n < N; ++n) {
            for (i64 j = 0; j < J; ++j) {
                const T coef = cvox[n * J + j];
                const T* urow = uvox + (n * J + j) * A;
                T* srow = svox + j * A;
                for (i64 a = 0; a < A; ++a) srow[a] += coef * urow[a];
            }
        }
    }
}

template <typename T>
void contract_votes_backward(i64 V, i64 N, i64 J, i64 A, const T* c, const T* u, const T* ds,
                             T* dc, T* du) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 v = 0; v < V; ++v) {
        const T* cvox = c + v * N * J;
        const T* uvox = u + v * N * J * A;
        const T* dsvox = ds + v * J * A;
        T* dcvox = dc ? dc + v * N * J : nullptr;
        T* duvox = du ? du + v * N * J * A : nullptr;
        for (i64 n = 0; n < N; ++n) {
            for (i64 j = 0; j < J; ++j) {
                const T* dsrow = dsvox + j * A;
                const T* urow = uvox + (n * J + j) * A;
                if (dcvox) {
                    T acc = T(0);
                    for (i64 a = 0; a < A; ++a) acc += dsrow[a] * urow[a];
                    dcvox[n * J + j] += acc;
                }
                if (duvox) {
                    const T coef = cvox[n * J + j];
                    T* durow = duvox + (n * J + j) * A;
                    for (i64 a = 0; a < A; ++a) durow[a] += coef * dsrow[a];
                }
            }
        }
    }
}

template <typename T>
void agreement_forward(i64 V, i64 N, i64 J, i64 A, const T* u, const T* p, T* b) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 v = 0; v < V; ++v) {
        const T* uvox = u + v * N * J * A;
        const T* pvox = p + v * J * A;
        T* bvox = b + v * N * J;
        for (i64 n = 0; n < N; ++n) {
            for (i64 j = 0; j < J; ++j) {
                const T* urow = uvox + (n * J + j) * A;
                const T* prow = pvox + j * A;
                T acc = T(0);
                for (i64 a = 0; a < A; ++a) acc += urow[a] * prow[a];
                bvox[n * J + j] = acc;
            }
        }
    }
}

template <typename T>
void agreement_backward(i64 V, i64 N, i64 J, i64 A, const T* u, const T* p, const T* db, T* du,
                        T* dp) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 v = 0; v < V; ++v) {
        const T* uvox = u + v * N * J * A;
        const T* pvox = p + v * J * A;
        const T* dbvox = db + v * N * J;
        T* duvox = du ? du + v * N * J * A : nullptr;
        T* dpvox = dp ? dp + v * J * A : nullptr;
        for (i64 n = 0; n < N; ++n) {
            for (i64 j = 0; j < J; ++j) {
                const T g = dbvox[n * J + j];
                const T* urow = uvox + (n * J + j) * A;
                const T* prow = pvox + j * A;
                if (duvox) {
                    T* durow = duvox + (n * J + j) * A;
                    for (i64 a = 0; a < A; ++a) durow[a] += g * prow[a];
                }
                if (dpvox) {
                    T* dprow = dpvox + j * A;
                    for (i64 a = 0; a < A; ++a) dprow[a] += g * urow[a];
                }
            }
        }
    }
}

template <typename T>
void squash_forward(i64 rows, i64 A, const T* s, T* v) {
    // Fault injection for the selftest harness: a deliberately wrong scale.
    const T fault = sabotaged("squash") ? T(1.02) : T(1);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 r = 0; r < rows; ++r) {
        const T* srow = s + r * A;
        T* vrow = v + r * A;
        T n2 = T(0);
        for (i64 a = 0; a < A; ++a) n2 += srow[a] * srow[a];
        const T n = std::sqrt(n2);
        const T f = fault * n / (T(1) + n2);
        for (i64 a = 0; a < A; ++a) vrow[a] = srow[a] * f;
    }
}

template <typename T>
void squash_backward(i64 rows, i64 A, const T* s, const T* dv, T* ds) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (i64 r = 0; r < rows; ++r) {
        const T* srow = s + r * A;
        const T* dvrow = dv + r * A;
        T* dsrow = ds + r * A;
        T n2 = T(0);
        for (i64 a = 0; a < A; ++a) n2 += srow[a] * srow[a];
        const T n = std::sqrt(n2);
        const T denom = T(1) + n2;
        const T f = n / denom;
        // d f(n) / d n, with the norm direction s/n guarded at zero (the
        // product s_a/n stays bounded, but 1/n itself would overflow).
        const T fp = (T(1) - n2) / (denom * denom);
        const T inv_n = n >= std::numeric_limits<T>::min() ? T(1) / n : T(0);
        T dot = T(0);
        for (i64 a = 0; a < A; ++a) dot += dvrow[a] * srow[a];
        const T radial = fp * inv_n * dot;
        for (i64 a = 0; a < A; ++a) dsrow[a] += dvrow[a] * f + srow[a] * radial;
    }
}

#define CONVCAPS_KERNEL_INSTANTIATE(T)                                                          \
    template void conv3d_forward(const ConvGeom&, const T*, const T*, const T*, T*);            \
    template void conv3d_backward_input(const ConvGeom&, const T*, const T*, T*);               \
    template void conv3d_backward_weight(const ConvGeom&, const T*, const T*, T*);              \
    template void conv3d_backward_bias(const ConvGeom&, const T*, T*);                          \
    template void upsample2x_forward(i64, i64, i64, i64, const T*, T*);                         \
    template void upsample2x_backward(i64, i64, i64, i64, const T*, T*);                        \
    template void caps_gather_forward(const CapsGeom&, const T*, T*);                           \
    template void caps_gather_backward(const CapsGeom&, const T*, T*);                          \
    template void vote_transform_forward(const CapsGeom&, const T*, const T*, T*);              \
    template void vote_transform_backward_u(const CapsGeom&, const T*, const T*, T*);           \
    template void vote_transform_backward_w(const CapsGeom&, const T*, const T*, T*);           \
    template void contract_votes_forward(i64, i64, i64, i64, const T*, const T*, T*);           \
    template void contract_votes_backward(i64, i64, i64, i64, const T*, const T*, const T*,     \
                                          T*, T*);                                              \
    template void agreement_forward(i64, i64, i64, i64, const T*, const T*, T*);                \
    template void agreement_backward(i64, i64, i64, i64, const T*, const T*, const T*, T*,     \
                                     T*);                                                       \
    template void squash_forward(i64, i64, const T*, T*);                                       \
    template void squash_backward(i64, i64, const T*, const T*, T*);

CONVCAPS_KERNEL_INSTANTIATE(float)
CONVCAPS_KERNEL_INSTANTIATE(double)
#undef CONVCAPS_KERNEL_INSTANTIATE

}  // namespace convcaps::kernels
