#ifndef CONVCAPS_KERNELS_HPP
#define CONVCAPS_KERNELS_HPP

#include <cstdint>

#include "convcaps/tensor.hpp"

// Parallel compute kernels on raw row-major buffers. Every kernel parallelizes
// over disjoint output (or gradient) regions and keeps a fixed reduction order
// per element, so results are bit-identical for any thread count. Backward
// kernels accumulate (+=) into their gradient buffers.
namespace convcaps::kernels {

struct ConvGeom {
    i64 X, Y, Z, Cin, Cout;
    int k;
    int sx, sy, sz;
    int dx, dy, dz;
    i64 Xo, Yo, Zo;

    i64 in_voxels() const { return X * Y * Z; }
    i64 out_voxels() const { return Xo * Yo * Zo; }
};

// "same" padding: out extent = ceil(in / stride), taps centered on the output
// position (ix = xo*stride + (kx - (k-1)/2)*dilation).
ConvGeom make_conv_geom(i64 X, i64 Y, i64 Z, i64 Cin, i64 Cout, int k, int sx, int sy, int sz,
                        int dx, int dy, int dz);

template <typename T>
void conv3d_forward(const ConvGeom& g, const T* in, const T* w, const T* bias, T* out);
template <typename T>
void conv3d_backward_input(const ConvGeom& g, const T* w, const T* dout, T* din);
template <typename T>
void conv3d_backward_weight(const ConvGeom& g, const T* in, const T* dout, T* dw);
template <typename T>
void conv3d_backward_bias(const ConvGeom& g, const T* dout, T* dbias);

// Trilinear x2, align_corners off, edge clamped: input coord = (o + 0.5)/2 - 0.5.
template <typename T>
void upsample2x_forward(i64 X, i64 Y, i64 Z, i64 C, const T* in, T* out);
template <typename T>
void upsample2x_backward(i64 X, i64 Y, i64 Z, i64 C, const T* dout, T* din);

struct CapsGeom {
    i64 X, Y, Z, Tin, Ain, Tout, Aout;
    int k;
    int sx, sy, sz;
    int dx, dy, dz;
    i64 Xo, Yo, Zo;
    i64 N;  // votes per output position = k^3 * Tin

    i64 out_voxels() const { return Xo * Yo * Zo; }
};

CapsGeom make_caps_geom(i64 X, i64 Y, i64 Z, i64 Tin, i64 Ain, i64 Tout, i64 Aout, int k, int sx,
                        int sy, int sz, int dx, int dy, int dz);

// Receptive-field gather: u[vo, n, Ain] with n = tap*Tin + tin; out-of-bounds
// taps contribute zero pose vectors.
template <typename T>
void caps_gather_forward(const CapsGeom& g, const T* in, T* u);
template <typename T>
void caps_gather_backward(const CapsGeom& g, const T* du, T* din);

// votes[vo, n, j, aout] = sum_ain u[vo, n, ain] * w[n, j, ain, aout]
// (w is [k,k,k,Tin,Tout,Ain,Aout] viewed contiguously as [N, Tout, Ain, Aout]).
template <typename T>
void vote_transform_forward(const CapsGeom& g, const T* u, const T* w, T* votes);
template <typename T>
void vote_transform_backward_u(const CapsGeom& g, const T* w, const T* dvotes, T* du);
template <typename T>
void vote_transform_backward_w(const CapsGeom& g, const T* u, const T* dvotes, T* dw);

// Routing building blocks on flattened [V, N, J(, A)] buffers.
// s[v,j,a] = sum_n c[v,n,j] * u[v,n,j,a]
template <typename T>
void contract_votes_forward(i64 V, i64 N, i64 J, i64 A, const T* c, const T* u, T* s);
template <typename T>
void contract_votes_backward(i64 V, i64 N, i64 J, i64 A, const T* c, const T* u, const T* ds,
                             T* dc, T* du);
// b[v,n,j] = sum_a u[v,n,j,a] * p[v,j,a]
template <typename T>
void agreement_forward(i64 V, i64 N, i64 J, i64 A, const T* u, const T* p, T* b);
template <typename T>
void agreement_backward(i64 V, i64 N, i64 J, i64 A, const T* u, const T* p, const T* db, T* du,
                        T* dp);

// v = s * n/(1+n^2) with n = |s| over the last axis; |v| = n^2/(1+n^2) < 1.
template <typename T>
void squash_forward(i64 rows, i64 A, const T* s, T* v);
template <typename T>
void squash_backward(i64 rows, i64 A, const T* s, const T* dv, T* ds);

}  // namespace convcaps::kernels

#endif
