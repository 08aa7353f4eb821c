#ifndef CONVCAPS_REFERENCE_HPP
#define CONVCAPS_REFERENCE_HPP

#include <cstdint>
#include <vector>

// Naive single-threaded implementations of the compute kernels, written
// independently of the parallel versions. Tests compare the two; the kernel
// benchmark times them against each other. Everything here favours obvious
// correctness over speed.
namespace convcaps::reference {

using i64 = std::int64_t;

// out extent = ceil(in / stride), zero padding centered on each output tap.
i64 conv_out_extent(i64 in, int stride);

void conv3d(i64 X, i64 Y, i64 Z, i64 Cin, i64 Cout, int k, int stride, int dilation,
            const double* in, const double* w, const double* bias, double* out);

void upsample2x(i64 X, i64 Y, i64 Z, i64 C, const double* in, double* out);

void squash(i64 A, const double* s, double* v);

// Dynamic routing for one spatial position: votes[N,J,A] -> poses[J,A],
// couplings[N,J]. Unrolls the agreement recurrence exactly `iterations` times.
void route_votes(i64 N, i64 J, i64 A, int iterations, const double* votes, double* poses,
                 double* couplings);

}  // namespace convcaps::reference

#endif
