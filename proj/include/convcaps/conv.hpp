#ifndef CONVCAPS_CONV_HPP
#define CONVCAPS_CONV_HPP

#include <array>

#include "convcaps/kernels.hpp"
#include "convcaps/tensor.hpp"

namespace convcaps {

// Zero-padded "same" convolution geometry: output extent = ceil(input/stride).
struct ConvSpec {
    int kernel = 3;
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> dilation{1, 1, 1};

    static ConvSpec make(int k, int s = 1, int d = 1) {
        return ConvSpec{k, {s, s, s}, {d, d, d}};
    }
};

// input [X,Y,Z,Cin] * weight [k,k,k,Cin,Cout] + bias [Cout] -> [X',Y',Z',Cout].
// Cross-correlation (no kernel flip). Differentiable in input, weight, bias.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec);

// Trilinear x2 upsampling of [X,Y,Z,C]; only factor 2 is supported.
template <typename T>
Tensor<T> upsample3d(const Tensor<T>& input, int factor);

}  // namespace convcaps

#endif
