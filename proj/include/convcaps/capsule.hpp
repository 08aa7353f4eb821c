#ifndef CONVCAPS_CAPSULE_HPP
#define CONVCAPS_CAPSULE_HPP

#include <utility>

#include "convcaps/conv.hpp"
#include "convcaps/tensor.hpp"

namespace convcaps {

// A spatial grid of capsules: poses has shape [X,Y,Z,T,A] (T capsule types,
// A-dimensional pose vectors). After any capsule layer every pose norm is < 1.
template <typename T>
struct CapsuleMap {
    Tensor<T> poses;

    i64 types() const { return poses.dim(3); }
    i64 pose_dim() const { return poses.dim(4); }
};

// v = s * |s| / (1 + |s|^2) over the last axis: direction preserved,
// norm mapped to |s|^2/(1+|s|^2) in [0,1). Exactly zero stays zero.
template <typename T>
Tensor<T> squash(const Tensor<T>& s);

// Split a feature volume [X,Y,Z,F] into `types` capsule types with
// F/types-dimensional poses and squash each: output poses [X,Y,Z,T,A].
template <typename T>
CapsuleMap<T> primary_caps(const Tensor<T>& features, i64 types);

// Routing-by-agreement over a single position. votes [N,J,A] -> poses [J,A]
// plus the final coupling coefficients [N,J] (softmax over J, rows sum to 1).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> dynamic_routing(const Tensor<T>& votes, int iterations);

template <typename T>
struct ConvCapsuleOut {
    CapsuleMap<T> out;      // [X',Y',Z',Tout,Aout]
    Tensor<T> couplings;    // [X',Y',Z',N,Tout], N = k^3 * Tin
};

// Convolutional capsule layer: at every output position, transform the
// k^3 x Tin input poses in the receptive field into votes (weights shared
// across positions, out-of-volume taps vote zero) and route them through
// `iterations` rounds of agreement. weight is [k,k,k,Tin,Tout,Ain,Aout].
template <typename T>
ConvCapsuleOut<T> conv_capsule(const CapsuleMap<T>& input, const Tensor<T>& weight,
                               const ConvSpec& spec, int iterations);

// Euclidean norm of every pose vector: [X,Y,Z,T,A] -> [X,Y,Z,T].
template <typename T>
Tensor<T> capsule_length(const CapsuleMap<T>& caps);

}  // namespace convcaps

#endif
