#ifndef CONVCAPS_LOSS_HPP
#define CONVCAPS_LOSS_HPP

#include "convcaps/label_volume.hpp"
#include "convcaps/model.hpp"
#include "convcaps/tensor.hpp"

namespace convcaps {

// Scalar loss terms (taped tensors, so backward flows through them) plus the
// weights that formed the total.
template <typename T>
struct LossReport {
    Tensor<T> margin;
    Tensor<T> ce;
    Tensor<T> recon;
    Tensor<T> total;
    double lambda_margin = 1.0;
    double lambda_ce = 1.0;
    double lambda_recon = 1.0;
};

// Majority vote per factor^3 block, ties to the smallest class index; output
// is exactly one-hot per coarse voxel.
template <typename T>
Tensor<T> downsample_labels(const LabelVolume& labels, int factor, int classes);

// Per-entry mean of  y*.(max(0, 0.9-y))^2 + 0.5.(1-y*).(max(0, y-0.1))^2.
template <typename T>
Tensor<T> margin_loss(const Tensor<T>& lengths, const Tensor<T>& gt_onehot);

// -mean over voxels of w[label].log(max(seg[label], 1e-7)).
template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& seg, const LabelVolume& labels,
                      const Tensor<T>& class_weights);

// Mean squared error over foreground voxels (label > 0) and channels; zero
// when the mask is empty.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& recon, const Tensor<T>& input, const LabelVolume& labels);

template <typename T>
LossReport<T> total_loss(const Tensor<T>& margin, const Tensor<T>& ce, const Tensor<T>& recon,
                         const ModelConfig& cfg);

// Inverse relative class frequency over the batch, normalized so present
// classes average to weight 1; absent classes get weight 0 (they contribute
// no voxels to the cross entropy anyway).
template <typename T>
Tensor<T> inverse_frequency_weights(const LabelVolume& labels, int classes);
template <typename T>
Tensor<T> inverse_frequency_weights(const std::vector<const LabelVolume*>& batch, int classes);

}  // namespace convcaps

#endif
