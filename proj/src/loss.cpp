#include "convcaps/loss.hpp"

#include <vector>

namespace convcaps {

template <typename T>
Tensor<T> downsample_labels(const LabelVolume& labels, int factor, int classes) {
    if (factor < 1) throw usage_error("downsample_labels: factor must be >= 1");
    if (classes < 1) throw usage_error("downsample_labels: classes must be >= 1");
    const i64 X = labels.shape[0], Y = labels.shape[1], Z = labels.shape[2];
    for (i64 d : labels.shape)
        if (d % factor != 0)
            throw usage_error("downsample_labels: extents " + shape_str(labels.shape) +
                              " not divisible by " + std::to_string(factor));

    const i64 Xo = X / factor, Yo = Y / factor, Zo = Z / factor;
    Tensor<T> out(Shape{Xo, Yo, Zo, classes});
    std::vector<i64> hist(static_cast<size_t>(classes));
    for (i64 xo = 0; xo < Xo; ++xo)
        for (i64 yo = 0; yo < Yo; ++yo)
            for (i64 zo = 0; zo < Zo; ++zo) {
                std::fill(hist.begin(), hist.end(), 0);
                for (i64 dx = 0; dx < factor; ++dx)
                    for (i64 dy = 0; dy < factor; ++dy)
                        for (i64 dz = 0; dz < factor; ++dz) {
                            const std::uint8_t c = labels.at(xo * factor + dx, yo * factor + dy,
                                                             zo * factor + dz);
                            if (c >= classes)
                                throw usage_error("downsample_labels: label " +
                                                  std::to_string(int(c)) + " >= classes " +
                                                  std::to_string(classes));
                            ++hist[c];
                        }
                int best = 0;
                for (int c = 1; c < classes; ++c)
                    if (hist[static_cast<size_t>(c)] > hist[static_cast<size_t>(best)]) best = c;
                out.data()[((xo * Yo + yo) * Zo + zo) * classes + best] = T(1);
            }
    return out;
}

template <typename T>
Tensor<T> margin_loss(const Tensor<T>& lengths, const Tensor<T>& gt_onehot) {
    if (lengths.shape() != gt_onehot.shape())
        throw usage_error("margin_loss: shape mismatch " + shape_str(lengths.shape()) + " vs " +
                          shape_str(gt_onehot.shape()));
    // y*.(relu(0.9-y))^2
    Tensor<T> pos_h = relu(add_scalar(scale(lengths, -1.0), 0.9));
    Tensor<T> pos = mul(gt_onehot, mul(pos_h, pos_h));
    // 0.5.(1-y*).(relu(y-0.1))^2
    Tensor<T> neg_h = relu(add_scalar(lengths, -0.1));
    Tensor<T> not_gt = add_scalar(scale(gt_onehot, -1.0), 1.0);
    Tensor<T> neg = mul(not_gt, mul(neg_h, neg_h));
    return mean(add(pos, scale(neg, 0.5)));
}

template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& seg, const LabelVolume& labels,
                      const Tensor<T>& class_weights) {
    if (seg.rank() != 4) throw usage_error("weighted_ce: seg must be [X,Y,Z,C]");
    const i64 C = seg.dim(3);
    if (Shape{seg.dim(0), seg.dim(1), seg.dim(2)} != labels.shape)
        throw usage_error("weighted_ce: seg " + shape_str(seg.shape()) +
                          " does not cover labels " + shape_str(labels.shape));
    if (class_weights.shape() != Shape{C})
        throw usage_error("weighted_ce: need one weight per class");
    for (i64 c = 0; c < C; ++c)
        if (class_weights.data()[c] < T(0))
            throw usage_error("weighted_ce: negative class weight");

    const i64 V = labels.size();
    // constant selector carrying w[label] at each voxel's labeled entry
    Tensor<T> sel(seg.shape());
    for (i64 v = 0; v < V; ++v) {
        const std::uint8_t c = labels.data[static_cast<size_t>(v)];
        if (c >= C)
            throw usage_error("weighted_ce: label " + std::to_string(int(c)) + " >= classes " +
                              std::to_string(C));
        sel.data()[v * C + c] = class_weights.data()[c];
    }
    return scale(sum(mul(sel, log_clamped(seg, 1e-7))), -1.0 / static_cast<double>(V));
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& recon, const Tensor<T>& input,
                     const LabelVolume& labels) {
    if (recon.shape() != input.shape())
        throw usage_error("masked_mse: shape mismatch " + shape_str(recon.shape()) + " vs " +
                          shape_str(input.shape()));
    if (recon.rank() != 4 || Shape{recon.dim(0), recon.dim(1), recon.dim(2)} != labels.shape)
        throw usage_error("masked_mse: volume " + shape_str(recon.shape()) +
                          " does not cover labels " + shape_str(labels.shape));

    const i64 M = recon.dim(3);
    i64 fg = 0;
    Tensor<T> mask(recon.shape());
    for (i64 v = 0; v < labels.size(); ++v) {
        if (labels.data[static_cast<size_t>(v)] > 0) {
            ++fg;
            for (i64 m = 0; m < M; ++m) mask.data()[v * M + m] = T(1);
        }
    }
    if (fg == 0) return Tensor<T>::scalar(T(0));
    Tensor<T> d = sub(recon, input);
    return scale(sum(mul(mask, mul(d, d))), 1.0 / static_cast<double>(fg * M));
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& margin, const Tensor<T>& ce, const Tensor<T>& recon,
                         const ModelConfig& cfg) {
    if (cfg.margin_weight < 0 || cfg.ce_weight < 0 || cfg.reconstruction_weight < 0)
        throw usage_error("total_loss: negative loss weight");
    LossReport<T> r;
    r.margin = margin;
    r.ce = ce;
    r.recon = recon;
    r.lambda_margin = cfg.margin_weight;
    r.lambda_ce = cfg.ce_weight;
    r.lambda_recon = cfg.reconstruction_weight;
    r.total = add(add(scale(margin, r.lambda_margin), scale(ce, r.lambda_ce)),
                  scale(recon, r.lambda_recon));
    return r;
}

namespace {

template <typename T>
Tensor<T> weights_from_counts(const std::vector<i64>& count, int classes) {
    Tensor<T> w(Shape{classes});
    double mean_inv = 0;
    int present = 0;
    for (int c = 0; c < classes; ++c)
        if (count[static_cast<size_t>(c)] > 0) {
            mean_inv += 1.0 / static_cast<double>(count[static_cast<size_t>(c)]);
            ++present;
        }
    if (present == 0) throw usage_error("class weights: empty batch");
    mean_inv /= present;
    for (int c = 0; c < classes; ++c) {
        const i64 n = count[static_cast<size_t>(c)];
        w.data()[c] = n > 0 ? static_cast<T>(1.0 / (static_cast<double>(n) * mean_inv)) : T(0);
    }
    return w;
}

}  // namespace

template <typename T>
Tensor<T> inverse_frequency_weights(const std::vector<const LabelVolume*>& batch, int classes) {
    if (classes < 1) throw usage_error("class weights: classes must be >= 1");
    std::vector<i64> count(static_cast<size_t>(classes));
    for (const LabelVolume* lv : batch)
        for (const std::uint8_t c : lv->data) {
            if (c >= classes)
                throw usage_error("class weights: label " + std::to_string(int(c)) +
                                  " >= classes " + std::to_string(classes));
            ++count[c];
        }
    return weights_from_counts<T>(count, classes);
}

template <typename T>
Tensor<T> inverse_frequency_weights(const LabelVolume& labels, int classes) {
    return inverse_frequency_weights<T>(std::vector<const LabelVolume*>{&labels}, classes);
}

#define CONVCAPS_LOSS_INSTANTIATE(T)                                                          \
    template Tensor<T> downsample_labels<T>(const LabelVolume&, int, int);                    \
    template Tensor<T> margin_loss(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> weighted_ce(const Tensor<T>&, const LabelVolume&, const Tensor<T>&);   \
    template Tensor<T> masked_mse(const Tensor<T>&, const Tensor<T>&, const LabelVolume&);    \
    template LossReport<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      const ModelConfig&);                                    \
    template Tensor<T> inverse_frequency_weights<T>(const LabelVolume&, int);                 \
    template Tensor<T> inverse_frequency_weights<T>(const std::vector<const LabelVolume*>&,   \
                                                    int);

CONVCAPS_LOSS_INSTANTIATE(float)
CONVCAPS_LOSS_INSTANTIATE(double)
#undef CONVCAPS_LOSS_INSTANTIATE

}  // namespace convcaps
