#ifndef CONVCAPS_PIPELINE_HPP
#define CONVCAPS_PIPELINE_HPP

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "convcaps/label_volume.hpp"
#include "convcaps/loss.hpp"
#include "convcaps/model.hpp"
#include "convcaps/volio.hpp"

namespace convcaps {

struct TrainConfig {
    std::array<i64, 3> patch_size{32, 32, 32};
    double learning_rate = 1e-4;
    double weight_decay = 2e-6;  // decoupled L2
    double lr_decay_factor = 0.1;
    i64 plateau_patience = 50000;    // iterations without Dice improvement before decay
    i64 early_stop_patience = 25000;  // iterations without improvement before stopping
    i64 max_iterations = 2000;
    i64 batch_size = 1;
    double fg_bias = 0.9;     // probability a sampled patch is centered on foreground
    i64 val_interval = 100;   // validation cadence in iterations
    double improve_threshold = 1e-4;  // absolute Dice gain that counts as improvement
    std::uint64_t seed = 0;

    void validate() const;
};

struct PhantomSpec {
    std::array<i64, 3> extents{64, 64, 64};
    int classes = 4;      // background + nested shells
    int modalities = 2;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
};

// Per-channel min-max rescale to [0,1]; constant channels map to zero.
template <typename T>
Tensor<T> normalize(const Tensor<T>& volume);

// Random nested ellipsoids: label classes-1 innermost down to 1 outermost,
// 0 elsewhere; each modality gets distinct per-class mean intensities plus
// Gaussian noise, then min-max normalization.
std::pair<Tensor<float>, LabelVolume> generate_phantom(const PhantomSpec& spec);

// Random patch corners; with probability fg_bias the patch is centered on a
// uniformly chosen foreground voxel (clamped to the volume).
std::vector<std::pair<Tensor<float>, LabelVolume>> sample_patches(
    const Tensor<float>& volume, const LabelVolume& labels, std::array<i64, 3> size, i64 n,
    double fg_bias, Rng& rng);

// Adam moments per parameter, aligned with the network's declaration order.
template <typename T>
struct AdamState {
    double lr = 1e-4;
    i64 step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

template <typename T>
AdamState<T> make_adam(const Network<T>& net, double lr);

template <typename T>
struct Batch {
    std::vector<Tensor<T>> inputs;
    std::vector<LabelVolume> labels;
};

// Forward, total loss, backward, AdamW update (beta1 0.9, beta2 0.999,
// eps 1e-8, decoupled weight decay), then grads are zeroed. The returned
// report holds the batch-averaged loss terms.
template <typename T>
LossReport<T> train_step(Network<T>& net, const Batch<T>& batch, AdamState<T>& opt,
                         const TrainConfig& cfg);

struct ScheduleState {
    double lr = 1e-4;
    double best_dsc = -1.0;
    i64 best_iteration = 0;
    i64 decay_marker = 0;  // iteration of the last decay or improvement
    bool stop = false;
};

// Plateau schedule: decay lr by cfg.lr_decay_factor after plateau_patience
// iterations without improvement; raise stop after early_stop_patience.
ScheduleState schedule_update(ScheduleState state, double val_dsc, i64 iteration,
                              const TrainConfig& cfg);

// Tiled forward passes with stride patch*(1-overlap), mean-fused per-voxel
// probabilities, then argmax (ties to the smaller class).
LabelVolume sliding_window_infer(const Network<float>& net, const Tensor<float>& volume,
                                 std::array<i64, 3> patch, double overlap = 0.5);

struct TrainResult {
    double best_val_dsc = 0;
    i64 iterations = 0;
    bool early_stopped = false;
};

// Full loop: loads the manifest (last entry = validation split), samples
// fg-biased patches, steps the optimizer, validates on a cadence, checkpoints
// the best model, and appends CSV rows "iter,lr,margin,ce,recon,total,val_dsc".
TrainResult run_training(const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::string& arch, const std::string& data_dir,
                         const std::string& checkpoint_path, const std::string& log_path);

}  // namespace convcaps

#endif
