#include "convcaps/pipeline.hpp"

#include "convcaps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace convcaps {

void TrainConfig::validate() const {
    for (i64 d : patch_size) {
        if (d < 8) throw usage_error("train: patch extents must be >= 8");
        if (d % 8 != 0) throw usage_error("train: patch extents must be divisible by 8");
    }
    if (learning_rate <= 0) throw usage_error("train: learning_rate must be positive");
    if (weight_decay < 0) throw usage_error("train: weight_decay must be >= 0");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
        throw usage_error("train: lr_decay_factor must be in (0,1]");
    if (plateau_patience < 1 || early_stop_patience < 1)
        throw usage_error("train: patience values must be positive");
    if (max_iterations < 1) throw usage_error("train: max_iterations must be positive");
    if (batch_size < 1) throw usage_error("train: batch_size must be positive");
    if (fg_bias < 0 || fg_bias > 1) throw usage_error("train: fg_bias must be in [0,1]");
    if (val_interval < 1) throw usage_error("train: val_interval must be positive");
    if (improve_threshold < 0) throw usage_error("train: improve_threshold must be >= 0");
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& volume) {
    if (volume.rank() != 4) throw usage_error("normalize: tensor must be [X,Y,Z,M]");
    const i64 M = volume.dim(3);
    const i64 voxels = volume.size() / M;
    Tensor<T> out(volume.shape());
    for (i64 m = 0; m < M; ++m) {
        T lo = volume.data()[m], hi = volume.data()[m];
        for (i64 v = 0; v < voxels; ++v) {
            const T x = volume.data()[v * M + m];
            if (!std::isfinite(static_cast<double>(x)))
                throw numeric_error("normalize: non-finite input value");
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        const T span = hi - lo;
        for (i64 v = 0; v < voxels; ++v)
            out.data()[v * M + m] = span > T(0) ? (volume.data()[v * M + m] - lo) / span : T(0);
    }
    return out;
}

std::pair<Tensor<float>, LabelVolume> generate_phantom(const PhantomSpec& spec) {
    if (spec.classes < 2) throw usage_error("phantom: classes must be >= 2");
    if (spec.modalities < 1) throw usage_error("phantom: modalities must be >= 1");
    if (spec.noise_sigma < 0) throw usage_error("phantom: noise sigma must be >= 0");
    for (i64 d : spec.extents)
        if (d < 16)
            throw usage_error("phantom: extents " + std::to_string(d) +
                              " too small for nested shells (need >= 16)");

    const i64 X = spec.extents[0], Y = spec.extents[1], Z = spec.extents[2];
    const int shells = spec.classes - 1;
    Rng rng(spec.seed);

    // jittered center, then outer semi-axes that are guaranteed to fit
    double c[3], outer[3];
    for (int d = 0; d < 3; ++d) {
        const double ext = static_cast<double>(spec.extents[d]);
        c[d] = ext / 2 + rng.uniform(-ext / 8, ext / 8);
        const double room = std::min(c[d], ext - 1 - c[d]);
        outer[d] = rng.uniform(0.70, 0.92) * room;
    }
    // per-shell shrink ratios, outermost to innermost
    std::vector<double> ratio(static_cast<size_t>(shells), 1.0);
    for (int s = 1; s < shells; ++s)
        ratio[static_cast<size_t>(s)] = ratio[static_cast<size_t>(s - 1)] * rng.uniform(0.55, 0.72);

    // distinct per-class means per modality, alternating ramps plus jitter
    std::vector<double> mean(static_cast<size_t>(spec.modalities * spec.classes));
    for (int m = 0; m < spec.modalities; ++m)
        for (int cl = 0; cl < spec.classes; ++cl) {
            const double base = m % 2 == 0
                                    ? (cl + 0.5) / spec.classes
                                    : (spec.classes - cl - 0.5) / spec.classes;
            mean[static_cast<size_t>(m * spec.classes + cl)] = base + rng.uniform(-0.03, 0.03);
        }

    LabelVolume lv(Shape{X, Y, Z});
    for (i64 x = 0; x < X; ++x)
        for (i64 y = 0; y < Y; ++y)
            for (i64 z = 0; z < Z; ++z) {
                const double dx = (x - c[0]), dy = (y - c[1]), dz = (z - c[2]);
                int label = 0;
                for (int s = shells - 1; s >= 0; --s) {  // innermost first
                    const double r = ratio[static_cast<size_t>(s)];
                    const double q = dx * dx / (outer[0] * r * outer[0] * r) +
                                     dy * dy / (outer[1] * r * outer[1] * r) +
                                     dz * dz / (outer[2] * r * outer[2] * r);
                    if (q <= 1.0) {
                        label = spec.classes - 1 - (shells - 1 - s);
                        break;
                    }
                }
                lv.at(x, y, z) = static_cast<std::uint8_t>(label);
            }

    Tensor<float> vol(Shape{X, Y, Z, spec.modalities});
    for (i64 x = 0; x < X; ++x)
        for (i64 y = 0; y < Y; ++y)
            for (i64 z = 0; z < Z; ++z)
                for (int m = 0; m < spec.modalities; ++m) {
                    const int label = lv.at(x, y, z);
                    const double v = mean[static_cast<size_t>(m * spec.classes + label)] +
                                     spec.noise_sigma * rng.normal();
                    vol.data()[(((x * Y + y) * Z + z) * spec.modalities) + m] =
                        static_cast<float>(v);
                }
    return {normalize(vol), std::move(lv)};
}

std::vector<std::pair<Tensor<float>, LabelVolume>> sample_patches(
    const Tensor<float>& volume, const LabelVolume& labels, std::array<i64, 3> size, i64 n,
    double fg_bias, Rng& rng) {
    if (volume.rank() != 4) throw usage_error("sample_patches: volume must be [X,Y,Z,M]");
    if (Shape{volume.dim(0), volume.dim(1), volume.dim(2)} != labels.shape)
        throw usage_error("sample_patches: volume/label shape mismatch");
    const i64 M = volume.dim(3);
    for (int d = 0; d < 3; ++d) {
        if (size[static_cast<size_t>(d)] < 1)
            throw usage_error("sample_patches: patch extents must be positive");
        if (size[static_cast<size_t>(d)] > volume.dim(d))
            throw usage_error("sample_patches: patch " + std::to_string(size[static_cast<size_t>(d)]) +
                              " exceeds volume extent " + std::to_string(volume.dim(d)));
    }

    std::vector<i64> fg;
    for (i64 i = 0; i < labels.size(); ++i)
        if (labels.data[static_cast<size_t>(i)] > 0) fg.push_back(i);

    const i64 X = labels.shape[0], Y = labels.shape[1], Z = labels.shape[2];
    std::vector<std::pair<Tensor<float>, LabelVolume>> out;
    out.reserve(static_cast<size_t>(n));
    for (i64 k = 0; k < n; ++k) {
        i64 corner[3];
        if (!fg.empty() && rng.uniform() < fg_bias) {
            const i64 idx = fg[static_cast<size_t>(rng.below(fg.size()))];
            const i64 vz = idx % Z, vy = (idx / Z) % Y, vx = idx / (Z * Y);
            const i64 vox[3] = {vx, vy, vz};
            for (int d = 0; d < 3; ++d) {
                const i64 s = size[static_cast<size_t>(d)];
                const i64 hi = labels.shape[static_cast<size_t>(d)] - s;
                corner[d] = std::clamp(vox[d] - s / 2, i64(0), hi);
            }
        } else {
            for (int d = 0; d < 3; ++d)
                corner[d] = static_cast<i64>(
                    rng.below(labels.shape[static_cast<size_t>(d)] - size[static_cast<size_t>(d)] + 1));
        }

        Tensor<float> patch(Shape{size[0], size[1], size[2], M});
        LabelVolume plab(Shape{size[0], size[1], size[2]});
        plab.spacing = labels.spacing;
        for (i64 x = 0; x < size[0]; ++x)
            for (i64 y = 0; y < size[1]; ++y)
                for (i64 z = 0; z < size[2]; ++z) {
                    const i64 sx = corner[0] + x, sy = corner[1] + y, sz = corner[2] + z;
                    plab.at(x, y, z) = labels.at(sx, sy, sz);
                    for (i64 m = 0; m < M; ++m)
                        patch.data()[((x * size[1] + y) * size[2] + z) * M + m] =
                            volume.data()[((sx * Y + sy) * Z + sz) * M + m];
                }
        out.emplace_back(std::move(patch), std::move(plab));
    }
    return out;
}

template <typename T>
AdamState<T> make_adam(const Network<T>& net, double lr) {
    AdamState<T> s;
    s.lr = lr;
    for (const auto& name : net.param_names()) {
        const i64 n = net.param(name).size();
        s.m.emplace_back(static_cast<size_t>(n), T(0));
        s.v.emplace_back(static_cast<size_t>(n), T(0));
    }
    return s;
}

template <typename T>
LossReport<T> train_step(Network<T>& net, const Batch<T>& batch, AdamState<T>& opt,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (batch.inputs.empty() || batch.inputs.size() != batch.labels.size())
        throw usage_error("train_step: batch inputs/labels mismatch");
    const ModelConfig& mcfg = net.config();
    const i64 B = static_cast<i64>(batch.inputs.size());

    std::vector<const LabelVolume*> pooled;
    for (const auto& lv : batch.labels) pooled.push_back(&lv);
    const Tensor<T> weights = inverse_frequency_weights<T>(pooled, mcfg.classes);

    LossReport<T> report;
    {
        TapeScope<T> scope;
        Tensor<T> margin_sum, ce_sum, recon_sum;
        for (i64 i = 0; i < B; ++i) {
            const auto& input = batch.inputs[static_cast<size_t>(i)];
            const auto& labels = batch.labels[static_cast<size_t>(i)];
            ForwardResult<T> out = forward(net, input);
            Tensor<T> gt8 = downsample_labels<T>(labels, 8, mcfg.classes);
            Tensor<T> m = margin_loss(out.caps_len, gt8);
            Tensor<T> ce = weighted_ce(out.seg, labels, weights);
            Tensor<T> mse = masked_mse(out.recon, input, labels);
            margin_sum = i == 0 ? m : add(margin_sum, m);
            ce_sum = i == 0 ? ce : add(ce_sum, ce);
            recon_sum = i == 0 ? mse : add(recon_sum, mse);
        }
        const double inv_b = 1.0 / static_cast<double>(B);
        report = total_loss(scale(margin_sum, inv_b), scale(ce_sum, inv_b),
                            scale(recon_sum, inv_b), mcfg);
        scope.backward(report.total);
    }

    // AdamW: moments from the raw gradient, weight decay decoupled
    opt.step += 1;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
    const auto& names = net.param_names();
    for (size_t pi = 0; pi < names.size(); ++pi) {
        Tensor<T>& p = net.param(names[pi]);
        if (!p.requires_grad()) continue;
        const T* g = p.grad();
        T* w = p.data();
        std::vector<T>& m = opt.m[pi];
        std::vector<T>& v = opt.v[pi];
        for (i64 k = 0; k < p.size(); ++k) {
            const double gk = static_cast<double>(g[k]);
            const double mk = b1 * static_cast<double>(m[static_cast<size_t>(k)]) + (1 - b1) * gk;
            const double vk =
                b2 * static_cast<double>(v[static_cast<size_t>(k)]) + (1 - b2) * gk * gk;
            m[static_cast<size_t>(k)] = static_cast<T>(mk);
            v[static_cast<size_t>(k)] = static_cast<T>(vk);
            const double update =
                opt.lr * ((mk / bc1) / (std::sqrt(vk / bc2) + eps) +
                          cfg.weight_decay * static_cast<double>(w[k]));
            w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
        }
        for (i64 k = 0; k < p.size(); ++k)
            if (!std::isfinite(static_cast<double>(w[k])))
                throw numeric_error("parameter '" + names[pi] + "' became non-finite");
    }
    net.zero_grads();
    return report;
}

ScheduleState schedule_update(ScheduleState state, double val_dsc, i64 iteration,
                              const TrainConfig& cfg) {
    if (val_dsc > state.best_dsc + cfg.improve_threshold) {
        state.best_dsc = val_dsc;
        state.best_iteration = iteration;
        state.decay_marker = iteration;
    } else if (iteration - state.decay_marker >= cfg.plateau_patience) {
        state.lr *= cfg.lr_decay_factor;
        state.decay_marker = iteration;
    }
    if (iteration - state.best_iteration >= cfg.early_stop_patience) state.stop = true;
    return state;
}

LabelVolume sliding_window_infer(const Network<float>& net, const Tensor<float>& volume,
                                 std::array<i64, 3> patch, double overlap) {
    if (volume.rank() != 4) throw usage_error("infer: volume must be [X,Y,Z,M]");
    if (overlap < 0 || overlap >= 1) throw usage_error("infer: overlap must be in [0,1)");
    const i64 C = net.config().classes;
    const i64 M = volume.dim(3);
    const i64 ext[3] = {volume.dim(0), volume.dim(1), volume.dim(2)};
    for (int d = 0; d < 3; ++d)
        if (patch[static_cast<size_t>(d)] > ext[d])
            throw usage_error("infer: volume smaller than patch");

    // tile corners per axis: fixed stride, final tile flush with the border
    std::array<std::vector<i64>, 3> corners;
    for (int d = 0; d < 3; ++d) {
        const i64 p = patch[static_cast<size_t>(d)];
        const i64 stride = std::max<i64>(1, static_cast<i64>(std::llround(p * (1.0 - overlap))));
        for (i64 c0 = 0;; c0 += stride) {
            if (c0 + p >= ext[d]) {
                corners[static_cast<size_t>(d)].push_back(ext[d] - p);
                break;
            }
            corners[static_cast<size_t>(d)].push_back(c0);
        }
    }

    std::vector<double> acc(static_cast<size_t>(ext[0] * ext[1] * ext[2] * C), 0.0);
    Tensor<float> tile(Shape{patch[0], patch[1], patch[2], M});
    for (const i64 cx : corners[0])
        for (const i64 cy : corners[1])
            for (const i64 cz : corners[2]) {
                for (i64 x = 0; x < patch[0]; ++x)
                    for (i64 y = 0; y < patch[1]; ++y)
                        for (i64 z = 0; z < patch[2]; ++z)
                            for (i64 m = 0; m < M; ++m)
                                tile.data()[((x * patch[1] + y) * patch[2] + z) * M + m] =
                                    volume.data()[(((cx + x) * ext[1] + cy + y) * ext[2] + cz +
                                                   z) *
                                                      M +
                                                  m];
                ForwardResult<float> out = forward(net, tile);
                for (i64 x = 0; x < patch[0]; ++x)
                    for (i64 y = 0; y < patch[1]; ++y)
                        for (i64 z = 0; z < patch[2]; ++z)
                            for (i64 cl = 0; cl < C; ++cl)
                                acc[static_cast<size_t>(
                                    (((cx + x) * ext[1] + cy + y) * ext[2] + cz + z) * C + cl)] +=
                                    out.seg.data()[((x * patch[1] + y) * patch[2] + z) * C + cl];
            }

    // covering-tile counts cancel in the per-voxel argmax; ties go low
    LabelVolume pred(Shape{ext[0], ext[1], ext[2]});
    for (i64 v = 0; v < ext[0] * ext[1] * ext[2]; ++v) {
        int best = 0;
        double best_p = acc[static_cast<size_t>(v * C)];
        for (i64 cl = 1; cl < C; ++cl) {
            const double p = acc[static_cast<size_t>(v * C + cl)];
            if (p > best_p) {
                best_p = p;
                best = static_cast<int>(cl);
            }
        }
        pred.data[static_cast<size_t>(v)] = static_cast<std::uint8_t>(best);
    }
    return pred;
}

TrainResult run_training(const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::string& arch, const std::string& data_dir,
                         const std::string& checkpoint_path, const std::string& log_path) {
    mcfg.validate();
    tcfg.validate();
    const Manifest manifest = read_manifest(data_dir + "/manifest.json");
    if (manifest.entries.empty()) throw io_error("manifest lists no volumes");

    std::vector<Tensor<float>> volumes;
    std::vector<LabelVolume> labels;
    for (const auto& e : manifest.entries) {
        volumes.push_back(read_volume(data_dir + "/" + e.volume));
        labels.push_back(read_labels(data_dir + "/" + e.labels));
    }
    // last entry is the validation split; with one entry it doubles as both
    const size_t val_idx = volumes.size() - 1;
    const size_t train_n = volumes.size() > 1 ? volumes.size() - 1 : 1;

    Network<float> net = arch == kArchConvCaps
                             ? build_convcaps<float>(mcfg, tcfg.seed)
                             : arch == kArchConvBaseline
                                 ? build_conv_baseline<float>(mcfg, tcfg.seed)
                                 : throw usage_error("unknown architecture '" + arch + "'");
    AdamState<float> opt = make_adam(net, tcfg.learning_rate);
    ScheduleState sched;
    sched.lr = tcfg.learning_rate;

    std::ofstream log(log_path);
    if (!log) throw io_error("cannot open '" + log_path + "' for writing");
    log << "# architecture: " << arch << "\n";
    log << "iter,lr,margin,ce,recon,total,val_dsc\n";

    Rng sampler(tcfg.seed * 0x9E3779B97F4A7C15ULL + 1);
    TrainResult result;
    double last_val = 0;
    for (i64 iter = 1; iter <= tcfg.max_iterations; ++iter) {
        const size_t vi = train_n == 1 ? 0 : static_cast<size_t>(sampler.below(train_n));
        auto patches = sample_patches(volumes[vi], labels[vi], tcfg.patch_size, tcfg.batch_size,
                                      tcfg.fg_bias, sampler);
        Batch<float> batch;
        for (auto& [p, l] : patches) {
            batch.inputs.push_back(std::move(p));
            batch.labels.push_back(std::move(l));
        }
        opt.lr = sched.lr;
        const LossReport<float> rep = train_step(net, batch, opt, tcfg);

        if (iter == 1 || iter % tcfg.val_interval == 0 || iter == tcfg.max_iterations) {
            const LabelVolume pred =
                sliding_window_infer(net, volumes[val_idx], tcfg.patch_size);
            last_val = evaluate_segmentation(labels[val_idx], pred, mcfg.classes).macro.dsc;
            sched = schedule_update(sched, last_val, iter, tcfg);
            if (sched.best_iteration == iter) save_checkpoint(net, checkpoint_path);
        }

        char row[256];
        std::snprintf(row, sizeof row, "%lld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                      static_cast<long long>(iter), sched.lr,
                      static_cast<double>(rep.margin.item()),
                      static_cast<double>(rep.ce.item()),
                      static_cast<double>(rep.recon.item()),
                      static_cast<double>(rep.total.item()), last_val);
        log << row;
        log.flush();

        result.iterations = iter;
        if (sched.stop) {
            result.early_stopped = true;
            break;
        }
    }
    result.best_val_dsc = sched.best_dsc;
    return result;
}

#define CONVCAPS_PIPELINE_INSTANTIATE(T)                                        \
    template Tensor<T> normalize(const Tensor<T>&);                             \
    template AdamState<T> make_adam(const Network<T>&, double);                 \
    template LossReport<T> train_step(Network<T>&, const Batch<T>&,             \
                                      AdamState<T>&, const TrainConfig&);

CONVCAPS_PIPELINE_INSTANTIATE(float)
CONVCAPS_PIPELINE_INSTANTIATE(double)
#undef CONVCAPS_PIPELINE_INSTANTIATE

}  // namespace convcaps
