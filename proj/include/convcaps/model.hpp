#ifndef CONVCAPS_MODEL_HPP
#define CONVCAPS_MODEL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "convcaps/capsule.hpp"
#include "convcaps/conv.hpp"
#include "convcaps/tensor.hpp"

namespace convcaps {

struct ModelConfig {
    int in_channels = 2;   // e.g. two MRI modalities
    int classes = 4;       // background + 3 tissue classes

    // feature extraction: three 5^3 convs at full resolution
    std::array<int, 3> visual_channels{16, 32, 64};
    std::array<int, 3> visual_dilations{1, 3, 3};
    int visual_kernel = 5;

    // two stride-2 3^3 convs taking the grid to H/4
    std::array<int, 2> encoder_channels{128, 128};

    // capsule stack: primary types, then the two 8-type layers' types;
    // dims are the pose sizes after each of the three convolutional
    // capsule layers (the last one always has `classes` types)
    std::array<int, 2> capsule_types{8, 8};
    std::array<int, 3> capsule_dims{16, 16, 32};
    int routing_iterations = 3;
    int first_capsule_stride = 2;

    std::array<int, 3> decoder_channels{128, 64, 32};

    double margin_weight = 1.0;
    double ce_weight = 1.0;
    double reconstruction_weight = 1.0;

    // The micro variant used by fast end-to-end tests.
    static ModelConfig tiny() {
        ModelConfig c;
        c.in_channels = 1;
        c.classes = 2;
        c.visual_channels = {4, 4, 8};
        c.encoder_channels = {16, 16};
        c.capsule_types = {2, 2};
        c.capsule_dims = {4, 4, 8};
        c.decoder_channels = {16, 8, 4};
        return c;
    }

    void validate() const;
    // pose dimension of the primary capsules (encoder channels split into types)
    int primary_pose_dim() const { return encoder_channels[1] / capsule_types[0]; }
};

constexpr const char* kArchConvCaps = "convcaps";
constexpr const char* kArchConvBaseline = "conv_baseline";

// A named-parameter container plus the config/tag needed to rebuild the layer
// chain. Parameters keep their declaration order (the checkpoint layout).
template <typename T>
class Network {
  public:
    Network(ModelConfig cfg, std::string arch) : cfg_(std::move(cfg)), arch_(std::move(arch)) {}

    const ModelConfig& config() const { return cfg_; }
    const std::string& arch() const { return arch_; }

    Tensor<T>& param(const std::string& name);
    const Tensor<T>& param(const std::string& name) const;
    const std::vector<std::string>& param_names() const { return order_; }
    std::vector<Tensor<T>> params() const;
    i64 count_params() const;
    void zero_grads();

    // registration used by the builders / checkpoint loader
    Tensor<T>& add_param(const std::string& name, Tensor<T> value);

  private:
    ModelConfig cfg_;
    std::string arch_;
    std::vector<std::string> order_;
    std::map<std::string, Tensor<T>> by_name_;
};

template <typename T>
struct ForwardResult {
    Tensor<T> seg;       // [X,Y,Z,C], rows on the probability simplex
    Tensor<T> caps_len;  // [X/8,Y/8,Z/8,C], entries in [0,1)
    Tensor<T> recon;     // [X,Y,Z,M]
};

template <typename T>
Network<T> build_convcaps(const ModelConfig& cfg, std::uint64_t seed);
template <typename T>
Network<T> build_conv_baseline(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& input);

// Analytic per-layer shape/parameter table (no tensor computation), used by
// the inspect command and shape tests.
struct LayerInfo {
    std::string name;
    std::array<i64, 3> extent;  // spatial output extents
    i64 channels;               // flattened channel count (T*A for capsules)
    i64 params;
};
std::vector<LayerInfo> layer_table(const ModelConfig& cfg, const std::string& arch, i64 X, i64 Y,
                                   i64 Z);
std::string describe(const ModelConfig& cfg, const std::string& arch, i64 X, i64 Y, i64 Z);

// Binary checkpoint: magic, canonical JSON config (with the architecture tag),
// then every parameter in declaration order as little-endian f32.
void save_checkpoint(const Network<float>& net, const std::string& path);
Network<float> load_checkpoint(const std::string& path);

}  // namespace convcaps

#endif
