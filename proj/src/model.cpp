#include "convcaps/model.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace convcaps {

using nlohmann::json;

void ModelConfig::validate() const {
    if (in_channels < 1) throw usage_error("model: in_channels must be >= 1");
    if (classes < 2) throw usage_error("model: classes must be >= 2");
    for (int c : visual_channels)
        if (c < 1) throw usage_error("model: visual channels must be positive");
    for (int d : visual_dilations)
        if (d < 1) throw usage_error("model: dilations must be positive");
    if (visual_kernel < 1 || visual_kernel % 2 == 0)
        throw usage_error("model: visual kernel must be odd and positive");
    for (int c : encoder_channels)
        if (c < 1) throw usage_error("model: encoder channels must be positive");
    for (int t : capsule_types)
        if (t < 1) throw usage_error("model: capsule types must be positive");
    for (int a : capsule_dims)
        if (a < 1) throw usage_error("model: capsule dims must be positive");
    if (encoder_channels[1] % capsule_types[0] != 0)
        throw usage_error("model: encoder output channels (" +
                          std::to_string(encoder_channels[1]) +
                          ") must split evenly into " + std::to_string(capsule_types[0]) +
                          " capsule types");
    if (routing_iterations < 1) throw usage_error("model: routing iterations must be >= 1");
    if (first_capsule_stride < 1) throw usage_error("model: capsule stride must be >= 1");
    for (int c : decoder_channels)
        if (c < 1) throw usage_error("model: decoder channels must be positive");
    if (margin_weight < 0 || ce_weight < 0 || reconstruction_weight < 0)
        throw usage_error("model: loss weights must be non-negative");
}

namespace {

void to_json(json& j, const ModelConfig& c) {
    j = json{{"in_channels", c.in_channels},
             {"classes", c.classes},
             {"visual_channels", c.visual_channels},
             {"visual_dilations", c.visual_dilations},
             {"visual_kernel", c.visual_kernel},
             {"encoder_channels", c.encoder_channels},
             {"capsule_types", c.capsule_types},
             {"capsule_dims", c.capsule_dims},
             {"routing_iterations", c.routing_iterations},
             {"first_capsule_stride", c.first_capsule_stride},
             {"decoder_channels", c.decoder_channels},
             {"margin_weight", c.margin_weight},
             {"ce_weight", c.ce_weight},
             {"reconstruction_weight", c.reconstruction_weight}};
}

template <typename A>
void arr_from_json(const json& j, const char* key, A& out) {
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != out.size())
        throw io_error(std::string("checkpoint config: bad field '") + key + "'");
    for (size_t i = 0; i < out.size(); ++i) out[i] = v[i].get<typename A::value_type>();
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.classes = j.at("classes").get<int>();
    arr_from_json(j, "visual_channels", c.visual_channels);
    arr_from_json(j, "visual_dilations", c.visual_dilations);
    c.visual_kernel = j.at("visual_kernel").get<int>();
    arr_from_json(j, "encoder_channels", c.encoder_channels);
    arr_from_json(j, "capsule_types", c.capsule_types);
    arr_from_json(j, "capsule_dims", c.capsule_dims);
    c.routing_iterations = j.at("routing_iterations").get<int>();
    c.first_capsule_stride = j.at("first_capsule_stride").get<int>();
    arr_from_json(j, "decoder_channels", c.decoder_channels);
    c.margin_weight = j.at("margin_weight").get<double>();
    c.ce_weight = j.at("ce_weight").get<double>();
    c.reconstruction_weight = j.at("reconstruction_weight").get<double>();
    return c;
}

template <typename T>
Tensor<T> he_uniform(Shape shape, i64 fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    for (i64 i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <typename T>
void add_conv(Network<T>& net, const std::string& name, int k, i64 cin, i64 cout, Rng& rng) {
    net.add_param(name + ".weight",
                  he_uniform<T>({k, k, k, cin, cout}, static_cast<i64>(k) * k * k * cin, rng))
        .set_requires_grad(true);
    net.add_param(name + ".bias", Tensor<T>(Shape{cout})).set_requires_grad(true);
}

template <typename T>
void add_caps(Network<T>& net, const std::string& name, int k, i64 tin, i64 tout, i64 ain,
              i64 aout, Rng& rng) {
    net.add_param(name + ".weight",
                  he_uniform<T>({k, k, k, tin, tout, ain, aout},
                                static_cast<i64>(k) * k * k * tin * ain, rng))
        .set_requires_grad(true);
}

// Shared trunk and decoder registration; the capsule stage differs per arch.
template <typename T>
void add_trunk(Network<T>& net, const ModelConfig& c, Rng& rng) {
    add_conv(net, "visual1", c.visual_kernel, c.in_channels, c.visual_channels[0], rng);
    add_conv(net, "visual2", c.visual_kernel, c.visual_channels[0], c.visual_channels[1], rng);
    add_conv(net, "visual3", c.visual_kernel, c.visual_channels[1], c.visual_channels[2], rng);
    add_conv(net, "enc1", 3, c.visual_channels[2], c.encoder_channels[0], rng);
    add_conv(net, "enc2", 3, c.encoder_channels[0], c.encoder_channels[1], rng);
}

template <typename T>
void add_decoder(Network<T>& net, const ModelConfig& c, Rng& rng) {
    const i64 bottom = static_cast<i64>(c.classes) * c.capsule_dims[2];
    add_conv(net, "dec1", 3, bottom + c.encoder_channels[1], c.decoder_channels[0], rng);
    add_conv(net, "dec2", 3, c.decoder_channels[0] + c.encoder_channels[0],
             c.decoder_channels[1], rng);
    add_conv(net, "dec3", 3, c.decoder_channels[1] + c.visual_channels[2],
             c.decoder_channels[2], rng);
    add_conv(net, "seg", 1, c.decoder_channels[2], c.classes, rng);
    add_conv(net, "recon1", 1, c.decoder_channels[2], 2 * c.decoder_channels[2], rng);
    add_conv(net, "recon2", 1, 2 * c.decoder_channels[2], c.in_channels, rng);
}

}  // namespace

template <typename T>
Tensor<T>& Network<T>::param(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw usage_error("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
const Tensor<T>& Network<T>::param(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw usage_error("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::params() const {
    std::vector<Tensor<T>> out;
    out.reserve(order_.size());
    for (const auto& n : order_) out.push_back(by_name_.at(n));
    return out;
}

template <typename T>
i64 Network<T>::count_params() const {
    i64 total = 0;
    for (const auto& [name, t] : by_name_) total += t.size();
    return total;
}

template <typename T>
void Network<T>::zero_grads() {
    for (auto& [name, t] : by_name_) t.zero_grad();
}

template <typename T>
Tensor<T>& Network<T>::add_param(const std::string& name, Tensor<T> value) {
    if (by_name_.count(name)) throw usage_error("duplicate parameter '" + name + "'");
    order_.push_back(name);
    return by_name_.emplace(name, std::move(value)).first->second;
}

template <typename T>
Network<T> build_convcaps(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network<T> net(cfg, kArchConvCaps);
    Rng rng(seed);
    add_trunk(net, cfg, rng);
    const int a0 = cfg.primary_pose_dim();
    add_caps(net, "caps1", 3, cfg.capsule_types[0], cfg.capsule_types[1], a0,
             cfg.capsule_dims[0], rng);
    add_caps(net, "caps2", 3, cfg.capsule_types[1], cfg.capsule_types[1], cfg.capsule_dims[0],
             cfg.capsule_dims[1], rng);
    add_caps(net, "caps3", 3, cfg.capsule_types[1], cfg.classes, cfg.capsule_dims[1],
             cfg.capsule_dims[2], rng);
    add_decoder(net, cfg, rng);
    return net;
}

template <typename T>
Network<T> build_conv_baseline(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network<T> net(cfg, kArchConvBaseline);
    Rng rng(seed);
    add_trunk(net, cfg, rng);
    // capsule layers swapped for plain convs with T*A channels each
    add_conv(net, "caps1", 3, cfg.encoder_channels[1],
             cfg.capsule_types[1] * cfg.capsule_dims[0], rng);
    add_conv(net, "caps2", 3, cfg.capsule_types[1] * cfg.capsule_dims[0],
             cfg.capsule_types[1] * cfg.capsule_dims[1], rng);
    add_conv(net, "caps3", 3, cfg.capsule_types[1] * cfg.capsule_dims[1],
             cfg.classes * cfg.capsule_dims[2], rng);
    // low-resolution class probabilities standing in for capsule lengths
    add_conv(net, "margin_head", 1, cfg.classes * cfg.capsule_dims[2], cfg.classes, rng);
    add_decoder(net, cfg, rng);
    return net;
}

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& input) {
    const ModelConfig& c = net.config();
    if (input.rank() != 4) throw usage_error("forward: input must be [X,Y,Z,M]");
    if (input.dim(3) != c.in_channels)
        throw usage_error("forward: expected " + std::to_string(c.in_channels) +
                          " input channels, got " + std::to_string(input.dim(3)));
    for (int d = 0; d < 3; ++d)
        if (input.dim(d) % 8 != 0)
            throw usage_error("forward: spatial extents must be divisible by 8, got " +
                              shape_str(input.shape()));

    auto conv = [&](const Tensor<T>& x, const std::string& name, const ConvSpec& spec) {
        return conv3d(x, net.param(name + ".weight"), net.param(name + ".bias"), spec);
    };

    const ConvSpec vis1 = ConvSpec::make(c.visual_kernel, 1, c.visual_dilations[0]);
    const ConvSpec vis2 = ConvSpec::make(c.visual_kernel, 1, c.visual_dilations[1]);
    const ConvSpec vis3 = ConvSpec::make(c.visual_kernel, 1, c.visual_dilations[2]);
    Tensor<T> v1 = relu(conv(input, "visual1", vis1));
    Tensor<T> v2 = relu(conv(v1, "visual2", vis2));
    Tensor<T> v3 = relu(conv(v2, "visual3", vis3));
    Tensor<T> e1 = relu(conv(v3, "enc1", ConvSpec::make(3, 2)));
    Tensor<T> e2 = relu(conv(e1, "enc2", ConvSpec::make(3, 2)));

    Tensor<T> bottom;    // H/8 features feeding the decoder, C*A channels
    Tensor<T> caps_len;  // per-class presence at H/8
    if (net.arch() == kArchConvCaps) {
        CapsuleMap<T> pc = primary_caps(e2, c.capsule_types[0]);
        auto c1 = conv_capsule(pc, net.param("caps1.weight"),
                               ConvSpec::make(3, c.first_capsule_stride),
                               c.routing_iterations);
        auto c2 = conv_capsule(c1.out, net.param("caps2.weight"), ConvSpec::make(3, 1),
                               c.routing_iterations);
        auto c3 = conv_capsule(c2.out, net.param("caps3.weight"), ConvSpec::make(3, 1),
                               c.routing_iterations);
        caps_len = capsule_length(c3.out);
        const Shape& s = c3.out.poses.shape();
        bottom = reshape(c3.out.poses, Shape{s[0], s[1], s[2], s[3] * s[4]});
    } else {
        Tensor<T> b1 = relu(conv(e2, "caps1", ConvSpec::make(3, c.first_capsule_stride)));
        Tensor<T> b2 = relu(conv(b1, "caps2", ConvSpec::make(3, 1)));
        bottom = relu(conv(b2, "caps3", ConvSpec::make(3, 1)));
        caps_len = softmax(conv(bottom, "margin_head", ConvSpec::make(1)), -1);
    }

    Tensor<T> d1 = relu(conv(concat<T>({upsample3d(bottom, 2), e2}, 3), "dec1",
                             ConvSpec::make(3)));
    Tensor<T> d2 = relu(conv(concat<T>({upsample3d(d1, 2), e1}, 3), "dec2", ConvSpec::make(3)));
    Tensor<T> d3 = relu(conv(concat<T>({upsample3d(d2, 2), v3}, 3), "dec3", ConvSpec::make(3)));

    ForwardResult<T> out;
    out.seg = softmax(conv(d3, "seg", ConvSpec::make(1)), -1);
    out.caps_len = caps_len;
    Tensor<T> r1 = relu(conv(d3, "recon1", ConvSpec::make(1)));
    out.recon = conv(r1, "recon2", ConvSpec::make(1));  // linear output
    return out;
}

std::vector<LayerInfo> layer_table(const ModelConfig& c, const std::string& arch, i64 X, i64 Y,
                                   i64 Z) {
    c.validate();
    if (arch != kArchConvCaps && arch != kArchConvBaseline)
        throw usage_error("unknown architecture tag '" + arch + "'");
    auto half = [](std::array<i64, 3> e, int s) {
        for (auto& v : e) v = (v + s - 1) / s;
        return e;
    };
    const i64 k3 = static_cast<i64>(27);
    const i64 vk = static_cast<i64>(c.visual_kernel);
    const i64 vk3 = vk * vk * vk;

    std::vector<LayerInfo> t;
    std::array<i64, 3> e{X, Y, Z};
    t.push_back({"input", e, c.in_channels, 0});
    i64 cin = c.in_channels;
    for (int i = 0; i < 3; ++i) {
        const i64 cout = c.visual_channels[static_cast<size_t>(i)];
        t.push_back({"visual" + std::to_string(i + 1), e, cout, vk3 * cin * cout + cout});
        cin = cout;
    }
    e = half(e, 2);
    t.push_back({"enc1", e, c.encoder_channels[0],
                 k3 * cin * c.encoder_channels[0] + c.encoder_channels[0]});
    e = half(e, 2);
    t.push_back({"enc2", e, c.encoder_channels[1],
                 k3 * static_cast<i64>(c.encoder_channels[0]) * c.encoder_channels[1] +
                     c.encoder_channels[1]});

    const i64 t0 = c.capsule_types[0], t1 = c.capsule_types[1];
    const i64 a0 = c.primary_pose_dim();
    const i64 d0 = c.capsule_dims[0], d1 = c.capsule_dims[1], d2 = c.capsule_dims[2];
    const i64 cls = c.classes;
    if (arch == kArchConvCaps) {
        t.push_back({"primary_caps " + std::to_string(t0) + "x" + std::to_string(a0), e,
                     t0 * a0, 0});
        e = half(e, c.first_capsule_stride);
        t.push_back({"caps1 " + std::to_string(t1) + "x" + std::to_string(d0), e, t1 * d0,
                     k3 * t0 * t1 * a0 * d0});
        t.push_back({"caps2 " + std::to_string(t1) + "x" + std::to_string(d1), e, t1 * d1,
                     k3 * t1 * t1 * d0 * d1});
        t.push_back({"caps3 " + std::to_string(cls) + "x" + std::to_string(d2), e, cls * d2,
                     k3 * t1 * cls * d1 * d2});
    } else {
        e = half(e, c.first_capsule_stride);
        t.push_back({"caps1 (conv)", e, t1 * d0,
                     k3 * static_cast<i64>(c.encoder_channels[1]) * t1 * d0 + t1 * d0});
        t.push_back({"caps2 (conv)", e, t1 * d1, k3 * t1 * d0 * t1 * d1 + t1 * d1});
        t.push_back({"caps3 (conv)", e, cls * d2, k3 * t1 * d1 * cls * d2 + cls * d2});
        t.push_back({"margin_head", e, cls, cls * d2 * cls + cls});
    }

    const i64 bottom = cls * d2;
    std::array<i64, 3> up = e;
    const i64 dch0 = c.decoder_channels[0], dch1 = c.decoder_channels[1],
              dch2 = c.decoder_channels[2];
    for (auto& v : up) v *= 2;
    t.push_back({"dec1", up, dch0,
                 k3 * (bottom + c.encoder_channels[1]) * dch0 + dch0});
    for (auto& v : up) v *= 2;
    t.push_back({"dec2", up, dch1, k3 * (dch0 + c.encoder_channels[0]) * dch1 + dch1});
    for (auto& v : up) v *= 2;
    t.push_back({"dec3", up, dch2, k3 * (dch1 + c.visual_channels[2]) * dch2 + dch2});
    t.push_back({"seg", up, cls, dch2 * cls + cls});
    t.push_back({"recon1", up, 2 * dch2, dch2 * 2 * dch2 + 2 * dch2});
    t.push_back({"recon2", up, c.in_channels, 2 * dch2 * c.in_channels + c.in_channels});
    return t;
}

std::string describe(const ModelConfig& cfg, const std::string& arch, i64 X, i64 Y, i64 Z) {
    const auto table = layer_table(cfg, arch, X, Y, Z);
    std::ostringstream os;
    os << "architecture: " << arch << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %-16s %12s\n", "layer", "output", "params");
    os << line;
    i64 total = 0;
    for (const auto& l : table) {
        std::ostringstream shape;
        shape << l.extent[0] << "x" << l.extent[1] << "x" << l.extent[2] << "x" << l.channels;
        std::snprintf(line, sizeof line, "%-22s %-16s %12lld\n", l.name.c_str(),
                      shape.str().c_str(), static_cast<long long>(l.params));
        os << line;
        total += l.params;
    }
    os << "total parameters: " << total << "\n";
    return os.str();
}

namespace {

constexpr unsigned char kMagic[8] = {'3', 'D', 'C', 'C', '\0', '0', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

float get_f32(std::istream& is) {
    const std::uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace

void save_checkpoint(const Network<float>& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(kMagic), 8);

    json j;
    to_json(j, net.config());
    j["arch"] = net.arch();
    const std::string cfg = j.dump();
    put_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    for (const auto& name : net.param_names()) {
        const Tensor<float>& p = net.param(name);
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(p.rank()));
        for (int d = 0; d < p.rank(); ++d) put_u32(os, static_cast<std::uint32_t>(p.dim(d)));
        for (i64 i = 0; i < p.size(); ++i) put_f32(os, p.data()[i]);
    }
    if (!os) throw io_error("write failed for '" + path + "'");
}

Network<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path + "'");
    unsigned char magic[8];
    is.read(reinterpret_cast<char*>(magic), 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw io_error("checkpoint '" + path + "': version mismatch (bad magic)");

    const std::uint32_t cfg_len = get_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw io_error("checkpoint: truncated config block");

    json j;
    try {
        j = json::parse(cfg_text);
    } catch (const json::exception& e) {
        throw io_error(std::string("checkpoint: bad config JSON: ") + e.what());
    }
    const std::string arch = j.at("arch").get<std::string>();
    const ModelConfig cfg = config_from_json(j);

    Network<float> net = arch == kArchConvCaps ? build_convcaps<float>(cfg, 0)
                         : arch == kArchConvBaseline
                             ? build_conv_baseline<float>(cfg, 0)
                             : throw io_error("checkpoint: unknown architecture tag '" + arch +
                                              "'");

    for (const auto& want_name : net.param_names()) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw io_error("checkpoint: truncated parameter name");
        if (name != want_name)
            throw io_error("checkpoint: expected parameter '" + want_name + "', found '" +
                           name + "'");
        Tensor<float>& p = net.param(name);
        const std::uint32_t rank = get_u32(is);
        if (static_cast<int>(rank) != p.rank())
            throw io_error("checkpoint: rank mismatch for '" + name + "'");
        for (int d = 0; d < p.rank(); ++d)
            if (get_u32(is) != static_cast<std::uint32_t>(p.dim(d)))
                throw io_error("checkpoint: shape mismatch for '" + name + "'");
        for (i64 i = 0; i < p.size(); ++i) p.data()[i] = get_f32(is);
    }
    return net;
}

#define CONVCAPS_MODEL_INSTANTIATE(T)                                           \
    template class Network<T>;                                                  \
    template Network<T> build_convcaps<T>(const ModelConfig&, std::uint64_t);   \
    template Network<T> build_conv_baseline<T>(const ModelConfig&,              \
                                               std::uint64_t);                  \
    template ForwardResult<T> forward(const Network<T>&, const Tensor<T>&);

CONVCAPS_MODEL_INSTANTIATE(float)
CONVCAPS_MODEL_INSTANTIATE(double)
#undef CONVCAPS_MODEL_INSTANTIATE

}  // namespace convcaps
