#include "convcaps/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace convcaps {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    std::from_chars_result r;
    if constexpr (std::is_floating_point_v<T>) {
        // gcc 11 has no float from_chars on all targets; strtod is exact enough
        char* end = nullptr;
        const double d = std::strtod(value.c_str(), &end);
        if (end != value.c_str() + value.size() || value.empty())
            throw usage_error("config: bad value '" + value + "' for " + key);
        return static_cast<T>(d);
    } else {
        r = std::from_chars(first, last, out);
        if (r.ec != std::errc() || r.ptr != last)
            throw usage_error("config: bad value '" + value + "' for " + key);
        return out;
    }
}

template <typename T, size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& value) {
    std::array<T, N> out{};
    std::stringstream ss(value);
    std::string item;
    size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= N) throw usage_error("config: " + key + " wants " + std::to_string(N) + " values");
        out[i++] = parse_num<T>(key, trim(item));
    }
    if (i != N) throw usage_error("config: " + key + " wants " + std::to_string(N) + " values");
    return out;
}

// shortest decimal form that parses back to the same double
std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

template <typename T, size_t N>
std::string fmt_list(const std::array<T, N>& a) {
    std::string out;
    for (size_t i = 0; i < N; ++i) {
        if (i) out += ",";
        out += std::to_string(a[i]);
    }
    return out;
}

struct Field {
    const char* key;
    const char* doc;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define NUM_FIELD(key, ref, doc)                                                      \
    Field {                                                                           \
        key, doc,                                                                     \
            [](RunConfig& c, const std::string& v) {                                  \
                c.ref = parse_num<std::decay_t<decltype(c.ref)>>(key, v);             \
            },                                                                        \
            [](const RunConfig& c) {                                                  \
                if constexpr (std::is_floating_point_v<std::decay_t<decltype(c.ref)>>)\
                    return fmt_double(static_cast<double>(c.ref));                    \
                else                                                                  \
                    return std::to_string(c.ref);                                     \
            }                                                                         \
    }

#define LIST_FIELD(key, ref, doc)                                                          \
    Field {                                                                                \
        key, doc,                                                                          \
            [](RunConfig& c, const std::string& v) {                                       \
                c.ref = parse_list<std::decay_t<decltype(c.ref)>::value_type,              \
                                   std::tuple_size_v<std::decay_t<decltype(c.ref)>>>(key,  \
                                                                                      v);  \
            },                                                                             \
            [](const RunConfig& c) { return fmt_list(c.ref); }                             \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        // model
        NUM_FIELD("in_channels", model.in_channels, "2 -- input modalities M"),
        NUM_FIELD("classes", model.classes, "4 -- segmentation classes incl. background"),
        LIST_FIELD("visual_channels", model.visual_channels,
                   "16,32,64 -- full-resolution feature conv widths"),
        LIST_FIELD("visual_dilations", model.visual_dilations,
                   "1,3,3 -- dilations of the three feature convs"),
        NUM_FIELD("visual_kernel", model.visual_kernel, "5 -- feature conv kernel size"),
        LIST_FIELD("encoder_channels", model.encoder_channels,
                   "128,128 -- stride-2 encoder conv widths"),
        LIST_FIELD("capsule_types", model.capsule_types,
                   "8,8 -- capsule type counts (primary, middle layers)"),
        LIST_FIELD("capsule_dims", model.capsule_dims,
                   "16,16,32 -- pose dims after each capsule layer"),
        NUM_FIELD("routing_iterations", model.routing_iterations,
                  "3 -- agreement routing rounds"),
        NUM_FIELD("first_capsule_stride", model.first_capsule_stride,
                  "2 -- stride of the first convolutional capsule layer"),
        LIST_FIELD("decoder_channels", model.decoder_channels,
                   "128,64,32 -- decoder conv widths"),
        NUM_FIELD("margin_weight", model.margin_weight, "1 -- margin loss weight"),
        NUM_FIELD("ce_weight", model.ce_weight, "1 -- weighted cross-entropy weight"),
        NUM_FIELD("reconstruction_weight", model.reconstruction_weight,
                  "1 -- masked reconstruction loss weight"),
        // training
        LIST_FIELD("patch_size", train.patch_size, "32,32,32 -- training patch extents"),
        NUM_FIELD("learning_rate", train.learning_rate, "0.0001 -- Adam learning rate"),
        NUM_FIELD("weight_decay", train.weight_decay, "0.000002 -- decoupled L2 strength"),
        NUM_FIELD("lr_decay_factor", train.lr_decay_factor, "0.1 -- plateau decay ratio"),
        NUM_FIELD("plateau_patience", train.plateau_patience,
                  "50000 -- stagnant iterations before lr decay"),
        NUM_FIELD("early_stop_patience", train.early_stop_patience,
                  "25000 -- stagnant iterations before stopping"),
        NUM_FIELD("max_iterations", train.max_iterations, "2000 -- optimizer step budget"),
        NUM_FIELD("batch_size", train.batch_size, "1 -- patches per optimizer step"),
        NUM_FIELD("fg_bias", train.fg_bias,
                  "0.9 -- probability a patch is centered on foreground"),
        NUM_FIELD("val_interval", train.val_interval, "100 -- iterations between validations"),
        NUM_FIELD("improve_threshold", train.improve_threshold,
                  "0.0001 -- Dice gain that counts as improvement"),
        NUM_FIELD("seed", train.seed, "0 -- run seed (init, sampling, phantoms)"),
        // run
        Field{"arch", "convcaps -- architecture: convcaps | conv_baseline (alias: baseline)",
              [](RunConfig& c, const std::string& v) {
                  if (v == kArchConvCaps || v == kArchConvBaseline)
                      c.arch = v;
                  else if (v == "baseline")
                      c.arch = kArchConvBaseline;
                  else
                      throw usage_error("config: unknown arch '" + v + "'");
              },
              [](const RunConfig& c) { return c.arch; }},
        Field{"data_dir", "data -- directory holding manifest.json and .vol files",
              [](RunConfig& c, const std::string& v) { c.data_dir = v; },
              [](const RunConfig& c) { return c.data_dir; }},
        Field{"checkpoint", "checkpoint.bin -- where train saves / eval+infer load",
              [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
              [](const RunConfig& c) { return c.checkpoint; }},
        Field{"log", "train_log.csv -- training CSV log path",
              [](RunConfig& c, const std::string& v) { c.log = v; },
              [](const RunConfig& c) { return c.log; }},
    };
    return table;
}

#undef NUM_FIELD
#undef LIST_FIELD

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (arch != kArchConvCaps && arch != kArchConvBaseline)
        throw usage_error("config: unknown arch '" + arch + "'");
    if (data_dir.empty() || checkpoint.empty() || log.empty())
        throw usage_error("config: paths must be non-empty");
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "preset") {
        if (value == "tiny")
            cfg.model = ModelConfig::tiny();
        else if (value == "default")
            cfg.model = ModelConfig{};
        else
            throw usage_error("config: unknown preset '" + value + "'");
        return;
    }
    for (const Field& f : fields())
        if (key == f.key) {
            f.set(cfg, value);
            return;
        }
    throw usage_error("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw usage_error("config: line " + std::to_string(lineno) + " is not key=value");
        set_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string echo_config(const RunConfig& cfg) {
    std::string out;
    for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    return out;
}

std::vector<std::pair<std::string, std::string>> config_docs() {
    std::vector<std::pair<std::string, std::string>> out;
    out.emplace_back("preset", "-- named bundle applied in place (tiny | default)");
    for (const Field& f : fields()) out.emplace_back(f.key, f.doc);
    return out;
}

}  // namespace convcaps
