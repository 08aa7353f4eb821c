#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "convcaps/capsule.hpp"
#include "convcaps/config.hpp"
#include "convcaps/metrics.hpp"
#include "convcaps/pipeline.hpp"

using namespace convcaps;

namespace {

struct Args {
    std::vector<std::pair<std::string, std::string>> kv;

    bool has(const std::string& key) const {
        for (const auto& [k, v] : kv)
            if (k == key) return true;
        return false;
    }
    std::string get(const std::string& key, const std::string& fallback = "") const {
        std::string out = fallback;
        for (const auto& [k, v] : kv)
            if (k == key) out = v;  // last wins, like config files
        return out;
    }
    std::string require(const std::string& key) const {
        if (!has(key)) throw usage_error("missing required --" + key);
        return get(key);
    }
};

Args parse_args(int argc, char** argv, int from) {
    Args a;
    for (int i = from; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0)
            throw usage_error("expected --key, got '" + arg + "'");
        std::string value;
        if (i + 1 < argc && std::string(argv[i + 1]).rfind("--", 0) != 0) value = argv[++i];
        a.kv.emplace_back(arg.substr(2), value);
    }
    return a;
}

i64 parse_i64(const std::string& what, const std::string& s) {
    try {
        size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw usage_error("bad integer '" + s + "' for --" + what);
    }
}

double parse_f64(const std::string& what, const std::string& s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw usage_error("bad number '" + s + "' for --" + what);
    }
}

std::array<i64, 3> parse_extents(const std::string& what, const std::string& s) {
    std::array<i64, 3> out{};
    size_t start = 0;
    for (int d = 0; d < 3; ++d) {
        const size_t comma = s.find(',', start);
        const bool last = d == 2;
        if (last != (comma == std::string::npos))
            throw usage_error("--" + what + " wants X,Y,Z");
        out[static_cast<size_t>(d)] =
            parse_i64(what, s.substr(start, last ? std::string::npos : comma - start));
        start = comma + 1;
    }
    return out;
}

void usage(std::ostream& os) {
    os << "usage: convcaps <command> [options]\n"
          "\n"
          "commands:\n"
          "  gen-data  --out DIR [--count K] [--seed N] [--size X,Y,Z] [--classes C]\n"
          "            [--modalities M] [--noise S]\n"
          "            write synthetic phantom volumes, labels, and a manifest\n"
          "  train     [--config FILE] [--KEY VALUE ...]\n"
          "            train a model; any config key can be given as a flag\n"
          "  eval      --data DIR (--checkpoint FILE | --identity) [--patch X,Y,Z]\n"
          "            [--out FILE]\n"
          "            segment every manifest case and report metrics as JSON\n"
          "  infer     --checkpoint FILE --volume FILE --out FILE [--patch X,Y,Z]\n"
          "            [--overlap R]\n"
          "            sliding-window inference, writes a label volume\n"
          "  inspect   (--config FILE | --checkpoint FILE) [--size X,Y,Z]\n"
          "            [--KEY VALUE ...]\n"
          "            per-layer shape/parameter table\n"
          "  selftest  [--sabotage TARGET]\n"
          "            run built-in invariant checks, nonzero exit on failure\n"
          "  keys      list config keys with defaults\n"
          "\n"
          "exit codes: 0 ok, 1 numeric/selftest failure, 2 usage, 3 I/O.\n"
          "CAPS_THREADS caps worker threads (default: available cores).\n";
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Args& args) {
    const std::string out_dir = args.require("out");
    const i64 count = parse_i64("count", args.get("count", "4"));
    const std::uint64_t seed =
        static_cast<std::uint64_t>(parse_i64("seed", args.get("seed", "0")));
    PhantomSpec spec;
    spec.extents = parse_extents("size", args.get("size", "64,64,64"));
    spec.classes = static_cast<int>(parse_i64("classes", args.get("classes", "4")));
    spec.modalities = static_cast<int>(parse_i64("modalities", args.get("modalities", "2")));
    spec.noise_sigma = parse_f64("noise", args.get("noise", "0.05"));
    if (count < 1) throw usage_error("--count must be positive");
    for (i64 d : spec.extents)
        if (d % 8 != 0)
            throw usage_error("extents not divisible by 8: " + std::to_string(d));

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create '" + out_dir + "': " + ec.message());

    Manifest manifest;
    for (i64 i = 0; i < count; ++i) {
        spec.seed = seed + static_cast<std::uint64_t>(i);
        auto [volume, labels] = generate_phantom(spec);
        char base[32];
        std::snprintf(base, sizeof base, "case%03lld", static_cast<long long>(i));
        const std::string vol_name = std::string(base) + ".vol";
        const std::string lab_name = std::string(base) + "_labels.vol";
        write_volume(out_dir + "/" + vol_name, volume);
        write_labels(out_dir + "/" + lab_name, labels);
        manifest.entries.push_back({vol_name, lab_name, spec.seed});
    }
    write_manifest(out_dir + "/manifest.json", manifest);
    std::cout << "wrote " << count << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_train(const Args& args) {
    RunConfig cfg;
    if (args.has("config")) cfg = load_config(args.get("config"));
    for (const auto& [k, v] : args.kv)
        if (k != "config") set_key(cfg, k, v);
    cfg.validate();

    std::cout << "# effective config\n" << echo_config(cfg) << std::flush;
    const TrainResult r =
        run_training(cfg.model, cfg.train, cfg.arch, cfg.data_dir, cfg.checkpoint, cfg.log);
    std::cout << "done: " << r.iterations << " iterations, best val dsc " << r.best_val_dsc
              << (r.early_stopped ? " (early stop)" : "") << "\n"
              << "checkpoint: " << cfg.checkpoint << "\nlog: " << cfg.log << "\n";
    return 0;
}

std::array<i64, 3> fit_patch(std::array<i64, 3> patch, const Shape& extents) {
    for (int d = 0; d < 3; ++d) {
        const i64 ext = extents[static_cast<size_t>(d)];
        patch[static_cast<size_t>(d)] = std::min(patch[static_cast<size_t>(d)], ext - ext % 8);
        if (patch[static_cast<size_t>(d)] < 8)
            throw usage_error("volume extent " + std::to_string(ext) +
                              " leaves no multiple-of-8 patch");
    }
    return patch;
}

ClassMetrics mean_row(const std::vector<ClassMetrics>& rows) {
    ClassMetrics m;
    i64 asd_defined = 0;
    double asd_sum = 0;
    for (const ClassMetrics& r : rows) {
        m.dsc += r.dsc;
        m.precision += r.precision;
        m.recall += r.recall;
        if (r.asd_mm) {
            asd_sum += *r.asd_mm;
            ++asd_defined;
        }
    }
    const double n = static_cast<double>(rows.size());
    m.dsc /= n;
    m.precision /= n;
    m.recall /= n;
    if (asd_defined > 0) m.asd_mm = asd_sum / static_cast<double>(asd_defined);
    return m;
}

int cmd_eval(const Args& args) {
    const std::string data_dir = args.require("data");
    const bool identity = args.has("identity");
    if (!identity && !args.has("checkpoint"))
        throw usage_error("eval needs --checkpoint or --identity");
    const std::array<i64, 3> patch = parse_extents("patch", args.get("patch", "32,32,32"));

    const Manifest manifest = read_manifest(data_dir + "/manifest.json");
    if (manifest.entries.empty()) throw io_error("manifest lists no volumes");

    Network<float> net(ModelConfig{}, kArchConvCaps);
    int classes = 0;
    if (!identity) {
        net = load_checkpoint(args.get("checkpoint"));
        classes = net.config().classes;
    } else {
        for (const auto& e : manifest.entries) {
            const LabelVolume lv = read_labels(data_dir + "/" + e.labels);
            for (auto v : lv.data) classes = std::max(classes, static_cast<int>(v) + 1);
        }
        classes = std::max(classes, 2);
    }

    std::vector<MetricsReport> reports;
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        const LabelVolume truth = read_labels(data_dir + "/" + e.labels);
        LabelVolume pred;
        if (identity) {
            pred = truth;
        } else {
            const Tensor<float> volume = read_volume(data_dir + "/" + e.volume);
            pred = sliding_window_infer(
                net, volume, fit_patch(patch, Shape{truth.shape[0], truth.shape[1], truth.shape[2]}));
            pred.spacing = truth.spacing;
        }
        const MetricsReport rep = evaluate_segmentation(truth, pred, classes);
        reports.push_back(rep);
        cases.push_back({{"volume", e.volume}, {"metrics", nlohmann::json::parse(metrics_json(rep))}});
    }

    // cross-case mean: average each class row, then macro over the averages
    MetricsReport mean;
    mean.class_ids = reports.front().class_ids;
    for (size_t c = 0; c < mean.class_ids.size(); ++c) {
        std::vector<ClassMetrics> rows;
        for (const MetricsReport& r : reports) rows.push_back(r.per_class[c]);
        mean.per_class.push_back(mean_row(rows));
    }
    mean.macro = mean_row(mean.per_class);

    nlohmann::json out;
    out["cases"] = cases;
    out["mean"] = nlohmann::json::parse(metrics_json(mean));
    const std::string text = out.dump(2) + "\n";
    if (args.has("out")) {
        std::ofstream f(args.get("out"));
        if (!f) throw io_error("cannot write '" + args.get("out") + "'");
        f << text;
    } else {
        std::cout << text;
    }
    return 0;
}

int cmd_infer(const Args& args) {
    const Network<float> net = load_checkpoint(args.require("checkpoint"));
    std::array<double, 3> spacing{1, 1, 1};
    const Tensor<float> volume = read_volume(args.require("volume"), &spacing);
    const std::array<i64, 3> patch =
        fit_patch(parse_extents("patch", args.get("patch", "32,32,32")),
                  Shape{volume.dim(0), volume.dim(1), volume.dim(2)});
    const double overlap = parse_f64("overlap", args.get("overlap", "0.5"));
    LabelVolume pred = sliding_window_infer(net, volume, patch, overlap);
    pred.spacing = spacing;
    write_labels(args.require("out"), pred);
    std::cout << "wrote " << args.get("out") << "\n";
    return 0;
}

int cmd_inspect(const Args& args) {
    const std::array<i64, 3> size = parse_extents("size", args.get("size", "32,32,32"));
    ModelConfig mcfg;
    std::string arch = kArchConvCaps;
    if (args.has("checkpoint")) {
        const Network<float> net = load_checkpoint(args.get("checkpoint"));
        mcfg = net.config();
        arch = net.arch();
    } else {
        RunConfig cfg;
        if (args.has("config")) cfg = load_config(args.get("config"));
        for (const auto& [k, v] : args.kv)
            if (k != "config" && k != "size") set_key(cfg, k, v);
        mcfg = cfg.model;
        arch = cfg.arch;
    }
    std::cout << describe(mcfg, arch, size[0], size[1], size[2]);
    return 0;
}

// ---------------------------------------------------------------- selftest

struct CheckFail : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
    if (!ok) throw CheckFail(what);
}

Tensor<double> random_t(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    Tensor<double> t(std::move(shape));
    Rng rng(seed);
    for (i64 i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

void check_op_gradients() {
    Tensor<double> a = random_t(Shape{3, 4}, 1);
    Tensor<double> b = random_t(Shape{3, 4}, 2, 0.2, 1.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const double err = grad_check<double>(
        [&] {
            Tensor<double> h = relu(add(mul(a, b), add_scalar(scale(a, 0.3), 0.05)));
            return sum(mul(softmax(h, 1), log_clamped(b, 1e-7)));
        },
        {a, b}, 1e-6);
    expect(err < 1e-4, "composite op gradient error " + std::to_string(err));
}

void check_conv_gradients() {
    Tensor<double> x = random_t(Shape{5, 4, 3, 2}, 3);
    Tensor<double> w = random_t(Shape{3, 3, 3, 2, 3}, 4, -0.3, 0.3);
    Tensor<double> bias = random_t(Shape{3}, 5, 0.01, 0.1);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    bias.set_requires_grad(true);
    const Tensor<double> probe = random_t(Shape{3, 2, 2, 3}, 6);
    const double err = grad_check<double>(
        [&] { return sum(mul(conv3d(x, w, bias, ConvSpec::make(3, 2, 1)), probe)); },
        {x, w, bias}, 1e-6);
    expect(err < 1e-4, "conv gradient error " + std::to_string(err));
}

void check_squash_norms() {
    // large inputs push the squashed norm toward (but never onto) 1
    Tensor<double> s = random_t(Shape{3, 3, 3, 4, 8}, 7, -4, 4);
    const Tensor<double> v = squash(s);
    for (i64 i = 0; i < v.size() / 8; ++i) {
        double n2 = 0;
        for (i64 d = 0; d < 8; ++d) {
            const double e = v.data()[i * 8 + d];
            n2 += e * e;
        }
        expect(n2 < 1.0, "squashed pose norm^2 = " + std::to_string(n2) + " >= 1");
    }
}

void check_routing_couplings() {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CapsuleMap<double> caps{random_t(Shape{3, 3, 3, 2, 4}, 100 + seed)};
        Tensor<double> w = random_t(Shape{3, 3, 3, 2, 3, 4, 4}, 200 + seed, -0.4, 0.4);
        const ConvCapsuleOut<double> out = conv_capsule(caps, w, ConvSpec::make(3), 3);
        const Tensor<double>& c = out.couplings;
        const i64 rows = c.size() / c.dim(4);
        for (i64 r = 0; r < rows; ++r) {
            double s = 0;
            for (i64 j = 0; j < c.dim(4); ++j) s += c.data()[r * c.dim(4) + j];
            expect(std::abs(s - 1.0) < 1e-6, "coupling row sums to " + std::to_string(s));
        }
        const ConvCapsuleOut<double> one = conv_capsule(caps, w, ConvSpec::make(3), 1);
        const double uniform = 1.0 / static_cast<double>(one.couplings.dim(4));
        for (i64 i = 0; i < one.couplings.size(); ++i)
            expect(one.couplings.data()[i] == uniform,
                   "single-iteration couplings not exactly uniform");
    }
}

void check_margin_oracle() {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> y = random_t(Shape{2, 2, 1, 3}, 300 + static_cast<std::uint64_t>(trial), 0.0, 0.999);
        Tensor<double> target(y.shape());
        for (i64 i = 0; i < y.size() / 3; ++i) target.data()[i * 3 + static_cast<i64>(rng.below(3))] = 1.0;
        const double got = margin_loss(y, target).item();
        double want = 0;
        for (i64 i = 0; i < y.size(); ++i) {
            const double t = target.data()[i], v = y.data()[i];
            want += t * std::pow(std::max(0.0, 0.9 - v), 2) +
                    0.5 * (1 - t) * std::pow(std::max(0.0, v - 0.1), 2);
        }
        want /= static_cast<double>(y.size());
        expect(std::abs(got - want) < 1e-9, "margin loss mismatch " + std::to_string(got - want));
    }
}

void check_ce_oracle() {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Tensor<double> logits = random_t(Shape{2, 2, 2, 3}, 400 + seed);
        const Tensor<double> p = softmax(logits, 3);
        LabelVolume lv(Shape{2, 2, 2});
        Rng rng(500 + seed);
        for (auto& v : lv.data) v = static_cast<std::uint8_t>(rng.below(3));
        Tensor<double> w(Shape{3});
        for (i64 i = 0; i < 3; ++i) w.data()[i] = 0.5 + 0.5 * static_cast<double>(i);
        const double got = weighted_ce(p, lv, w).item();
        double want = 0;
        for (i64 v = 0; v < 8; ++v) {
            const int cls = lv.data[static_cast<size_t>(v)];
            want -= w.data()[cls] * std::log(std::max(p.data()[v * 3 + cls], 1e-7));
        }
        want /= 8.0;
        expect(std::abs(got - want) < 1e-9, "cross-entropy mismatch");
    }
}

void check_mse_oracle() {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Tensor<double> recon = random_t(Shape{2, 2, 2, 2}, 600 + seed);
        Tensor<double> input = random_t(Shape{2, 2, 2, 2}, 700 + seed);
        LabelVolume lv(Shape{2, 2, 2});
        Rng rng(800 + seed);
        for (auto& v : lv.data) v = static_cast<std::uint8_t>(rng.below(2));
        const double got = masked_mse(recon, input, lv).item();
        double want = 0;
        i64 fg = 0;
        for (i64 v = 0; v < 8; ++v) {
            if (lv.data[static_cast<size_t>(v)] == 0) continue;
            ++fg;
            for (i64 m = 0; m < 2; ++m)
                want += std::pow(recon.data()[v * 2 + m] - input.data()[v * 2 + m], 2);
        }
        want = fg ? want / static_cast<double>(fg * 2) : 0.0;
        expect(std::abs(got - want) < 1e-9, "masked reconstruction mismatch");
    }
}

void check_dice_oracle() {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        LabelVolume a(Shape{6, 6, 6}), b(Shape{6, 6, 6});
        Rng rng(900 + seed);
        for (auto& v : a.data) v = static_cast<std::uint8_t>(rng.below(3));
        for (auto& v : b.data) v = static_cast<std::uint8_t>(rng.below(3));
        for (int cls = 1; cls < 3; ++cls) {
            i64 ta = 0, tb = 0, inter = 0;
            for (size_t i = 0; i < a.data.size(); ++i) {
                ta += a.data[i] == cls;
                tb += b.data[i] == cls;
                inter += a.data[i] == cls && b.data[i] == cls;
            }
            const double want =
                ta + tb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(ta + tb);
            expect(dsc(a, b, cls) == want, "dice mismatch");
            const auto [prec, rec] = precision_recall(a, b, cls);
            expect(prec == (tb ? static_cast<double>(inter) / static_cast<double>(tb)
                               : (ta == 0 ? 1.0 : 0.0)),
                   "precision mismatch");
            expect(rec == (ta ? static_cast<double>(inter) / static_cast<double>(ta)
                              : (tb == 0 ? 1.0 : 0.0)),
                   "recall mismatch");
        }
    }
}

void check_asd_oracle() {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        LabelVolume a(Shape{6, 6, 6}), b(Shape{6, 6, 6});
        Rng rng(1000 + seed);
        for (auto& v : a.data) v = rng.uniform() < 0.3 ? 1 : 0;
        for (auto& v : b.data) v = rng.uniform() < 0.3 ? 1 : 0;
        const SurfaceSet sa = extract_surface(a, 1), sb = extract_surface(b, 1);
        if (sa.voxels.empty() || sb.voxels.empty()) continue;
        auto mean_nn = [](const SurfaceSet& from, const SurfaceSet& to) {
            double total = 0;
            for (const auto& p : from.voxels) {
                double best = 1e300;
                for (const auto& q : to.voxels) {
                    double d2 = 0;
                    for (int d = 0; d < 3; ++d) {
                        const double diff = static_cast<double>(p[static_cast<size_t>(d)] -
                                                                q[static_cast<size_t>(d)]);
                        d2 += diff * diff;
                    }
                    best = std::min(best, d2);
                }
                total += std::sqrt(best);
            }
            return total / static_cast<double>(from.voxels.size());
        };
        const double want = 0.5 * (mean_nn(sa, sb) + mean_nn(sb, sa));
        expect(std::abs(asd(a, b, 1, {1, 1, 1}) - want) < 1e-9, "surface distance mismatch");
    }
}

void check_checkpoint_roundtrip() {
    const Network<float> net = build_convcaps<float>(ModelConfig::tiny(), 5);
    const std::string path = "/tmp/convcaps_selftest_ck.bin";
    save_checkpoint(net, path);
    const Network<float> back = load_checkpoint(path);
    expect(back.arch() == net.arch(), "checkpoint arch changed");
    for (const auto& name : net.param_names()) {
        const Tensor<float>& p = net.param(name);
        const Tensor<float>& q = back.param(name);
        expect(std::memcmp(p.data(), q.data(), sizeof(float) * p.size()) == 0,
               "checkpoint parameter bytes changed: " + name);
    }
    std::remove(path.c_str());
}

void check_forward_determinism() {
    const ModelConfig cfg = ModelConfig::tiny();
    Tensor<float> x(Shape{8, 8, 8, 1});
    Rng rng(17);
    for (i64 i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.uniform());
    const Network<float> n1 = build_convcaps<float>(cfg, 9);
    const Network<float> n2 = build_convcaps<float>(cfg, 9);
    const ForwardResult<float> a = forward(n1, x);
    const ForwardResult<float> b = forward(n2, x);
    expect(std::memcmp(a.seg.data(), b.seg.data(), sizeof(float) * a.seg.size()) == 0,
           "seg output not reproducible");
    expect(std::memcmp(a.recon.data(), b.recon.data(), sizeof(float) * a.recon.size()) == 0,
           "recon output not reproducible");
}

int cmd_selftest(const Args& args) {
    if (args.has("sabotage")) set_sabotage(args.get("sabotage"));
    const std::vector<std::pair<const char*, std::function<void()>>> checks = {
        {"op gradients", check_op_gradients},
        {"conv gradients", check_conv_gradients},
        {"squash norm bound", check_squash_norms},
        {"routing couplings", check_routing_couplings},
        {"margin loss oracle", check_margin_oracle},
        {"cross-entropy oracle", check_ce_oracle},
        {"masked reconstruction oracle", check_mse_oracle},
        {"dice/precision/recall oracle", check_dice_oracle},
        {"surface distance oracle", check_asd_oracle},
        {"checkpoint round trip", check_checkpoint_roundtrip},
        {"forward determinism", check_forward_determinism},
    };
    int failed = 0;
    for (const auto& [name, fn] : checks) {
        try {
            fn();
            std::cout << "pass  " << name << "\n";
        } catch (const std::exception& e) {
            ++failed;
            std::cout << "FAIL  " << name << ": " << e.what() << "\n";
        }
    }
    if (failed) {
        std::cerr << "selftest: " << failed << " of " << checks.size() << " checks failed\n";
        return 1;
    }
    std::cout << "selftest: all " << checks.size() << " checks passed\n";
    return 0;
}

int run(int argc, char** argv) {
    if (argc < 2) {
        usage(std::cerr);
        return 2;
    }
    const std::string cmd = argv[1];
    if (cmd == "help" || cmd == "--help" || cmd == "-h") {
        usage(std::cout);
        return 0;
    }
    if (cmd == "keys") {
        for (const auto& [key, doc] : config_docs())
            std::printf("%-22s %s\n", key.c_str(), doc.c_str());
        return 0;
    }
    const Args args = parse_args(argc, argv, 2);
    if (cmd == "gen-data") return cmd_gen_data(args);
    if (cmd == "train") return cmd_train(args);
    if (cmd == "eval") return cmd_eval(args);
    if (cmd == "infer") return cmd_infer(args);
    if (cmd == "inspect") return cmd_inspect(args);
    if (cmd == "selftest") return cmd_selftest(args);
    usage(std::cerr);
    throw usage_error("unknown command '" + cmd + "'");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const usage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
