#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "convcaps/metrics.hpp"
#include "convcaps/pipeline.hpp"

using namespace convcaps;

namespace {

std::string tmp_path(const std::string& name) { return "/tmp/pipeline_test_" + name; }

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

PhantomSpec small_spec(std::uint64_t seed) {
    PhantomSpec s;
    s.extents = {16, 16, 16};
    s.classes = 2;
    s.modalities = 1;
    s.seed = seed;
    return s;
}

std::vector<float> snapshot(const Network<float>& net) {
    std::vector<float> out;
    for (const auto& name : net.param_names()) {
        const Tensor<float>& p = net.param(name);
        out.insert(out.end(), p.data(), p.data() + p.size());
    }
    return out;
}

Batch<float> whole_volume_batch(std::uint64_t seed) {
    auto [vol, labels] = generate_phantom(small_spec(seed));
    Batch<float> b;
    b.inputs.push_back(std::move(vol));
    b.labels.push_back(std::move(labels));
    return b;
}

TrainConfig fast_cfg() {
    TrainConfig t;
    t.patch_size = {16, 16, 16};
    t.learning_rate = 1e-3;
    return t;
}

}  // namespace

TEST_CASE("normalize rescales each channel to [0,1] independently") {
    Tensor<float> v(Shape{3, 1, 1, 2});
    // channel 0: 0,5,10 ; channel 1: constant
    const float vals[6] = {0, 7, 5, 7, 10, 7};
    std::memcpy(v.data(), vals, sizeof vals);
    Tensor<float> n = normalize(v);
    CHECK(n.data()[0] == 0.0f);
    CHECK(n.data()[2] == 0.5f);
    CHECK(n.data()[4] == 1.0f);
    // constant channel maps to zero
    CHECK(n.data()[1] == 0.0f);
    CHECK(n.data()[3] == 0.0f);
    CHECK(n.data()[5] == 0.0f);

    SUBCASE("idempotent") {
        Tensor<float> nn = normalize(n);
        for (i64 i = 0; i < n.size(); ++i)
            CHECK(std::abs(nn.data()[i] - n.data()[i]) <= 1e-7f);
    }
    SUBCASE("endpoints are exact") {
        Tensor<float> r(Shape{4, 1, 1, 1});
        r.data()[0] = -2.5f;
        r.data()[1] = 0.1f;
        r.data()[2] = 3.75f;
        r.data()[3] = 1.0f;
        Tensor<float> rn = normalize(r);
        CHECK(rn.data()[0] == 0.0f);
        CHECK(rn.data()[2] == 1.0f);
        for (i64 i = 0; i < 4; ++i) {
            CHECK(rn.data()[i] >= 0.0f);
            CHECK(rn.data()[i] <= 1.0f);
        }
    }
    SUBCASE("rejects non-finite values") {
        v.data()[2] = std::nanf("");
        CHECK_THROWS_AS(normalize(v), numeric_error);
    }
    SUBCASE("rejects wrong rank") {
        Tensor<float> r3(Shape{2, 2, 2});
        CHECK_THROWS_AS(normalize(r3), usage_error);
    }
}

TEST_CASE("phantom generation is deterministic and well formed") {
    PhantomSpec spec;  // 64^3, 4 classes, 2 modalities
    spec.seed = 42;
    auto [vol, labels] = generate_phantom(spec);
    REQUIRE(vol.shape() == Shape{64, 64, 64, 2});
    REQUIRE(labels.shape == Shape{64, 64, 64});

    SUBCASE("same seed reproduces bit-identical output") {
        auto [vol2, labels2] = generate_phantom(spec);
        CHECK(std::memcmp(vol.data(), vol2.data(), sizeof(float) * vol.size()) == 0);
        CHECK(labels.data == labels2.data);
    }
    SUBCASE("different seeds differ") {
        PhantomSpec other = spec;
        other.seed = 43;
        auto [vol2, labels2] = generate_phantom(other);
        CHECK(std::memcmp(vol.data(), vol2.data(), sizeof(float) * vol.size()) != 0);
        CHECK(labels.data != labels2.data);
    }
    SUBCASE("intensities normalized, all classes present, shells nested") {
        for (int m = 0; m < 2; ++m) {
            float lo = 1e9f, hi = -1e9f;
            for (i64 v = 0; v < vol.size() / 2; ++v) {
                lo = std::min(lo, vol.data()[v * 2 + m]);
                hi = std::max(hi, vol.data()[v * 2 + m]);
            }
            CHECK(lo == 0.0f);
            CHECK(hi == 1.0f);
        }
        std::set<int> seen;
        for (auto l : labels.data) seen.insert(l);
        CHECK(seen == std::set<int>{0, 1, 2, 3});
        // nesting: the bounding box of class c contains the box of c+1
        auto bbox = [&](int cls) {
            std::array<i64, 6> b{64, 64, 64, -1, -1, -1};
            for (i64 x = 0; x < 64; ++x)
                for (i64 y = 0; y < 64; ++y)
                    for (i64 z = 0; z < 64; ++z)
                        if (labels.at(x, y, z) >= cls) {
                            b[0] = std::min(b[0], x);
                            b[1] = std::min(b[1], y);
                            b[2] = std::min(b[2], z);
                            b[3] = std::max(b[3], x);
                            b[4] = std::max(b[4], y);
                            b[5] = std::max(b[5], z);
                        }
            return b;
        };
        auto b1 = bbox(1), b2 = bbox(2), b3 = bbox(3);
        for (int d = 0; d < 3; ++d) {
            CHECK(b1[d] <= b2[d]);
            CHECK(b2[d] <= b3[d]);
            CHECK(b3[d + 3] <= b2[d + 3]);
            CHECK(b2[d + 3] <= b1[d + 3]);
        }
    }
    SUBCASE("foreground fraction stays in a sane band across seeds") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            PhantomSpec ps;
            ps.seed = s;
            auto [v2, l2] = generate_phantom(ps);
            i64 fg = 0;
            for (auto l : l2.data) fg += l > 0;
            const double frac = static_cast<double>(fg) / static_cast<double>(l2.size());
            CHECK(frac >= 0.05);
            CHECK(frac <= 0.6);
        }
    }
    SUBCASE("rejects degenerate requests") {
        PhantomSpec bad = spec;
        bad.extents = {15, 64, 64};
        CHECK_THROWS_AS(generate_phantom(bad), usage_error);
        bad = spec;
        bad.classes = 1;
        CHECK_THROWS_AS(generate_phantom(bad), usage_error);
        bad = spec;
        bad.noise_sigma = -0.1;
        CHECK_THROWS_AS(generate_phantom(bad), usage_error);
    }
}

TEST_CASE("patch sampling") {
    auto [vol, labels] = generate_phantom(small_spec(3));
    Rng rng(5);

    SUBCASE("patch equal to the volume copies it verbatim") {
        auto patches = sample_patches(vol, labels, {16, 16, 16}, 2, 0.9, rng);
        REQUIRE(patches.size() == 2);
        for (const auto& [p, l] : patches) {
            CHECK(std::memcmp(p.data(), vol.data(), sizeof(float) * vol.size()) == 0);
            CHECK(l.data == labels.data);
        }
    }
    SUBCASE("fg_bias 1 with a single foreground voxel always captures it") {
        for (std::array<i64, 3> pos : {std::array<i64, 3>{0, 0, 0}, {15, 15, 15}, {7, 0, 15}}) {
            LabelVolume lone(Shape{16, 16, 16});
            lone.at(pos[0], pos[1], pos[2]) = 1;
            auto patches = sample_patches(vol, lone, {8, 8, 8}, 5, 1.0, rng);
            for (const auto& [p, l] : patches) {
                i64 ones = 0;
                for (auto v : l.data) ones += v == 1;
                CHECK(ones == 1);
            }
        }
    }
    SUBCASE("fg_bias steers most patches onto foreground") {
        Rng r2(11);
        auto patches = sample_patches(vol, labels, {8, 8, 8}, 100, 0.9, r2);
        int with_fg = 0;
        for (const auto& [p, l] : patches) {
            bool fg = false;
            for (auto v : l.data) fg |= v > 0;
            with_fg += fg;
        }
        CHECK(with_fg >= 80);
    }
    SUBCASE("same rng seed reproduces the same patches") {
        Rng a(7), b(7);
        auto pa = sample_patches(vol, labels, {8, 8, 8}, 4, 0.5, a);
        auto pb = sample_patches(vol, labels, {8, 8, 8}, 4, 0.5, b);
        for (size_t i = 0; i < pa.size(); ++i) {
            CHECK(std::memcmp(pa[i].first.data(), pb[i].first.data(),
                              sizeof(float) * pa[i].first.size()) == 0);
            CHECK(pa[i].second.data == pb[i].second.data);
        }
    }
    SUBCASE("rejects oversized or empty patches") {
        CHECK_THROWS_AS(sample_patches(vol, labels, {32, 8, 8}, 1, 0.5, rng), usage_error);
        CHECK_THROWS_AS(sample_patches(vol, labels, {0, 8, 8}, 1, 0.5, rng), usage_error);
        LabelVolume wrong(Shape{8, 8, 8});
        CHECK_THROWS_AS(sample_patches(vol, wrong, {8, 8, 8}, 1, 0.5, rng), usage_error);
    }
}

TEST_CASE("optimizer step") {
    const ModelConfig mcfg = ModelConfig::tiny();
    const TrainConfig cfg = fast_cfg();

    SUBCASE("zero learning rate is a bit-exact no-op on the weights") {
        Network<float> net = build_convcaps<float>(mcfg, 1);
        AdamState<float> opt = make_adam(net, 0.0);
        const std::vector<float> before = snapshot(net);
        const Batch<float> batch = whole_volume_batch(2);
        train_step(net, batch, opt, cfg);
        const std::vector<float> after = snapshot(net);
        CHECK(std::memcmp(before.data(), after.data(), sizeof(float) * before.size()) == 0);
        CHECK(opt.step == 1);  // moments still advance
    }
    SUBCASE("loss decreases after one update on nearly every seed") {
        int improved = 0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            Network<float> net = build_convcaps<float>(mcfg, s + 100);
            AdamState<float> opt = make_adam(net, 1e-3);
            const Batch<float> batch = whole_volume_batch(s);
            const float first = train_step(net, batch, opt, cfg).total.item();
            const float second = train_step(net, batch, opt, cfg).total.item();
            improved += second < first;
        }
        CHECK(improved >= 18);
    }
    SUBCASE("zero loss weights produce zero gradients, so weights hold still") {
        ModelConfig zw = mcfg;
        zw.margin_weight = 0;
        zw.ce_weight = 0;
        zw.reconstruction_weight = 0;
        TrainConfig nodecay = cfg;
        nodecay.weight_decay = 0;
        Network<float> net = build_convcaps<float>(zw, 1);
        AdamState<float> opt = make_adam(net, 1e-3);
        const std::vector<float> before = snapshot(net);
        const LossReport<float> rep = train_step(net, whole_volume_batch(2), opt, nodecay);
        CHECK(rep.total.item() == 0.0f);
        const std::vector<float> after = snapshot(net);
        CHECK(std::memcmp(before.data(), after.data(), sizeof(float) * before.size()) == 0);
    }
    SUBCASE("non-finite parameters are reported, not propagated") {
        Network<float> net = build_convcaps<float>(mcfg, 1);
        net.param("visual1.weight").data()[0] = std::nanf("");
        AdamState<float> opt = make_adam(net, 1e-3);
        CHECK_THROWS_AS(train_step(net, whole_volume_batch(2), opt, cfg), numeric_error);
    }
    SUBCASE("rejects an empty batch") {
        Network<float> net = build_convcaps<float>(mcfg, 1);
        AdamState<float> opt = make_adam(net, 1e-3);
        Batch<float> empty;
        CHECK_THROWS_AS(train_step(net, empty, opt, cfg), usage_error);
    }
}

TEST_CASE("plateau schedule") {
    TrainConfig cfg;  // patience 50000 / 25000, decay 0.1, threshold 1e-4
    ScheduleState s;
    s.lr = 1e-4;

    SUBCASE("steady improvement keeps the learning rate") {
        for (i64 it = 100; it <= 1000; it += 100)
            s = schedule_update(s, 0.001 * static_cast<double>(it), it, cfg);
        CHECK(s.lr == 1e-4);
        CHECK_FALSE(s.stop);
        CHECK(s.best_iteration == 1000);
        CHECK(s.best_dsc == doctest::Approx(1.0));
    }
    SUBCASE("50k without improvement decays lr once") {
        TrainConfig iso = cfg;
        iso.early_stop_patience = 1000000000;  // isolate the decay mechanism
        s = schedule_update(s, 0.5, 100, iso);
        CHECK(s.lr == 1e-4);
        for (i64 it = 200; it < 50100; it += 100) {
            s = schedule_update(s, 0.5, it, iso);
            CHECK(s.lr == 1e-4);
        }
        s = schedule_update(s, 0.5, 50100, iso);
        CHECK(s.lr == doctest::Approx(1e-5));
        CHECK_FALSE(s.stop);
        // marker resets: the next decay needs another 50k flat iterations
        s = schedule_update(s, 0.5, 50200, iso);
        CHECK(s.lr == doctest::Approx(1e-5));
        s = schedule_update(s, 0.5, 100100, iso);
        CHECK(s.lr == doctest::Approx(1e-6));
    }
    SUBCASE("25k without improvement stops") {
        TrainConfig iso = cfg;
        iso.plateau_patience = 1000000000;  // isolate the stop mechanism
        s = schedule_update(s, 0.5, 100, iso);
        for (i64 it = 200; it < 25100; it += 100) {
            s = schedule_update(s, 0.5, it, iso);
            CHECK_FALSE(s.stop);
        }
        s = schedule_update(s, 0.5, 25100, iso);
        CHECK(s.stop);
        CHECK(s.lr == 1e-4);
    }
    SUBCASE("with default patiences the stop fires before any decay") {
        s = schedule_update(s, 0.5, 100, cfg);
        for (i64 it = 200; it <= 60000; it += 100) {
            s = schedule_update(s, 0.5, it, cfg);
            if (s.stop) break;
        }
        CHECK(s.stop);
        CHECK(s.lr == 1e-4);  // never reached the 50k decay point
    }
    SUBCASE("improvement must exceed the threshold") {
        s = schedule_update(s, 0.5, 100, cfg);
        CHECK(s.best_iteration == 100);
        s = schedule_update(s, 0.5 + 1e-4, 200, cfg);  // not strictly greater
        CHECK(s.best_iteration == 100);
        s = schedule_update(s, 0.51, 300, cfg);
        CHECK(s.best_iteration == 300);
        CHECK(s.best_dsc == doctest::Approx(0.51));
    }
}

TEST_CASE("sliding window matches a dense fusion oracle") {
    const ModelConfig mcfg = ModelConfig::tiny();
    Network<float> net = build_convcaps<float>(mcfg, 3);
    PhantomSpec spec;
    spec.extents = {40, 48, 32};
    spec.classes = 2;
    spec.modalities = 1;
    spec.seed = 5;
    auto [vol, labels] = generate_phantom(spec);

    const LabelVolume pred = sliding_window_infer(net, vol, {32, 32, 32}, 0.5);
    REQUIRE(pred.shape == Shape{40, 48, 32});

    // oracle: pinned tile corners for stride 16 with a flush final tile,
    // explicit per-voxel coverage counts, mean then argmax
    const std::vector<i64> cx{0, 8}, cy{0, 16}, cz{0};
    const i64 X = 40, Y = 48, Z = 32, C = 2, P = 32;
    std::vector<double> acc(static_cast<size_t>(X * Y * Z * C), 0.0);
    std::vector<int> cover(static_cast<size_t>(X * Y * Z), 0);
    for (i64 ox : cx)
        for (i64 oy : cy)
            for (i64 oz : cz) {
                Tensor<float> tile(Shape{P, P, P, 1});
                for (i64 x = 0; x < P; ++x)
                    for (i64 y = 0; y < P; ++y)
                        for (i64 z = 0; z < P; ++z)
                            tile.data()[(x * P + y) * P + z] =
                                vol.data()[((ox + x) * Y + oy + y) * Z + oz + z];
                ForwardResult<float> out = forward(net, tile);
                for (i64 x = 0; x < P; ++x)
                    for (i64 y = 0; y < P; ++y)
                        for (i64 z = 0; z < P; ++z) {
                            const i64 v = ((ox + x) * Y + oy + y) * Z + oz + z;
                            cover[static_cast<size_t>(v)] += 1;
                            for (i64 c = 0; c < C; ++c)
                                acc[static_cast<size_t>(v * C + c)] +=
                                    out.seg.data()[((x * P + y) * P + z) * C + c];
                        }
            }
    for (i64 v = 0; v < X * Y * Z; ++v) {
        REQUIRE(cover[static_cast<size_t>(v)] >= 1);
        int best = 0;
        double best_p = -1;
        for (i64 c = 0; c < C; ++c) {
            const double mean = acc[static_cast<size_t>(v * C + c)] / cover[static_cast<size_t>(v)];
            if (mean > best_p) {
                best_p = mean;
                best = static_cast<int>(c);
            }
        }
        if (pred.data[static_cast<size_t>(v)] != best) {
            CHECK(pred.data[static_cast<size_t>(v)] == best);
            break;
        }
    }
}

TEST_CASE("sliding window edge behavior") {
    const ModelConfig mcfg = ModelConfig::tiny();

    SUBCASE("uniform probabilities break ties toward the smaller class") {
        // zeroed weights make every tile predict exactly (0.5, 0.5), so the
        // output is constant whatever the tiling, and ties resolve to class 0
        Network<float> net = build_convcaps<float>(mcfg, 1);
        for (const auto& name : net.param_names()) {
            Tensor<float>& p = net.param(name);
            std::fill(p.data(), p.data() + p.size(), 0.0f);
        }
        Tensor<float> vol(Shape{24, 16, 16, 1});
        const LabelVolume single = sliding_window_infer(net, vol, {16, 16, 16});  // 2 x-tiles
        const LabelVolume dense = sliding_window_infer(net, vol, {8, 8, 8});      // 27 tiles
        for (auto v : single.data) CHECK(v == 0);
        CHECK(single.data == dense.data);
    }
    SUBCASE("rejects a patch larger than the volume") {
        Network<float> net = build_convcaps<float>(mcfg, 1);
        Tensor<float> vol(Shape{16, 16, 16, 1});
        CHECK_THROWS_AS(sliding_window_infer(net, vol, {32, 32, 32}), usage_error);
        CHECK_THROWS_AS(sliding_window_infer(net, vol, {16, 16, 16}, 1.0), usage_error);
    }
}

TEST_CASE("training is deterministic end to end") {
    const ModelConfig mcfg = ModelConfig::tiny();
    const TrainConfig cfg = fast_cfg();
    auto run = [&] {
        Network<float> net = build_convcaps<float>(mcfg, 4);
        AdamState<float> opt = make_adam(net, cfg.learning_rate);
        auto [vol, labels] = generate_phantom(small_spec(6));
        Rng sampler(9);
        for (int it = 0; it < 10; ++it) {
            auto patches = sample_patches(vol, labels, cfg.patch_size, 1, cfg.fg_bias, sampler);
            Batch<float> b;
            b.inputs.push_back(std::move(patches[0].first));
            b.labels.push_back(std::move(patches[0].second));
            train_step(net, b, opt, cfg);
        }
        return snapshot(net);
    };
    const std::vector<float> a = run();
    const std::vector<float> b = run();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
}

TEST_CASE("full training loop") {
    const std::string dir = tmp_path("data");
    std::remove((dir + "/manifest.json").c_str());
    REQUIRE(std::system(("mkdir -p " + dir).c_str()) == 0);
    Manifest m;
    for (std::uint64_t s = 1; s <= 2; ++s) {
        auto [vol, labels] = generate_phantom(small_spec(s));
        const std::string v = "case" + std::to_string(s) + ".vol";
        const std::string l = "case" + std::to_string(s) + "_labels.vol";
        write_volume(dir + "/" + v, vol);
        write_labels(dir + "/" + l, labels);
        m.entries.push_back({v, l, s});
    }
    write_manifest(dir + "/manifest.json", m);

    ModelConfig mcfg = ModelConfig::tiny();
    TrainConfig tcfg;
    tcfg.patch_size = {8, 8, 8};
    tcfg.learning_rate = 1e-3;
    tcfg.max_iterations = 12;
    tcfg.val_interval = 5;
    tcfg.seed = 9;

    SUBCASE("smoke run writes a checkpoint and a parseable log") {
        const std::string ck = tmp_path("ck.bin"), log = tmp_path("log.csv");
        const TrainResult r = run_training(mcfg, tcfg, kArchConvCaps, dir, ck, log);
        CHECK(r.iterations == 12);
        CHECK(r.best_val_dsc >= 0.0);
        CHECK_FALSE(r.early_stopped);

        std::ifstream f(log);
        std::string line;
        REQUIRE(std::getline(f, line));
        CHECK(line == "# architecture: convcaps");
        REQUIRE(std::getline(f, line));
        CHECK(line == "iter,lr,margin,ce,recon,total,val_dsc");
        int rows = 0;
        while (std::getline(f, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 12);

        Network<float> restored = load_checkpoint(ck);
        CHECK(restored.arch() == kArchConvCaps);
        CHECK(restored.count_params() == build_convcaps<float>(mcfg, 0).count_params());

        // a second identical run reproduces both artifacts byte for byte
        const std::string ck2 = tmp_path("ck2.bin"), log2 = tmp_path("log2.csv");
        run_training(mcfg, tcfg, kArchConvCaps, dir, ck2, log2);
        CHECK(slurp(ck) == slurp(ck2));
        CHECK(slurp(log) == slurp(log2));
    }
    SUBCASE("early stopping fires on a hopeless improvement threshold") {
        TrainConfig stopper = tcfg;
        stopper.val_interval = 1;
        stopper.early_stop_patience = 4;
        stopper.improve_threshold = 2.0;  // dice <= 1, so nothing ever improves
        stopper.max_iterations = 50;
        const TrainResult r = run_training(mcfg, stopper, kArchConvCaps, dir,
                                           tmp_path("ck3.bin"), tmp_path("log3.csv"));
        CHECK(r.early_stopped);
        CHECK(r.iterations == stopper.early_stop_patience);
    }
    SUBCASE("baseline architecture trains through the same loop") {
        TrainConfig quick = tcfg;
        quick.max_iterations = 3;
        quick.val_interval = 2;
        const TrainResult r = run_training(mcfg, quick, kArchConvBaseline, dir,
                                           tmp_path("ck4.bin"), tmp_path("log4.csv"));
        CHECK(r.iterations == 3);
        std::ifstream f(tmp_path("log4.csv"));
        std::string line;
        REQUIRE(std::getline(f, line));
        CHECK(line == "# architecture: conv_baseline");
    }
    SUBCASE("bad inputs map to the right error types") {
        CHECK_THROWS_AS(
            run_training(mcfg, tcfg, kArchConvCaps, tmp_path("missing_dir"), "c", "l"),
            io_error);
        CHECK_THROWS_AS(run_training(mcfg, tcfg, "nope", dir, "c", "l"), usage_error);
    }
}
