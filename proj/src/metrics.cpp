#include "convcaps/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>

namespace convcaps {

namespace {

void check_same_shape(const LabelVolume& a, const LabelVolume& b) {
    if (a.shape != b.shape)
        throw usage_error("metrics: volume shapes differ, " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
}

struct MaskCounts {
    i64 t = 0, p = 0, both = 0;
};

MaskCounts count_masks(const LabelVolume& truth, const LabelVolume& pred, int cls) {
    check_same_shape(truth, pred);
    MaskCounts c;
    for (size_t i = 0; i < truth.data.size(); ++i) {
        const bool in_t = truth.data[i] == cls;
        const bool in_p = pred.data[i] == cls;
        c.t += in_t;
        c.p += in_p;
        c.both += in_t && in_p;
    }
    return c;
}

}  // namespace

double dsc(const LabelVolume& truth, const LabelVolume& pred, int cls) {
    const MaskCounts c = count_masks(truth, pred, cls);
    if (c.t + c.p == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.t + c.p);
}

std::pair<double, double> precision_recall(const LabelVolume& truth, const LabelVolume& pred,
                                           int cls) {
    const MaskCounts c = count_masks(truth, pred, cls);
    double precision, recall;
    if (c.p == 0)
        precision = c.t == 0 ? 1.0 : 0.0;
    else
        precision = static_cast<double>(c.both) / static_cast<double>(c.p);
    if (c.t == 0)
        recall = c.p == 0 ? 1.0 : 0.0;
    else
        recall = static_cast<double>(c.both) / static_cast<double>(c.t);
    return {precision, recall};
}

SurfaceSet extract_surface(const LabelVolume& labels, int cls) {
    const i64 X = labels.shape[0], Y = labels.shape[1], Z = labels.shape[2];
    auto outside = [&](i64 x, i64 y, i64 z) {
        if (x < 0 || x >= X || y < 0 || y >= Y || z < 0 || z >= Z) return true;
        return labels.at(x, y, z) != cls;
    };
    SurfaceSet s;
    s.spacing = labels.spacing;
    for (i64 x = 0; x < X; ++x)
        for (i64 y = 0; y < Y; ++y)
            for (i64 z = 0; z < Z; ++z) {
                if (labels.at(x, y, z) != cls) continue;
                if (outside(x - 1, y, z) || outside(x + 1, y, z) || outside(x, y - 1, z) ||
                    outside(x, y + 1, z) || outside(x, y, z - 1) || outside(x, y, z + 1))
                    s.voxels.push_back({x, y, z});
            }
    return s;
}

namespace {

double mean_nearest(const std::vector<std::array<i64, 3>>& from,
                    const std::vector<std::array<i64, 3>>& to,
                    const std::array<double, 3>& sp) {
    double acc = 0;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            const double dx = static_cast<double>(a[0] - b[0]) * sp[0];
            const double dy = static_cast<double>(a[1] - b[1]) * sp[1];
            const double dz = static_cast<double>(a[2] - b[2]) * sp[2];
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best) best = d2;
        }
        acc += std::sqrt(best);
    }
    return acc / static_cast<double>(from.size());
}

}  // namespace

double asd(const LabelVolume& truth, const LabelVolume& pred, int cls,
           std::array<double, 3> spacing) {
    check_same_shape(truth, pred);
    const SurfaceSet st = extract_surface(truth, cls);
    const SurfaceSet sp = extract_surface(pred, cls);
    if (st.voxels.empty() || sp.voxels.empty())
        throw undefined_metric("asd undefined for class " + std::to_string(cls) +
                               ": empty surface");
    return 0.5 * (mean_nearest(sp.voxels, st.voxels, spacing) +
                  mean_nearest(st.voxels, sp.voxels, spacing));
}

MetricsReport evaluate_segmentation(const LabelVolume& truth, const LabelVolume& pred,
                                    int classes) {
    check_same_shape(truth, pred);
    if (classes < 2) throw usage_error("metrics: need at least 2 classes");
    for (const std::uint8_t v : truth.data)
        if (v >= classes)
            throw usage_error("metrics: truth label " + std::to_string(int(v)) +
                              " >= classes " + std::to_string(classes));
    for (const std::uint8_t v : pred.data)
        if (v >= classes)
            throw usage_error("metrics: predicted label " + std::to_string(int(v)) +
                              " >= classes " + std::to_string(classes));

    MetricsReport r;
    double sum_dsc = 0, sum_p = 0, sum_r = 0, sum_asd = 0;
    int asd_defined = 0;
    for (int cls = 1; cls < classes; ++cls) {
        ClassMetrics m;
        m.dsc = dsc(truth, pred, cls);
        const auto pr = precision_recall(truth, pred, cls);
        m.precision = pr.first;
        m.recall = pr.second;
        try {
            m.asd_mm = asd(truth, pred, cls, truth.spacing);
            sum_asd += *m.asd_mm;
            ++asd_defined;
        } catch (const undefined_metric&) {
            m.asd_mm.reset();
        }
        sum_dsc += m.dsc;
        sum_p += m.precision;
        sum_r += m.recall;
        r.class_ids.push_back(cls);
        r.per_class.push_back(m);
    }
    const double n = static_cast<double>(r.per_class.size());
    r.macro.dsc = sum_dsc / n;
    r.macro.precision = sum_p / n;
    r.macro.recall = sum_r / n;
    if (asd_defined > 0) r.macro.asd_mm = sum_asd / asd_defined;
    return r;
}

std::string metrics_json(const MetricsReport& report) {
    using nlohmann::json;
    auto row = [](const ClassMetrics& m) {
        json j;
        j["dsc"] = m.dsc;
        j["precision"] = m.precision;
        j["recall"] = m.recall;
        if (m.asd_mm)
            j["asd_mm"] = *m.asd_mm;
        else
            j["asd_mm"] = nullptr;
        return j;
    };
    json out;
    for (size_t i = 0; i < report.per_class.size(); ++i)
        out["class_" + std::to_string(report.class_ids[i])] = row(report.per_class[i]);
    out["macro"] = row(report.macro);
    return out.dump(2);
}

}  // namespace convcaps
