#ifndef CONVCAPS_METRICS_HPP
#define CONVCAPS_METRICS_HPP

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "convcaps/label_volume.hpp"

namespace convcaps {

// Raised when a metric has no defined value (e.g. surface distance against an
// empty surface); callers decide how to report it.
struct undefined_metric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Boundary voxels of one class region: members belong to the class and have a
// 6-neighbor outside it (the volume border counts as outside).
struct SurfaceSet {
    std::vector<std::array<i64, 3>> voxels;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

// Dice similarity 2|T∩P| / (|T|+|P|) on the class masks; 1 when both empty.
double dsc(const LabelVolume& truth, const LabelVolume& pred, int cls);

SurfaceSet extract_surface(const LabelVolume& labels, int cls);

// Symmetric mean nearest-surface distance in mm, brute force over all vertex
// pairs. Throws undefined_metric when either surface is empty.
double asd(const LabelVolume& truth, const LabelVolume& pred, int cls,
           std::array<double, 3> spacing);

// precision = |T∩P|/|P|, recall = |T∩P|/|T|; an empty denominator gives 1 if
// both masks are empty, else 0.
std::pair<double, double> precision_recall(const LabelVolume& truth, const LabelVolume& pred,
                                           int cls);

struct ClassMetrics {
    double dsc = 0;
    std::optional<double> asd_mm;  // empty when undefined (absent surface)
    double precision = 0;
    double recall = 0;
};

struct MetricsReport {
    std::vector<int> class_ids;  // foreground classes 1..C-1
    std::vector<ClassMetrics> per_class;
    ClassMetrics macro;  // means over per_class; macro asd over defined entries
};

// Evaluate all foreground classes with the truth volume's spacing.
MetricsReport evaluate_segmentation(const LabelVolume& truth, const LabelVolume& pred,
                                    int classes);

// Canonical JSON: {"class_1": {"asd_mm": ..., "dsc": ..., "precision": ...,
// "recall": ...}, ..., "macro": {...}}; undefined distances become null.
std::string metrics_json(const MetricsReport& report);

}  // namespace convcaps

#endif
