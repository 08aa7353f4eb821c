#ifndef CONVCAPS_VOLIO_HPP
#define CONVCAPS_VOLIO_HPP

#include <array>
#include <string>
#include <vector>

#include "convcaps/label_volume.hpp"
#include "convcaps/tensor.hpp"

namespace convcaps {

// ".vol" volume files: a raw little-endian payload at `path` and a JSON
// sidecar at `path + ".json"` holding shape/channels/dtype/spacing. The raw
// linear index is m + M*(x + X*(y + Y*z)) — x varies fastest after channel —
// while tensors are z-fastest, so I/O permutes. Round-trips are bit-exact.
void write_volume(const std::string& path, const Tensor<float>& volume,
                  std::array<double, 3> spacing = {1.0, 1.0, 1.0});
Tensor<float> read_volume(const std::string& path, std::array<double, 3>* spacing = nullptr);

void write_labels(const std::string& path, const LabelVolume& labels);
LabelVolume read_labels(const std::string& path);

struct ManifestEntry {
    std::string volume;  // file names relative to the manifest's directory
    std::string labels;
    std::uint64_t seed = 0;
};
struct Manifest {
    std::vector<ManifestEntry> entries;
};

void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

}  // namespace convcaps

#endif
