#ifndef CONVCAPS_LABEL_VOLUME_HPP
#define CONVCAPS_LABEL_VOLUME_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "convcaps/tensor.hpp"

namespace convcaps {

// Integer class labels per voxel, 0 = background. Row-major [X,Y,Z] like the
// tensor layout (z fastest). Spacing is the physical voxel size in mm.
struct LabelVolume {
    Shape shape;  // [X,Y,Z]
    std::vector<std::uint8_t> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    LabelVolume() = default;
    explicit LabelVolume(Shape s) : shape(std::move(s)) {
        if (shape.size() != 3) throw usage_error("labels must be [X,Y,Z]");
        data.assign(static_cast<size_t>(numel(shape)), 0);
    }

    i64 size() const { return static_cast<i64>(data.size()); }
    std::uint8_t& at(i64 x, i64 y, i64 z) {
        return data[static_cast<size_t>((x * shape[1] + y) * shape[2] + z)];
    }
    std::uint8_t at(i64 x, i64 y, i64 z) const {
        return data[static_cast<size_t>((x * shape[1] + y) * shape[2] + z)];
    }
};

}  // namespace convcaps

#endif
