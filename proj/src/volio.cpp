#include "convcaps/volio.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace convcaps {

using nlohmann::json;

namespace {

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw io_error("write failed for '" + path + "'");
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw io_error("cannot open '" + path + "'");
    std::vector<unsigned char> bytes(static_cast<size_t>(is.tellg()));
    is.seekg(0);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!is) throw io_error("read failed for '" + path + "'");
    return bytes;
}

void write_sidecar(const std::string& path, const Shape& xyz, i64 channels,
                   const char* dtype, std::array<double, 3> spacing) {
    json j;
    j["shape"] = std::vector<i64>{xyz[0], xyz[1], xyz[2]};
    j["channels"] = channels;
    j["dtype"] = dtype;
    j["spacing"] = std::vector<double>{spacing[0], spacing[1], spacing[2]};
    std::ofstream os(path + ".json");
    if (!os) throw io_error("cannot open '" + path + ".json' for writing");
    os << j.dump() << "\n";
    if (!os) throw io_error("write failed for '" + path + ".json'");
}

struct Sidecar {
    Shape xyz;
    i64 channels;
    std::string dtype;
    std::array<double, 3> spacing;
};

Sidecar read_sidecar(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw io_error("cannot open '" + path + ".json'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw io_error("bad sidecar '" + path + ".json': " + e.what());
    }
    Sidecar s;
    try {
        const auto shape = j.at("shape").get<std::vector<i64>>();
        if (shape.size() != 3) throw io_error("sidecar shape must have 3 extents");
        s.xyz = {shape[0], shape[1], shape[2]};
        s.channels = j.at("channels").get<i64>();
        s.dtype = j.at("dtype").get<std::string>();
        const auto sp = j.at("spacing").get<std::vector<double>>();
        if (sp.size() != 3) throw io_error("sidecar spacing must have 3 entries");
        s.spacing = {sp[0], sp[1], sp[2]};
    } catch (const json::exception& e) {
        throw io_error("bad sidecar '" + path + ".json': " + e.what());
    }
    for (i64 d : s.xyz)
        if (d < 1) throw io_error("sidecar shape must be positive");
    if (s.channels < 1) throw io_error("sidecar channels must be positive");
    return s;
}

}  // namespace

void write_volume(const std::string& path, const Tensor<float>& volume,
                  std::array<double, 3> spacing) {
    if (volume.rank() != 4) throw usage_error("write_volume: tensor must be [X,Y,Z,M]");
    const i64 X = volume.dim(0), Y = volume.dim(1), Z = volume.dim(2), M = volume.dim(3);
    write_sidecar(path, {X, Y, Z}, M, "f32le", spacing);

    std::vector<unsigned char> bytes(static_cast<size_t>(volume.size()) * 4);
    size_t o = 0;
    for (i64 z = 0; z < Z; ++z)
        for (i64 y = 0; y < Y; ++y)
            for (i64 x = 0; x < X; ++x)
                for (i64 m = 0; m < M; ++m) {
                    const float f = volume.data()[((x * Y + y) * Z + z) * M + m];
                    std::uint32_t u;
                    std::memcpy(&u, &f, 4);
                    bytes[o++] = static_cast<unsigned char>(u);
                    bytes[o++] = static_cast<unsigned char>(u >> 8);
                    bytes[o++] = static_cast<unsigned char>(u >> 16);
                    bytes[o++] = static_cast<unsigned char>(u >> 24);
                }
    write_file(path, bytes);
}

Tensor<float> read_volume(const std::string& path, std::array<double, 3>* spacing) {
    const Sidecar s = read_sidecar(path);
    if (s.dtype != "f32le")
        throw io_error("'" + path + "': expected dtype f32le, got '" + s.dtype + "'");
    const i64 X = s.xyz[0], Y = s.xyz[1], Z = s.xyz[2], M = s.channels;
    const auto bytes = read_file(path);
    if (static_cast<i64>(bytes.size()) != X * Y * Z * M * 4)
        throw io_error("'" + path + "': raw size " + std::to_string(bytes.size()) +
                       " does not match sidecar shape");

    Tensor<float> t(Shape{X, Y, Z, M});
    size_t o = 0;
    for (i64 z = 0; z < Z; ++z)
        for (i64 y = 0; y < Y; ++y)
            for (i64 x = 0; x < X; ++x)
                for (i64 m = 0; m < M; ++m) {
                    const std::uint32_t u = static_cast<std::uint32_t>(bytes[o]) |
                                            (static_cast<std::uint32_t>(bytes[o + 1]) << 8) |
                                            (static_cast<std::uint32_t>(bytes[o + 2]) << 16) |
                                            (static_cast<std::uint32_t>(bytes[o + 3]) << 24);
                    o += 4;
                    float f;
                    std::memcpy(&f, &u, 4);
                    t.data()[((x * Y + y) * Z + z) * M + m] = f;
                }
    if (spacing) *spacing = s.spacing;
    return t;
}

void write_labels(const std::string& path, const LabelVolume& labels) {
    const i64 X = labels.shape[0], Y = labels.shape[1], Z = labels.shape[2];
    write_sidecar(path, labels.shape, 1, "u8", labels.spacing);
    std::vector<unsigned char> bytes(labels.data.size());
    size_t o = 0;
    for (i64 z = 0; z < Z; ++z)
        for (i64 y = 0; y < Y; ++y)
            for (i64 x = 0; x < X; ++x) bytes[o++] = labels.at(x, y, z);
    write_file(path, bytes);
}

LabelVolume read_labels(const std::string& path) {
    const Sidecar s = read_sidecar(path);
    if (s.dtype != "u8")
        throw io_error("'" + path + "': expected dtype u8, got '" + s.dtype + "'");
    if (s.channels != 1) throw io_error("'" + path + "': label volumes are single-channel");
    const i64 X = s.xyz[0], Y = s.xyz[1], Z = s.xyz[2];
    const auto bytes = read_file(path);
    if (static_cast<i64>(bytes.size()) != X * Y * Z)
        throw io_error("'" + path + "': raw size " + std::to_string(bytes.size()) +
                       " does not match sidecar shape");

    LabelVolume lv(Shape{X, Y, Z});
    lv.spacing = s.spacing;
    size_t o = 0;
    for (i64 z = 0; z < Z; ++z)
        for (i64 y = 0; y < Y; ++y)
            for (i64 x = 0; x < X; ++x) lv.at(x, y, z) = bytes[o++];
    return lv;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
    json entries = json::array();
    for (const auto& e : manifest.entries) {
        json row;
        row["volume"] = e.volume;
        row["labels"] = e.labels;
        row["seed"] = e.seed;
        entries.push_back(row);
    }
    json j;
    j["entries"] = entries;
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os << j.dump(2) << "\n";
    if (!os) throw io_error("write failed for '" + path + "'");
}

Manifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open '" + path + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw io_error("bad manifest '" + path + "': " + e.what());
    }
    Manifest m;
    try {
        for (const auto& row : j.at("entries")) {
            ManifestEntry e;
            e.volume = row.at("volume").get<std::string>();
            e.labels = row.at("labels").get<std::string>();
            e.seed = row.at("seed").get<std::uint64_t>();
            m.entries.push_back(e);
        }
    } catch (const json::exception& e) {
        throw io_error("bad manifest '" + path + "': " + e.what());
    }
    return m;
}

}  // namespace convcaps
