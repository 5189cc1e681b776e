#include "lesionfp/volgrid.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lesionfp {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big)
        v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    return v;
}

struct Header {
    Dims dims{};
    Spacing spacing{};
    std::string dtype;
    ValueKind kind = ValueKind::intensity;
};

fs::path header_path(const fs::path& stem) { return fs::path(stem.string() + ".lfv.json"); }
fs::path raw_path(const fs::path& stem) { return fs::path(stem.string() + ".lfv.raw"); }

Header read_header(const fs::path& stem) {
    const fs::path hp = header_path(stem);
    std::ifstream in(hp);
    if (!in) throw Error("cannot open volume header " + hp.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("malformed volume header " + hp.string() + ": " + e.what());
    }
    Header h;
    try {
        for (std::size_t a = 0; a < 3; ++a) {
            h.dims[a] = j.at("dims").at(a).get<int>();
            h.spacing[a] = j.at("spacing").at(a).get<double>();
        }
        h.dtype = j.at("dtype").get<std::string>();
        if (j.value("order", std::string("x-fastest")) != "x-fastest")
            throw Error("unsupported voxel order in " + hp.string());
        h.kind = value_kind_from_string(j.value("value_kind", std::string("intensity")));
    } catch (const json::exception& e) {
        throw Error("invalid volume header " + hp.string() + ": " + e.what());
    }
    if (h.dtype != "f32" && h.dtype != "u8") throw Error("unsupported dtype '" + h.dtype + "'");
    for (std::size_t a = 0; a < 3; ++a) {
        if (h.dims[a] <= 0) throw Error("non-positive dims in " + hp.string());
        if (!(h.spacing[a] > 0.0)) throw Error("non-positive spacing in " + hp.string());
    }
    return h;
}

std::vector<char> read_payload(const fs::path& stem, std::size_t expected) {
    const fs::path rp = raw_path(stem);
    std::ifstream in(rp, std::ios::binary);
    if (!in) throw Error("cannot open volume payload " + rp.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != expected)
        throw Error("payload size mismatch in " + rp.string() + ": expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(bytes.size()));
    return bytes;
}

void write_header(const fs::path& stem, const Dims& dims, const Spacing& spacing, std::string_view dtype,
                  ValueKind kind) {
    json j;
    j["dims"] = dims;
    j["spacing"] = spacing;
    j["dtype"] = dtype;
    j["order"] = "x-fastest";
    j["value_kind"] = to_string(kind);
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    std::ofstream out(header_path(stem));
    if (!out) throw Error("cannot write volume header " + header_path(stem).string());
    out << j.dump(2) << '\n';
    if (!out) throw Error("failed writing " + header_path(stem).string());
}

void write_payload(const fs::path& stem, const char* data, std::size_t n) {
    std::ofstream out(raw_path(stem), std::ios::binary);
    if (!out) throw Error("cannot write volume payload " + raw_path(stem).string());
    out.write(data, static_cast<std::streamsize>(n));
    if (!out) throw Error("failed writing " + raw_path(stem).string());
}

}  // namespace

fs::path lfv_stem(const fs::path& path) {
    std::string s = path.string();
    for (const char* suffix : {".lfv.json", ".lfv.raw"}) {
        const std::string suf(suffix);
        if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0)
            return fs::path(s.substr(0, s.size() - suf.size()));
    }
    return path;
}

VolumeGrid read_volume(const fs::path& path) {
    const fs::path stem = lfv_stem(path);
    const Header h = read_header(stem);
    const auto n = static_cast<std::size_t>(voxel_count(h.dims));
    std::vector<float> data(n);
    if (h.dtype == "u8") {
        const auto bytes = read_payload(stem, n);
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(static_cast<unsigned char>(bytes[i]));
    } else {
        const auto bytes = read_payload(stem, n * 4);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, bytes.data() + 4 * i, 4);
            bits = to_le(bits);
            data[i] = std::bit_cast<float>(bits);
            if (std::isnan(data[i])) throw Error("NaN in volume payload " + raw_path(stem).string());
        }
    }
    return VolumeGrid(h.dims, h.spacing, h.kind, std::move(data));
}

void write_volume(const VolumeGrid& v, const fs::path& path) {
    const fs::path stem = lfv_stem(path);
    const auto data = v.data();
    const bool as_u8 = v.kind() == ValueKind::label &&
                       std::all_of(data.begin(), data.end(), [](float x) { return x <= 255.0f; });
    write_header(stem, v.dims(), v.spacing(), as_u8 ? "u8" : "f32", v.kind());
    if (as_u8) {
        std::vector<char> bytes(data.size());
        std::transform(data.begin(), data.end(), bytes.begin(),
                       [](float x) { return static_cast<char>(static_cast<unsigned char>(x)); });
        write_payload(stem, bytes.data(), bytes.size());
    } else {
        std::vector<char> bytes(data.size() * 4);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(data[i]));
            std::memcpy(bytes.data() + 4 * i, &bits, 4);
        }
        write_payload(stem, bytes.data(), bytes.size());
    }
}

BinaryMask read_mask(const fs::path& path) {
    const VolumeGrid v = read_volume(path);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(v.size()));
    for (std::int64_t i = 0; i < v.size(); ++i) {
        if (v[i] != 0.0f && v[i] != 1.0f) throw Error("mask file contains values other than 0 and 1");
        bits[static_cast<std::size_t>(i)] = v[i] != 0.0f ? 1 : 0;
    }
    return BinaryMask(v.dims(), v.spacing(), std::move(bits));
}

void write_mask(const BinaryMask& m, const fs::path& path) {
    const fs::path stem = lfv_stem(path);
    write_header(stem, m.dims(), m.spacing(), "u8", ValueKind::label);
    const auto bits = m.bits();
    write_payload(stem, reinterpret_cast<const char*>(bits.data()), bits.size());
}

}  // namespace lesionfp
