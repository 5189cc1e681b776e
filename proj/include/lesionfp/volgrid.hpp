#pragma once
// Volumetric grid model shared by every stage: scalar volumes, binary masks,
// lesion components, morphology, labeling and resampling.
//
// Linearization is x-fastest: index = x + nx * (y + ny * z).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lesionfp {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Dims = std::array<int, 3>;
using Spacing = std::array<double, 3>;

struct Index3 {
    int x = 0;
    int y = 0;
    int z = 0;
    friend bool operator==(const Index3&, const Index3&) = default;
};

enum class ValueKind : std::uint8_t { intensity, probability, uncertainty, label };

std::string_view to_string(ValueKind kind);
ValueKind value_kind_from_string(std::string_view name);

inline std::int64_t voxel_count(const Dims& d) {
    return static_cast<std::int64_t>(d[0]) * d[1] * d[2];
}

inline std::int64_t linear_index(const Dims& d, int x, int y, int z) {
    return x + static_cast<std::int64_t>(d[0]) * (y + static_cast<std::int64_t>(d[1]) * z);
}

inline Index3 unravel(const Dims& d, std::int64_t idx) {
    const std::int64_t plane = static_cast<std::int64_t>(d[0]) * d[1];
    const auto z = static_cast<int>(idx / plane);
    const std::int64_t rem = idx - z * plane;
    return {static_cast<int>(rem % d[0]), static_cast<int>(rem / d[0]), z};
}

inline bool inside(const Dims& d, int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < d[0] && y < d[1] && z < d[2];
}

void check_geometry(const Dims& dims, const Spacing& spacing);

// 3-D scalar field. Values are stored as f32, matching the on-disk format.
class VolumeGrid {
public:
    VolumeGrid() = default;
    VolumeGrid(Dims dims, Spacing spacing, ValueKind kind, float fill = 0.0f);
    VolumeGrid(Dims dims, Spacing spacing, ValueKind kind, std::vector<float> data);

    const Dims& dims() const noexcept { return dims_; }
    const Spacing& spacing() const noexcept { return spacing_; }
    ValueKind kind() const noexcept { return kind_; }
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    float at(int x, int y, int z) const { return data_[static_cast<std::size_t>(linear_index(dims_, x, y, z))]; }
    float& at(int x, int y, int z) { return data_[static_cast<std::size_t>(linear_index(dims_, x, y, z))]; }

    // Throws Error when a value violates the value_kind contract.
    void validate() const;

    VolumeGrid with_kind(ValueKind kind) const;

    friend bool operator==(const VolumeGrid&, const VolumeGrid&) = default;

private:
    Dims dims_{0, 0, 0};
    Spacing spacing_{1.0, 1.0, 1.0};
    ValueKind kind_ = ValueKind::intensity;
    std::vector<float> data_;
};

class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(Dims dims, Spacing spacing, bool fill = false);
    BinaryMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> bits);

    const Dims& dims() const noexcept { return dims_; }
    const Spacing& spacing() const noexcept { return spacing_; }
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(bits_.size()); }

    bool operator[](std::int64_t i) const { return bits_[static_cast<std::size_t>(i)] != 0; }
    bool get(int x, int y, int z) const { return bits_[static_cast<std::size_t>(linear_index(dims_, x, y, z))] != 0; }
    // Out-of-bounds reads as background.
    bool get_or_background(int x, int y, int z) const {
        return inside(dims_, x, y, z) && get(x, y, z);
    }
    void set(std::int64_t i, bool v) { bits_[static_cast<std::size_t>(i)] = v ? 1 : 0; }
    void set(int x, int y, int z, bool v) { set(linear_index(dims_, x, y, z), v); }

    std::span<const std::uint8_t> bits() const noexcept { return bits_; }
    std::int64_t count() const;
    bool empty() const { return count() == 0; }

    VolumeGrid to_volume(ValueKind kind = ValueKind::label) const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    Dims dims_{0, 0, 0};
    Spacing spacing_{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> bits_;
};

struct BoundingBox {
    Index3 min;
    Index3 max;  // inclusive
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// A connected lesion. Voxels are held as sorted linear indices into the grid
// described by dims.
struct LesionComponent {
    int id = 0;
    Dims dims{0, 0, 0};
    Spacing spacing{1.0, 1.0, 1.0};
    std::vector<std::int64_t> voxels;
    BoundingBox bbox;

    std::int64_t voxel_count() const noexcept { return static_cast<std::int64_t>(voxels.size()); }
    double volume_mm3() const noexcept {
        return static_cast<double>(voxels.size()) * spacing[0] * spacing[1] * spacing[2];
    }
};

// Builds a component from arbitrary voxel indices (sorted and deduplicated).
LesionComponent make_component(int id, const Dims& dims, const Spacing& spacing,
                               std::vector<std::int64_t> voxels);

BinaryMask binarize(const VolumeGrid& v, double threshold);

enum class StructuringElement { cube3, cross3 };

BinaryMask dilate(const BinaryMask& m, StructuringElement se);
BinaryMask erode(const BinaryMask& m, StructuringElement se);
BinaryMask closing(const BinaryMask& m, StructuringElement se);
BinaryMask opening(const BinaryMask& m, StructuringElement se);

// Closing with the 27-voxel cube followed by opening with the 7-voxel cross.
BinaryMask morph_close_open(const BinaryMask& m);

// 26-connected components, ids 1..K in order of each component's smallest
// linear voxel index.
std::vector<LesionComponent> connected_components(const BinaryMask& m);

BinaryMask component_mask(const LesionComponent& c);

double dice(std::span<const std::int64_t> a, std::span<const std::int64_t> b);
double dice(const LesionComponent& a, const LesionComponent& b);

enum class Interpolation { bspline3, nearest };

// Output dims are ceil(dims * spacing / target); output voxel i sits at
// physical position i * target, sharing the origin with the input.
VolumeGrid resample(const VolumeGrid& v, const Spacing& target, Interpolation method);
BinaryMask resample(const BinaryMask& m, const Spacing& target);

// Sub-grid [lo, hi] inclusive.
VolumeGrid crop(const VolumeGrid& v, const BoundingBox& box);
BinaryMask crop(const BinaryMask& m, const BoundingBox& box);

// LFV format: <name>.lfv.json header plus <name>.lfv.raw little-endian payload.
// Paths may be given as the bare stem or with either suffix.
VolumeGrid read_volume(const std::filesystem::path& path);
void write_volume(const VolumeGrid& v, const std::filesystem::path& path);
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const BinaryMask& m, const std::filesystem::path& path);

std::filesystem::path lfv_stem(const std::filesystem::path& path);

}  // namespace lesionfp
