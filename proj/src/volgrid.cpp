#include "lesionfp/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lesionfp {

std::string_view to_string(ValueKind kind) {
    switch (kind) {
    case ValueKind::intensity: return "intensity";
    case ValueKind::probability: return "probability";
    case ValueKind::uncertainty: return "uncertainty";
    case ValueKind::label: return "label";
    }
    return "intensity";
}

ValueKind value_kind_from_string(std::string_view name) {
    if (name == "intensity") return ValueKind::intensity;
    if (name == "probability") return ValueKind::probability;
    if (name == "uncertainty") return ValueKind::uncertainty;
    if (name == "label") return ValueKind::label;
    throw Error("unknown value_kind '" + std::string(name) + "'");
}

void check_geometry(const Dims& dims, const Spacing& spacing) {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) throw Error("dims must be positive");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw Error("spacing must be positive and finite");
    }
}

VolumeGrid::VolumeGrid(Dims dims, Spacing spacing, ValueKind kind, float fill)
    : dims_(dims), spacing_(spacing), kind_(kind) {
    check_geometry(dims_, spacing_);
    data_.assign(static_cast<std::size_t>(voxel_count(dims_)), fill);
    validate();
}

VolumeGrid::VolumeGrid(Dims dims, Spacing spacing, ValueKind kind, std::vector<float> data)
    : dims_(dims), spacing_(spacing), kind_(kind), data_(std::move(data)) {
    check_geometry(dims_, spacing_);
    if (static_cast<std::int64_t>(data_.size()) != voxel_count(dims_))
        throw Error("data length " + std::to_string(data_.size()) + " does not match dims (" +
                    std::to_string(voxel_count(dims_)) + ")");
    validate();
}

void VolumeGrid::validate() const {
    for (float v : data_) {
        if (std::isnan(v)) throw Error("volume contains NaN");
        switch (kind_) {
        case ValueKind::probability:
            if (v < 0.0f || v > 1.0f) throw Error("probability value outside [0, 1]");
            break;
        case ValueKind::label:
            if (v < 0.0f || v != std::floor(v)) throw Error("label value is not a non-negative integer");
            break;
        case ValueKind::uncertainty:
        case ValueKind::intensity:
            if (!std::isfinite(v)) throw Error("volume contains a non-finite value");
            break;
        }
    }
}

VolumeGrid VolumeGrid::with_kind(ValueKind kind) const {
    return VolumeGrid(dims_, spacing_, kind, data_);
}

BinaryMask::BinaryMask(Dims dims, Spacing spacing, bool fill)
    : dims_(dims), spacing_(spacing) {
    check_geometry(dims_, spacing_);
    bits_.assign(static_cast<std::size_t>(voxel_count(dims_)), fill ? 1 : 0);
}

BinaryMask::BinaryMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> bits)
    : dims_(dims), spacing_(spacing), bits_(std::move(bits)) {
    check_geometry(dims_, spacing_);
    if (static_cast<std::int64_t>(bits_.size()) != voxel_count(dims_))
        throw Error("mask length does not match dims");
    for (auto& b : bits_) {
        if (b > 1) throw Error("mask values must be 0 or 1");
    }
}

std::int64_t BinaryMask::count() const {
    return std::count(bits_.begin(), bits_.end(), std::uint8_t{1});
}

VolumeGrid BinaryMask::to_volume(ValueKind kind) const {
    std::vector<float> data(bits_.size());
    std::transform(bits_.begin(), bits_.end(), data.begin(), [](std::uint8_t b) { return b ? 1.0f : 0.0f; });
    return VolumeGrid(dims_, spacing_, kind, std::move(data));
}

LesionComponent make_component(int id, const Dims& dims, const Spacing& spacing,
                               std::vector<std::int64_t> voxels) {
    if (voxels.empty()) throw Error("lesion component must have at least one voxel");
    std::sort(voxels.begin(), voxels.end());
    voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());
    LesionComponent c;
    c.id = id;
    c.dims = dims;
    c.spacing = spacing;
    const std::int64_t n = voxel_count(dims);
    Index3 lo{dims[0], dims[1], dims[2]};
    Index3 hi{-1, -1, -1};
    for (std::int64_t v : voxels) {
        if (v < 0 || v >= n) throw Error("lesion voxel outside grid");
        const Index3 p = unravel(dims, v);
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    c.voxels = std::move(voxels);
    c.bbox = {lo, hi};
    return c;
}

BinaryMask binarize(const VolumeGrid& v, double threshold) {
    if (v.kind() != ValueKind::probability) throw Error("binarize expects a probability volume");
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(v.size()));
    for (std::int64_t i = 0; i < v.size(); ++i) bits[static_cast<std::size_t>(i)] = v[i] > threshold ? 1 : 0;
    return BinaryMask(v.dims(), v.spacing(), std::move(bits));
}

std::vector<LesionComponent> connected_components(const BinaryMask& m) {
    const Dims& d = m.dims();
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(m.size()), 0);
    std::vector<LesionComponent> out;
    std::vector<std::int64_t> stack;
    for (std::int64_t start = 0; start < m.size(); ++start) {
        if (!m[start] || seen[static_cast<std::size_t>(start)]) continue;
        std::vector<std::int64_t> voxels;
        stack.assign(1, start);
        seen[static_cast<std::size_t>(start)] = 1;
        while (!stack.empty()) {
            const std::int64_t cur = stack.back();
            stack.pop_back();
            voxels.push_back(cur);
            const Index3 p = unravel(d, cur);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int x = p.x + dx, y = p.y + dy, z = p.z + dz;
                        if (!inside(d, x, y, z)) continue;
                        const std::int64_t n = linear_index(d, x, y, z);
                        if (m[n] && !seen[static_cast<std::size_t>(n)]) {
                            seen[static_cast<std::size_t>(n)] = 1;
                            stack.push_back(n);
                        }
                    }
        }
        out.push_back(make_component(static_cast<int>(out.size()) + 1, d, m.spacing(), std::move(voxels)));
    }
    return out;
}

BinaryMask component_mask(const LesionComponent& c) {
    BinaryMask m(c.dims, c.spacing);
    for (std::int64_t v : c.voxels) m.set(v, true);
    return m;
}

double dice(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t i = 0, j = 0, common = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            ++common;
            ++i;
            ++j;
        }
    }
    return 2.0 * static_cast<double>(common) / static_cast<double>(a.size() + b.size());
}

double dice(const LesionComponent& a, const LesionComponent& b) {
    return dice(std::span<const std::int64_t>(a.voxels), std::span<const std::int64_t>(b.voxels));
}

namespace {

BoundingBox clamp_box(const BoundingBox& box, const Dims& d) {
    BoundingBox b{{std::max(box.min.x, 0), std::max(box.min.y, 0), std::max(box.min.z, 0)},
                  {std::min(box.max.x, d[0] - 1), std::min(box.max.y, d[1] - 1), std::min(box.max.z, d[2] - 1)}};
    if (b.min.x > b.max.x || b.min.y > b.max.y || b.min.z > b.max.z) throw Error("crop box outside volume");
    return b;
}

}  // namespace

VolumeGrid crop(const VolumeGrid& v, const BoundingBox& box) {
    const BoundingBox b = clamp_box(box, v.dims());
    const Dims nd{b.max.x - b.min.x + 1, b.max.y - b.min.y + 1, b.max.z - b.min.z + 1};
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(voxel_count(nd)));
    for (int z = b.min.z; z <= b.max.z; ++z)
        for (int y = b.min.y; y <= b.max.y; ++y)
            for (int x = b.min.x; x <= b.max.x; ++x) data.push_back(v.at(x, y, z));
    return VolumeGrid(nd, v.spacing(), v.kind(), std::move(data));
}

BinaryMask crop(const BinaryMask& m, const BoundingBox& box) {
    const BoundingBox b = clamp_box(box, m.dims());
    const Dims nd{b.max.x - b.min.x + 1, b.max.y - b.min.y + 1, b.max.z - b.min.z + 1};
    std::vector<std::uint8_t> bits;
    bits.reserve(static_cast<std::size_t>(voxel_count(nd)));
    for (int z = b.min.z; z <= b.max.z; ++z)
        for (int y = b.min.y; y <= b.max.y; ++y)
            for (int x = b.min.x; x <= b.max.x; ++x) bits.push_back(m.get(x, y, z) ? 1 : 0);
    return BinaryMask(nd, m.spacing(), std::move(bits));
}

}  // namespace lesionfp
