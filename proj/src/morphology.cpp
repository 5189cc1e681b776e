#include "lesionfp/volgrid.hpp"

namespace lesionfp {
namespace {

std::vector<Index3> offsets(StructuringElement se) {
    std::vector<Index3> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (se == StructuringElement::cube3 || manhattan <= 1) out.push_back({dx, dy, dz});
            }
    return out;
}

// Both elements are symmetric, so dilation needs no reflection.
template <bool Dilate>
BinaryMask apply(const BinaryMask& m, StructuringElement se) {
    const auto offs = offsets(se);
    const Dims& d = m.dims();
    BinaryMask out(d, m.spacing());
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                bool v = !Dilate;
                for (const Index3& o : offs) {
                    const bool hit = m.get_or_background(x + o.x, y + o.y, z + o.z);
                    if constexpr (Dilate) {
                        if (hit) { v = true; break; }
                    } else {
                        if (!hit) { v = false; break; }
                    }
                }
                if (v) out.set(x, y, z, true);
            }
    return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& m, StructuringElement se) { return apply<true>(m, se); }
BinaryMask erode(const BinaryMask& m, StructuringElement se) { return apply<false>(m, se); }
BinaryMask closing(const BinaryMask& m, StructuringElement se) { return erode(dilate(m, se), se); }
BinaryMask opening(const BinaryMask& m, StructuringElement se) { return dilate(erode(m, se), se); }

BinaryMask morph_close_open(const BinaryMask& m) {
    return opening(closing(m, StructuringElement::cube3), StructuringElement::cross3);
}

}  // namespace lesionfp
