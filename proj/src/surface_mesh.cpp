#include "lesionfp/radfeat.hpp"

#include <array>
#include <cmath>

namespace lesionfp {
namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Dual cells are indexed by their lower-corner voxel, shifted by +1 so that
// cells straddling the lower volume boundary have non-negative indices.
class SurfaceNet {
public:
    SurfaceNet(const BinaryMask& m, Index3 origin) : m_(m), origin_(origin) {
        const Dims& d = m.dims();
        cd_ = {d[0] + 1, d[1] + 1, d[2] + 1};
        vertex_of_.assign(static_cast<std::size_t>(voxel_count(cd_)), -1);
    }

    const Vec3& vertex(int cx, int cy, int cz) {
        const auto key = static_cast<std::size_t>(linear_index(cd_, cx + 1, cy + 1, cz + 1));
        int& slot = vertex_of_[key];
        if (slot < 0) {
            slot = static_cast<int>(verts_.size());
            verts_.push_back(place(cx, cy, cz));
        }
        return verts_[static_cast<std::size_t>(slot)];
    }

private:
    bool in(int x, int y, int z) const { return m_.get_or_background(x, y, z); }

    // Centroid of the crossing midpoints on the cell's 12 edges, in mm.
    Vec3 place(int cx, int cy, int cz) const {
        Vec3 sum{0.0, 0.0, 0.0};
        int n = 0;
        for (int ax = 0; ax < 3; ++ax) {
            const int o0 = (ax + 1) % 3, o1 = (ax + 2) % 3;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    int p[3] = {cx, cy, cz};
                    p[o0] += a;
                    p[o1] += b;
                    int q[3] = {p[0], p[1], p[2]};
                    q[ax] += 1;
                    if (in(p[0], p[1], p[2]) == in(q[0], q[1], q[2])) continue;
                    double mid[3] = {static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2])};
                    mid[ax] += 0.5;
                    for (int k = 0; k < 3; ++k) sum[static_cast<std::size_t>(k)] += mid[k];
                    ++n;
                }
        }
        const int org[3] = {origin_.x, origin_.y, origin_.z};
        Vec3 v{};
        for (std::size_t k = 0; k < 3; ++k) v[k] = (sum[k] / n - org[k]) * m_.spacing()[k];
        return v;
    }

    const BinaryMask& m_;
    Index3 origin_;
    Dims cd_{};
    std::vector<int> vertex_of_;
    std::vector<Vec3> verts_;
};

}  // namespace

SurfaceMeasures surface_measures(const BinaryMask& mask) {
    const Dims& d = mask.dims();
    // Coordinates relative to the foreground bounding box keep the result
    // exactly translation invariant.
    Index3 origin{d[0], d[1], d[2]};
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x)
                if (mask.get(x, y, z)) origin = {std::min(origin.x, x), std::min(origin.y, y), std::min(origin.z, z)};

    SurfaceNet net(mask, origin);
    SurfaceMeasures out;
    for (int ax = 0; ax < 3; ++ax) {
        const int o0 = (ax + 1) % 3, o1 = (ax + 2) % 3;
        int lo[3] = {0, 0, 0};
        lo[ax] = -1;
        for (int z = lo[2]; z < d[2]; ++z)
            for (int y = lo[1]; y < d[1]; ++y)
                for (int x = lo[0]; x < d[0]; ++x) {
                    int p[3] = {x, y, z};
                    int q[3] = {x, y, z};
                    q[ax] += 1;
                    const bool a = mask.get_or_background(p[0], p[1], p[2]);
                    const bool b = mask.get_or_background(q[0], q[1], q[2]);
                    if (a == b) continue;
                    // Four dual cells around the edge, counter-clockwise about +ax.
                    static constexpr int ring[4][2] = {{0, 0}, {-1, 0}, {-1, -1}, {0, -1}};
                    Vec3 quad[4];
                    for (int k = 0; k < 4; ++k) {
                        int c[3] = {p[0], p[1], p[2]};
                        c[o0] += ring[k][0];
                        c[o1] += ring[k][1];
                        quad[k] = net.vertex(c[0], c[1], c[2]);
                    }
                    if (!a) std::swap(quad[1], quad[3]);  // outward normal points to -ax
                    Vec3 centre{};
                    for (std::size_t k = 0; k < 3; ++k) centre[k] = (quad[0][k] + quad[1][k] + quad[2][k] + quad[3][k]) / 4.0;
                    for (int k = 0; k < 4; ++k) {
                        const Vec3& u = quad[k];
                        const Vec3& w = quad[(k + 1) % 4];
                        out.area_mm2 += 0.5 * norm(cross(sub(u, centre), sub(w, centre)));
                        out.volume_mm3 += dot(centre, cross(u, w)) / 6.0;
                        ++out.triangles;
                    }
                }
    }
    return out;
}

}  // namespace lesionfp
