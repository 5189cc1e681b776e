#include "lesionfp/volgrid.hpp"

#include <algorithm>
#include <cmath>

namespace lesionfp {
namespace {

// Whole-sample mirror: -1 -> 1, n -> n - 2.
int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

// In-place conversion of samples to cubic B-spline coefficients along one
// line (Unser's recursive filter, mirror boundary).
void prefilter_line(std::vector<double>& c) {
    const int n = static_cast<int>(c.size());
    if (n == 1) return;
    const double z = std::sqrt(3.0) - 2.0;
    const double gain = (1.0 - z) * (1.0 - 1.0 / z);
    for (double& v : c) v *= gain;

    // Causal initialization, truncated where z^k falls below double precision.
    const int horizon = std::min(n, static_cast<int>(std::ceil(std::log(1e-16) / std::log(std::abs(z)))));
    double sum = c[0];
    if (horizon < n) {
        double zk = z;
        for (int k = 1; k < horizon; ++k) {
            sum += zk * c[static_cast<std::size_t>(k)];
            zk *= z;
        }
    } else {
        double zk = z;
        const double zn = std::pow(z, n - 1);
        double z2n = zn * zn / z;
        sum = c[0] + zn * c[static_cast<std::size_t>(n - 1)];
        for (int k = 1; k < n - 1; ++k) {
            sum += (zk + z2n) * c[static_cast<std::size_t>(k)];
            zk *= z;
            z2n /= z;
        }
        sum /= 1.0 - zn * zn;
    }
    c[0] = sum;
    for (int k = 1; k < n; ++k) c[static_cast<std::size_t>(k)] += z * c[static_cast<std::size_t>(k - 1)];
    c[static_cast<std::size_t>(n - 1)] =
        (z / (z * z - 1.0)) * (z * c[static_cast<std::size_t>(n - 2)] + c[static_cast<std::size_t>(n - 1)]);
    for (int k = n - 2; k >= 0; --k)
        c[static_cast<std::size_t>(k)] = z * (c[static_cast<std::size_t>(k + 1)] - c[static_cast<std::size_t>(k)]);
}

std::vector<double> bspline_coefficients(const VolumeGrid& v) {
    const Dims& d = v.dims();
    std::vector<double> coef(v.data().begin(), v.data().end());
    std::vector<double> line;
    for (int axis = 0; axis < 3; ++axis) {
        const int n = d[static_cast<std::size_t>(axis)];
        if (n == 1) continue;
        line.resize(static_cast<std::size_t>(n));
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        for (int j = 0; j < d[static_cast<std::size_t>(a2)]; ++j)
            for (int i = 0; i < d[static_cast<std::size_t>(a1)]; ++i) {
                int p[3];
                p[a1] = i;
                p[a2] = j;
                for (int k = 0; k < n; ++k) {
                    p[axis] = k;
                    line[static_cast<std::size_t>(k)] = coef[static_cast<std::size_t>(linear_index(d, p[0], p[1], p[2]))];
                }
                prefilter_line(line);
                for (int k = 0; k < n; ++k) {
                    p[axis] = k;
                    coef[static_cast<std::size_t>(linear_index(d, p[0], p[1], p[2]))] = line[static_cast<std::size_t>(k)];
                }
            }
    }
    return coef;
}

void cubic_weights(double t, double w[4]) {
    const double s = 1.0 - t;
    w[0] = s * s * s / 6.0;
    w[1] = (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
    w[2] = (4.0 - 6.0 * s * s + 3.0 * s * s * s) / 6.0;
    w[3] = t * t * t / 6.0;
}

Dims output_dims(const Dims& d, const Spacing& s, const Spacing& target) {
    Dims out{};
    for (std::size_t a = 0; a < 3; ++a) {
        // Guard against 10.000000000000002-style ceil artefacts.
        const double extent = d[a] * s[a] / target[a];
        const double rounded = std::round(extent);
        out[a] = std::abs(extent - rounded) < 1e-9 ? static_cast<int>(rounded) : static_cast<int>(std::ceil(extent));
        out[a] = std::max(out[a], 1);
    }
    return out;
}

void check_target(const Spacing& target) {
    for (double t : target)
        if (!(t > 0.0) || !std::isfinite(t)) throw Error("degenerate target spacing");
}

int nearest_index(int i, double scale, int n) {
    const int k = static_cast<int>(std::floor(i * scale + 0.5));
    return std::clamp(k, 0, n - 1);
}

}  // namespace

VolumeGrid resample(const VolumeGrid& v, const Spacing& target, Interpolation method) {
    check_target(target);
    if (method == Interpolation::bspline3 && v.kind() == ValueKind::label)
        throw Error("label volumes must be resampled with nearest-neighbour interpolation");
    if (target == v.spacing()) return v;

    const Dims& d = v.dims();
    const Dims od = output_dims(d, v.spacing(), target);
    const double scale[3] = {target[0] / v.spacing()[0], target[1] / v.spacing()[1], target[2] / v.spacing()[2]};
    std::vector<float> out(static_cast<std::size_t>(voxel_count(od)));

    if (method == Interpolation::nearest) {
        for (int z = 0; z < od[2]; ++z)
            for (int y = 0; y < od[1]; ++y)
                for (int x = 0; x < od[0]; ++x)
                    out[static_cast<std::size_t>(linear_index(od, x, y, z))] =
                        v.at(nearest_index(x, scale[0], d[0]), nearest_index(y, scale[1], d[1]),
                             nearest_index(z, scale[2], d[2]));
        return VolumeGrid(od, target, v.kind(), std::move(out));
    }

    const std::vector<double> coef = bspline_coefficients(v);
    // Per-axis tap indices and weights are separable; precompute them.
    struct Taps {
        int idx[4];
        double w[4];
    };
    std::vector<Taps> taps[3];
    for (std::size_t a = 0; a < 3; ++a) {
        taps[a].resize(static_cast<std::size_t>(od[a]));
        for (int i = 0; i < od[a]; ++i) {
            const double pos = i * scale[a];
            const double base = std::floor(pos);
            Taps& t = taps[a][static_cast<std::size_t>(i)];
            cubic_weights(pos - base, t.w);
            for (int k = 0; k < 4; ++k) t.idx[k] = mirror(static_cast<int>(base) - 1 + k, d[a]);
        }
    }
    for (int z = 0; z < od[2]; ++z) {
        const Taps& tz = taps[2][static_cast<std::size_t>(z)];
        for (int y = 0; y < od[1]; ++y) {
            const Taps& ty = taps[1][static_cast<std::size_t>(y)];
            for (int x = 0; x < od[0]; ++x) {
                const Taps& tx = taps[0][static_cast<std::size_t>(x)];
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    double accy = 0.0;
                    for (int j = 0; j < 4; ++j) {
                        double accx = 0.0;
                        const std::int64_t row = linear_index(d, 0, ty.idx[j], tz.idx[k]);
                        for (int i = 0; i < 4; ++i) accx += tx.w[i] * coef[static_cast<std::size_t>(row + tx.idx[i])];
                        accy += ty.w[j] * accx;
                    }
                    acc += tz.w[k] * accy;
                }
                if (v.kind() == ValueKind::probability) acc = std::clamp(acc, 0.0, 1.0);
                if (v.kind() == ValueKind::uncertainty) acc = std::max(acc, 0.0);
                out[static_cast<std::size_t>(linear_index(od, x, y, z))] = static_cast<float>(acc);
            }
        }
    }
    return VolumeGrid(od, target, v.kind(), std::move(out));
}

BinaryMask resample(const BinaryMask& m, const Spacing& target) {
    check_target(target);
    if (target == m.spacing()) return m;
    const Dims& d = m.dims();
    const Dims od = output_dims(d, m.spacing(), target);
    const double scale[3] = {target[0] / m.spacing()[0], target[1] / m.spacing()[1], target[2] / m.spacing()[2]};
    BinaryMask out(od, target);
    for (int z = 0; z < od[2]; ++z)
        for (int y = 0; y < od[1]; ++y)
            for (int x = 0; x < od[0]; ++x)
                if (m.get(nearest_index(x, scale[0], d[0]), nearest_index(y, scale[1], d[1]),
                          nearest_index(z, scale[2], d[2])))
                    out.set(x, y, z, true);
    return out;
}

}  // namespace lesionfp
