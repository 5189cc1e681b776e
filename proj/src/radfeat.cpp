#include "lesionfp/radfeat.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lesionfp {

std::string_view to_string(SourceMode m) {
    switch (m) {
    case SourceMode::uncertainty: return "uncertainty";
    case SourceMode::image: return "image";
    case SourceMode::mask_only: return "mask_only";
    }
    return "uncertainty";
}

SourceMode source_mode_from_string(std::string_view name) {
    for (SourceMode m : {SourceMode::uncertainty, SourceMode::image, SourceMode::mask_only})
        if (to_string(m) == name) return m;
    throw Error("unknown source mode '" + std::string(name) + "'");
}

double FeatureVector::get(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw Error("missing feature '" + std::string(name) + "'");
}

RoiPatch extract_roi(const VolumeGrid& source, const BinaryMask& mask, const LesionComponent& lesion,
                     const RoiOptions& options, SourceMode mode) {
    if (lesion.voxels.empty()) throw Error("extract_roi: empty lesion");
    if (options.margin_voxels < 0) throw Error("extract_roi: negative margin");
    if (source.dims() != mask.dims() || lesion.dims != mask.dims())
        throw Error("extract_roi: source, mask and lesion grids differ");

    const int m = options.margin_voxels;
    const BoundingBox box{{lesion.bbox.min.x - m, lesion.bbox.min.y - m, lesion.bbox.min.z - m},
                          {lesion.bbox.max.x + m, lesion.bbox.max.y + m, lesion.bbox.max.z + m}};
    const VolumeGrid scalar = crop(source, box);
    const BinaryMask lesion_mask = crop(component_mask(lesion), box);

    const Spacing iso{options.iso_spacing, options.iso_spacing, options.iso_spacing};
    RoiPatch patch;
    patch.scalar = resample(scalar, iso, Interpolation::bspline3);
    patch.mask = resample(lesion_mask, iso);
    patch.mode = mode;
    patch.key.lesion_id = lesion.id;

    if (patch.mask.empty()) {
        // Downsampling can miss a tiny lesion entirely; keep the voxel nearest
        // to its centroid.
        double c[3] = {0.0, 0.0, 0.0};
        for (std::int64_t v : lesion.voxels) {
            const Index3 p = unravel(lesion.dims, v);
            c[0] += p.x;
            c[1] += p.y;
            c[2] += p.z;
        }
        const int lo[3] = {std::max(box.min.x, 0), std::max(box.min.y, 0), std::max(box.min.z, 0)};
        int q[3];
        for (std::size_t a = 0; a < 3; ++a) {
            const double phys = (c[a] / static_cast<double>(lesion.voxels.size()) - lo[a]) * source.spacing()[a];
            q[a] = std::clamp(static_cast<int>(std::lround(phys / options.iso_spacing)), 0, patch.mask.dims()[a] - 1);
        }
        patch.mask.set(q[0], q[1], q[2], true);
    }
    return patch;
}

const std::vector<std::string>& shape_feature_names() {
    static const std::vector<std::string> names = {
        "shape_voxel_count",       "shape_volume_mm3",        "shape_surface_area_mm2",   "shape_surface_to_volume",
        "shape_sphericity",        "shape_maximum_3d_diameter", "shape_major_axis_length", "shape_minor_axis_length",
        "shape_least_axis_length", "shape_elongation",        "shape_flatness"};
    return names;
}

const std::vector<std::string>& firstorder_feature_names() {
    static const std::vector<std::string> names = {
        "firstorder_mean",     "firstorder_median",   "firstorder_minimum",  "firstorder_maximum",
        "firstorder_range",    "firstorder_variance", "firstorder_skewness", "firstorder_kurtosis",
        "firstorder_energy",   "firstorder_entropy",  "firstorder_p10",      "firstorder_p90",
        "firstorder_interquartile_range", "firstorder_rms", "firstorder_mean_absolute_deviation"};
    return names;
}

const std::vector<std::string>& glcm_feature_names() {
    static const std::vector<std::string> names = {
        "glcm_contrast",      "glcm_correlation",   "glcm_joint_energy",  "glcm_joint_entropy",
        "glcm_inverse_difference_moment", "glcm_cluster_shade", "glcm_cluster_prominence",
        "glcm_maximum_probability"};
    return names;
}

std::vector<std::string> feature_names(SourceMode mode) {
    std::vector<std::string> out = shape_feature_names();
    if (mode != SourceMode::mask_only) {
        const auto& fo = firstorder_feature_names();
        const auto& tx = glcm_feature_names();
        out.insert(out.end(), fo.begin(), fo.end());
        out.insert(out.end(), tx.begin(), tx.end());
    }
    return out;
}

FeatureVector shape_features(const BinaryMask& mask) {
    const Dims& d = mask.dims();
    const Spacing& s = mask.spacing();
    std::vector<std::array<double, 3>> pts;
    std::vector<std::array<double, 3>> surface;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                if (!mask.get(x, y, z)) continue;
                const std::array<double, 3> p{x * s[0], y * s[1], z * s[2]};
                pts.push_back(p);
                const bool border = !mask.get_or_background(x - 1, y, z) || !mask.get_or_background(x + 1, y, z) ||
                                    !mask.get_or_background(x, y - 1, z) || !mask.get_or_background(x, y + 1, z) ||
                                    !mask.get_or_background(x, y, z - 1) || !mask.get_or_background(x, y, z + 1);
                if (border) surface.push_back(p);
            }
    if (pts.empty()) throw Error("shape_features: empty mask");

    const double n = static_cast<double>(pts.size());
    const double voxel_volume = s[0] * s[1] * s[2];
    const SurfaceMeasures mesh = surface_measures(mask);

    double diameter2 = 0.0;
    for (std::size_t i = 0; i < surface.size(); ++i)
        for (std::size_t j = i + 1; j < surface.size(); ++j) {
            const double dx = surface[i][0] - surface[j][0];
            const double dy = surface[i][1] - surface[j][1];
            const double dz = surface[i][2] - surface[j][2];
            diameter2 = std::max(diameter2, dx * dx + dy * dy + dz * dz);
        }
    const double diameter = pts.size() == 1 ? std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) : std::sqrt(diameter2);

    // Principal components of the voxel coordinates (population covariance).
    // Centred on the first voxel to avoid cancellation far from the origin.
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += Eigen::Vector3d(p[0] - pts[0][0], p[1] - pts[0][1], p[2] - pts[0][2]);
    mean /= n;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d v = Eigen::Vector3d(p[0] - pts[0][0], p[1] - pts[0][1], p[2] - pts[0][2]) - mean;
        cov += v * v.transpose();
    }
    cov /= n;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
    // Ascending order from Eigen.
    const double l3 = std::max(eig.eigenvalues()[0], 0.0);
    const double l2 = std::max(eig.eigenvalues()[1], 0.0);
    const double l1 = std::max(eig.eigenvalues()[2], 0.0);
    const double elongation = l1 > 0.0 ? std::sqrt(l2 / l1) : 1.0;
    const double flatness = l1 > 0.0 ? std::sqrt(l3 / l1) : 1.0;

    const double area = mesh.area_mm2;
    const double mesh_volume = mesh.volume_mm3;
    const double sphericity =
        area > 0.0 ? std::cbrt(36.0 * std::numbers::pi * mesh_volume * mesh_volume) / area : 1.0;

    return {shape_feature_names(),
            {n, n * voxel_volume, area, mesh_volume > 0.0 ? area / mesh_volume : 0.0, sphericity, diameter,
             4.0 * std::sqrt(l1), 4.0 * std::sqrt(l2), 4.0 * std::sqrt(l3), elongation, flatness}};
}

namespace {

std::vector<double> in_mask_values(const RoiPatch& patch) {
    if (patch.mode == SourceMode::mask_only) throw Error("intensity features are undefined in mask_only mode");
    if (patch.scalar.dims() != patch.mask.dims()) throw Error("patch scalar and mask grids differ");
    std::vector<double> vals;
    for (std::int64_t i = 0; i < patch.mask.size(); ++i)
        if (patch.mask[i]) vals.push_back(patch.scalar[i]);
    if (vals.empty()) throw Error("empty patch mask");
    return vals;
}

// Linear interpolation between closest ranks on sorted data.
double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

int grey_level(double v, double lo, double hi, int bins) {
    if (!(hi > lo)) return 1;
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::clamp(b, 0, bins - 1) + 1;
}

}  // namespace

FeatureVector firstorder_features(const RoiPatch& patch) {
    std::vector<double> vals = in_mask_values(patch);
    std::sort(vals.begin(), vals.end());
    const double n = static_cast<double>(vals.size());
    double sum = 0.0, energy = 0.0;
    for (double v : vals) {
        sum += v;
        energy += v * v;
    }
    const double mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
    for (double v : vals) {
        const double dv = v - mean;
        m2 += dv * dv;
        m3 += dv * dv * dv;
        m4 += dv * dv * dv * dv;
        mad += std::abs(dv);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;
    const double lo = vals.front(), hi = vals.back();
    const bool constant = !(hi > lo);
    const double skewness = constant || m2 <= 0.0 ? 0.0 : m3 / std::pow(m2, 1.5);
    const double kurtosis = constant || m2 <= 0.0 ? 0.0 : m4 / (m2 * m2) - 3.0;

    std::vector<double> hist(kTextureBins, 0.0);
    for (double v : vals) hist[static_cast<std::size_t>(grey_level(v, lo, hi, kTextureBins) - 1)] += 1.0;
    double entropy = 0.0;
    for (double h : hist)
        if (h > 0.0) entropy -= (h / n) * std::log2(h / n);

    return {firstorder_feature_names(),
            {mean, quantile(vals, 0.5), lo, hi, hi - lo, m2, skewness, kurtosis, energy, entropy, quantile(vals, 0.1),
             quantile(vals, 0.9), quantile(vals, 0.75) - quantile(vals, 0.25), std::sqrt(energy / n), mad}};
}

std::vector<int> discretize(const RoiPatch& patch, int bins) {
    const std::vector<double> vals = in_mask_values(patch);
    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
    std::vector<int> levels(static_cast<std::size_t>(patch.mask.size()), 0);
    for (std::int64_t i = 0; i < patch.mask.size(); ++i)
        if (patch.mask[i]) levels[static_cast<std::size_t>(i)] = grey_level(patch.scalar[i], *lo, *hi, bins);
    return levels;
}

const std::vector<Index3>& glcm_offsets() {
    static const std::vector<Index3> offs = {{1, 0, 0},  {0, 1, 0},   {0, 0, 1},  {1, 1, 0},   {1, -1, 0},
                                             {1, 0, 1},  {1, 0, -1},  {0, 1, 1},  {0, 1, -1},  {1, 1, 1},
                                             {1, 1, -1}, {1, -1, 1},  {1, -1, -1}};
    return offs;
}

Glcm glcm_matrix(const RoiPatch& patch, const std::vector<Index3>& offsets) {
    const std::vector<int> levels = discretize(patch);
    const Dims& d = patch.mask.dims();
    const int ng = kTextureBins;
    Glcm out;
    out.levels = ng;
    out.p.assign(static_cast<std::size_t>(ng * ng), 0.0);
    std::vector<double> counts(static_cast<std::size_t>(ng * ng));
    int used = 0;
    for (const Index3& o : offsets) {
        std::fill(counts.begin(), counts.end(), 0.0);
        double total = 0.0;
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    const int a = levels[static_cast<std::size_t>(linear_index(d, x, y, z))];
                    if (a == 0 || !inside(d, x + o.x, y + o.y, z + o.z)) continue;
                    const int b = levels[static_cast<std::size_t>(linear_index(d, x + o.x, y + o.y, z + o.z))];
                    if (b == 0) continue;
                    counts[static_cast<std::size_t>((a - 1) * ng + (b - 1))] += 1.0;
                    counts[static_cast<std::size_t>((b - 1) * ng + (a - 1))] += 1.0;
                    total += 2.0;
                }
        if (total == 0.0) continue;
        for (std::size_t k = 0; k < counts.size(); ++k) out.p[k] += counts[k] / total;
        ++used;
    }
    if (used == 0) {
        // No neighbouring pairs (single voxel): treat as a single grey level.
        const int lvl = *std::max_element(levels.begin(), levels.end());
        out.p[static_cast<std::size_t>((lvl - 1) * ng + (lvl - 1))] = 1.0;
        return out;
    }
    double sum = 0.0;
    for (double& v : out.p) v /= used;
    for (double v : out.p) sum += v;
    for (double& v : out.p) v /= sum;
    return out;
}

FeatureVector glcm_feature_values(const Glcm& m) {
    const int ng = m.levels;
    double mu = 0.0;
    for (int i = 1; i <= ng; ++i)
        for (int j = 1; j <= ng; ++j) mu += i * m.at(i, j);
    double var = 0.0, cross = 0.0;
    double contrast = 0.0, energy = 0.0, entropy = 0.0, idm = 0.0, shade = 0.0, prominence = 0.0, maxp = 0.0;
    for (int i = 1; i <= ng; ++i)
        for (int j = 1; j <= ng; ++j) {
            const double p = m.at(i, j);
            if (p == 0.0) continue;
            const double diff = i - j;
            const double s = i + j - 2.0 * mu;
            var += (i - mu) * (i - mu) * p;
            cross += (i - mu) * (j - mu) * p;
            contrast += diff * diff * p;
            energy += p * p;
            entropy -= p * std::log2(p);
            idm += p / (1.0 + diff * diff);
            shade += s * s * s * p;
            prominence += s * s * s * s * p;
            maxp = std::max(maxp, p);
        }
    const double correlation = var > 1e-12 ? std::clamp(cross / var, -1.0, 1.0) : 1.0;
    return {glcm_feature_names(), {contrast, correlation, energy, entropy, idm, shade, prominence, maxp}};
}

FeatureVector glcm_features(const RoiPatch& patch) { return glcm_feature_values(glcm_matrix(patch, glcm_offsets())); }

FeatureVector lesion_features(const RoiPatch& patch) {
    FeatureVector out = shape_features(patch.mask);
    if (patch.mode != SourceMode::mask_only) {
        for (const FeatureVector& part : {firstorder_features(patch), glcm_features(patch)}) {
            out.names.insert(out.names.end(), part.names.begin(), part.names.end());
            out.values.insert(out.values.end(), part.values.begin(), part.values.end());
        }
    }
    return out;
}

FeatureTable featurize(const std::vector<RoiPatch>& patches, SourceMode mode) {
    FeatureTable table(feature_names(mode));
    for (const RoiPatch& p : patches) {
        if (p.mode != mode) throw Error("featurize: inconsistent source modes across patches");
        FeatureVector fv = lesion_features(p);
        table.add_row(p.key, p.label, std::move(fv.values));
    }
    return table;
}

}  // namespace lesionfp
