#pragma once
// Per-lesion region-of-interest extraction and radiomics-style features:
// 11 shape, 15 first-order and 8 GLCM texture features.

#include "lesionfp/feature_table.hpp"
#include "lesionfp/volgrid.hpp"

#include <array>
#include <string>
#include <vector>

namespace lesionfp {

enum class SourceMode { uncertainty, image, mask_only };

std::string_view to_string(SourceMode m);
SourceMode source_mode_from_string(std::string_view name);

struct RoiPatch {
    VolumeGrid scalar;
    BinaryMask mask;
    LesionKey key;
    Label label = Label::TP;
    SourceMode mode = SourceMode::uncertainty;
};

struct RoiOptions {
    int margin_voxels = 2;
    double iso_spacing = 1.0;  // mm
};

// Crops the lesion bounding box plus margin (clamped to the volume) and
// resamples to isotropic spacing: scalar with cubic B-spline, mask with
// nearest neighbour. The patch mask covers only this lesion's voxels.
RoiPatch extract_roi(const VolumeGrid& source, const BinaryMask& mask, const LesionComponent& lesion,
                     const RoiOptions& options, SourceMode mode = SourceMode::uncertainty);

struct FeatureVector {
    std::vector<std::string> names;
    std::vector<double> values;

    double get(std::string_view name) const;
};

// Closed triangulated isosurface of a mask (naive surface nets: one vertex per
// boundary dual cell at the centroid of its edge crossings).
struct SurfaceMeasures {
    double area_mm2 = 0.0;
    double volume_mm3 = 0.0;  // enclosed by the mesh
    std::size_t triangles = 0;
};
SurfaceMeasures surface_measures(const BinaryMask& mask);

const std::vector<std::string>& shape_feature_names();
const std::vector<std::string>& firstorder_feature_names();
const std::vector<std::string>& glcm_feature_names();
std::vector<std::string> feature_names(SourceMode mode);

FeatureVector shape_features(const BinaryMask& mask);
FeatureVector firstorder_features(const RoiPatch& patch);
FeatureVector glcm_features(const RoiPatch& patch);

inline constexpr int kTextureBins = 32;

// 1-based grey levels over the in-mask [min, max] range; 0 outside the mask.
std::vector<int> discretize(const RoiPatch& patch, int bins = kTextureBins);

// Normalized symmetric co-occurrence matrix averaged over the given offsets
// (distance 1). Row-major levels x levels.
struct Glcm {
    int levels = kTextureBins;
    std::vector<double> p;
    double at(int i, int j) const { return p[static_cast<std::size_t>((i - 1) * levels + (j - 1))]; }
};
const std::vector<Index3>& glcm_offsets();  // the 13 unique 3-D directions
Glcm glcm_matrix(const RoiPatch& patch, const std::vector<Index3>& offsets);
FeatureVector glcm_feature_values(const Glcm& m);

FeatureVector lesion_features(const RoiPatch& patch);

// Rows ordered as given; all patches must share one source mode.
FeatureTable featurize(const std::vector<RoiPatch>& patches, SourceMode mode);

}  // namespace lesionfp
