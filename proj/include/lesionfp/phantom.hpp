#pragma once
// Synthetic datasets with known lesions: reference masks, intensity images
// and stochastic probability stacks.
//
// Layout under the output directory:
//   manifest.json
//   <patient>/reference.lfv.{json,raw}   u8 mask
//   <patient>/image.lfv.{json,raw}       intensity
//   <patient>/prob_NN.lfv.{json,raw}     one probability volume per sample

#include "lesionfp/uncertainty.hpp"
#include "lesionfp/volgrid.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lesionfp {

struct PhantomSpec {
    std::string dataset = "phantom";
    Dims dims{60, 60, 48};
    Spacing spacing{0.8, 0.8, 1.0};
    int train_patients = 20;
    int val_patients = 6;
    int test_patients = 8;

    // True lesions: ellipsoids, full axis lengths in mm.
    int lesions_min = 2;
    int lesions_max = 4;
    double lesion_axis_min_mm = 6.0;
    double lesion_axis_max_mm = 14.0;
    double miss_rate = 0.1;  // reference lesions the simulated network misses
    double partial_rate = 0.1;  // lesions found only as a small core
    double partial_diameter_min_mm = 3.0;
    double partial_diameter_max_mm = 4.5;
    double irregularity = 0.12;  // relative radial boundary perturbation

    // False detections: small spheres, diameter in mm.
    int false_blobs_min = 2;
    int false_blobs_max = 5;
    double blob_diameter_min_mm = 2.6;
    double blob_diameter_max_mm = 3.0;

    int samples = 10;
    SourceKind source = SourceKind::mcdropout;
    double jitter_mm = 0.4;        // per-sample boundary shift (epistemic)
    double softness_mm = 0.6;      // boundary width (aleatoric)
    double softness_spread = 0.4;  // per-object factor in [1 - spread, 1 + spread]
    double peak_min = 0.85;        // per-object peak probability range
    double peak_max = 0.995;
    double noise = 0.03;           // fixed per-patient probability texture
    double background_probability = 0.01;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static PhantomSpec from_json(const nlohmann::json& j);
};

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct PatientEntry {
    std::string id;
    Split split = Split::train;
};

struct DatasetManifest {
    std::string dataset;
    SourceKind source = SourceKind::mcdropout;
    int samples = 1;
    std::vector<PatientEntry> patients;

    static DatasetManifest load(const std::filesystem::path& dir);
    void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
};

// Writes a complete dataset; returns its manifest. Fails when the requested
// lesions cannot be packed into the volume.
DatasetManifest generate_phantom(const PhantomSpec& spec, const std::filesystem::path& out_dir);

ProbabilityStack load_stack(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest,
                            const std::string& patient);

}  // namespace lesionfp
