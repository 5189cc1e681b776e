#pragma once
// End-to-end false-positive reduction: detection, correspondence, features,
// selection, classifier training, graph filtering and reporting.

#include "lesionfp/correspond.hpp"
#include "lesionfp/ert.hpp"
#include "lesionfp/featsel.hpp"
#include "lesionfp/phantom.hpp"
#include "lesionfp/radfeat.hpp"
#include "lesionfp/stats.hpp"
#include "lesionfp/uncertainty.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lesionfp {

// Error raised by a pipeline stage; what() carries the stage tag.
struct StageError : Error {
    StageError(std::string stage_, const std::string& msg)
        : Error("[" + stage_ + "] " + msg), stage(std::move(stage_)) {}
    std::string stage;
};

struct ExperimentConfig {
    std::filesystem::path dataset_dir;
    std::filesystem::path output_dir;  // empty: nothing written
    SourceMode mode = SourceMode::uncertainty;
    UncertaintyType uncertainty_type = UncertaintyType::predictive;
    double probability_threshold = 0.5;
    double iso_spacing = 1.0;
    int roi_margin = 2;
    double cut_height = kDefaultCutHeight;
    std::vector<ErtHyperparams> grid;  // empty: default_grid
    int cv_folds = 5;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double classifier_threshold = 0.5;
    bool classifier_enabled = true;
    bool loco = true;
    double logsum_epsilon = kLogsumEpsilon;
    int threads = 1;

    // Relative paths in the document resolve against base_dir.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    // Source kinds without parameter variation have no epistemic part, so the
    // type falls back to predictive.
    UncertaintyType effective_uncertainty_type(SourceKind source) const;
    std::vector<ErtHyperparams> grid_for_seed(std::uint64_t seed) const;
};

// Compact grid description: {"n_trees": [...], "min_samples_split": [...],
// "min_samples_leaf": [...], "criterion": [...], "max_features": [...]};
// missing keys take the default grid's values.
std::vector<ErtHyperparams> grid_from_json(const nlohmann::json& j);

struct PatientDetections {
    std::string patient;
    Split split = Split::train;
    CorrespondenceGraph graph;
    DetectionCounts before;
};

struct PreparedDataset {
    DatasetManifest manifest;
    UncertaintyType uncertainty_type = UncertaintyType::predictive;
    std::vector<PatientDetections> patients;  // manifest order
    FeatureTable train;  // train and val patients
    FeatureTable test;
};

PreparedDataset prepare_dataset(const ExperimentConfig& cfg);

// Per patient: probability stack -> uncertainty -> binarize -> close/open ->
// components, matched against the reference components.
PatientDetections detect_patient(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                                 const PatientEntry& patient);

struct TrainedModel {
    ExtraTreesModel model;
    CvResult cv;
};

// Selection on the table, CV over the grid with fold seed = seed, final fit.
TrainedModel train_model(const FeatureTable& train, const ExperimentConfig& cfg, std::uint64_t seed,
                         const std::vector<std::string>& provenance);
TrainedModel train_model(const FeatureTable& train, const SelectionResult& selection, const ExperimentConfig& cfg,
                         std::uint64_t seed, const std::vector<std::string>& provenance);

struct SeedResult {
    std::uint64_t seed = 0;
    ErtHyperparams hyperparams;
    std::optional<double> cv_auc;  // absent for a stored model
    std::optional<double> test_auc;  // needs both classes in the test set
    std::vector<DetectionCounts> per_patient_after;
    DetectionCounts after;
    DetectionMetrics after_metrics;
};

struct MetricSummary {
    double before = 0.0;
    double after_mean = 0.0;
    double after_sd = 0.0;
    double relative_change_pct = 0.0;  // (after_mean - before) / before
    double ks_statistic = 0.0;
    double ks_p_value = 1.0;
};

struct DetectionReport {
    std::string dataset;
    std::vector<std::string> model_provenance;
    SourceMode mode = SourceMode::uncertainty;
    UncertaintyType uncertainty_type = UncertaintyType::predictive;
    std::vector<std::string> patients;  // evaluated (test) patients
    std::vector<DetectionCounts> per_patient_before;
    DetectionCounts before;
    DetectionMetrics before_metrics;
    std::vector<SeedResult> seeds;
    MetricSummary precision, recall, f1;
    std::optional<SelectionResult> selection;
    std::vector<FeatureImportance> loco;  // mean over seeds, descending

    // Fills `before_metrics`, per-seed metrics and the summaries from counts.
    void summarize();
    nlohmann::json to_json() const;
    // One row per (patient, seed) plus aggregate rows.
    std::string to_csv() const;
    void save(const std::filesystem::path& dir) const;
};

DetectionReport run_pipeline(const ExperimentConfig& cfg);
DetectionReport run_pipeline(const ExperimentConfig& cfg, const PreparedDataset& data);

// Applies a stored model (with its own feature projection) to the test
// patients of the configured dataset.
DetectionReport cross_test(const ExtraTreesModel& model, const ExperimentConfig& cfg);
DetectionReport cross_test(const ExtraTreesModel& model, const PreparedDataset& data, const ExperimentConfig& cfg);

// Concatenated training tables of several datasets; all must share columns.
ExtraTreesModel combined_train(const std::vector<ExperimentConfig>& datasets, std::uint64_t seed);
ExtraTreesModel combined_train(const std::vector<PreparedDataset>& datasets, const ExperimentConfig& cfg,
                               std::uint64_t seed);

struct LogsumLesion {
    LesionKey key;
    Label label = Label::TP;
    double logsum = 0.0;
    double scaled = 0.0;
    double max_diameter_mm = 0.0;
    bool removed = false;
};

struct LogsumReport {
    std::string dataset;
    UncertaintyType uncertainty_type = UncertaintyType::predictive;
    LogsumScaler scaler;
    double threshold = 1.0;
    bool threshold_tuned = false;
    std::vector<LogsumLesion> lesions;  // test lesions
    DetectionCounts before, after;
    DetectionMetrics before_metrics, after_metrics;
    double spearman_scaled_vs_diameter = 0.0;

    nlohmann::json to_json() const;
    std::string to_csv() const;
    void save(const std::filesystem::path& dir) const;
};

// Scaling is fitted on training lesions. Without a threshold, the value
// maximizing F1 over the validation patients is used.
LogsumReport run_logsum_baseline(const ExperimentConfig& cfg, std::optional<double> threshold = std::nullopt);

}  // namespace lesionfp
