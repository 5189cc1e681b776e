#pragma once
// Extremely Randomized Trees for TP/FP lesion classification.
//
// Each tree sees the full training set (no bootstrap). At a node, up to
// max_features non-constant features are drawn without replacement, each gets
// one uniform threshold in (min, max) of its node values, and the candidate
// with the largest impurity decrease wins. Tree t is seeded with seed + t, so
// results do not depend on how trees are spread over threads.
//
// FP is the positive class: predict_proba returns P(FP).

#include "lesionfp/feature_table.hpp"
#include "lesionfp/featsel.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lesionfp {

enum class Criterion { gini, entropy };

std::string_view to_string(Criterion c);
Criterion criterion_from_string(std::string_view s);

struct ErtHyperparams {
    int n_trees = 250;
    int min_samples_split = 2;
    int min_samples_leaf = 1;
    Criterion criterion = Criterion::gini;
    int max_features = 0;  // 0 selects ceil(sqrt(d))
    std::uint64_t seed = 0;

    int resolved_max_features(std::size_t d) const;
    nlohmann::json to_json() const;
    static ErtHyperparams from_json(const nlohmann::json& j);
    friend bool operator==(const ErtHyperparams&, const ErtHyperparams&) = default;
};

// Cartesian grid over trees {250,500,750,1000}, min split {2,4,8,10,12},
// min leaf {1,2,4,8,10} and both criteria.
std::vector<ErtHyperparams> default_grid(std::uint64_t seed = 0);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // x <= threshold goes left
    int left = -1;
    int right = -1;
    int count_tp = 0;
    int count_fp = 0;

    bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    const TreeNode& leaf_for(std::span<const double> x) const;
    double fp_fraction(std::span<const double> x) const;
};

struct ModelMetadata {
    std::size_t n_samples = 0;
    std::size_t n_tp = 0;
    std::size_t n_fp = 0;
    double tp_fp_ratio = 0.0;
    std::vector<std::string> provenance;  // dataset names seen in training
};

struct ExtraTreesModel {
    std::vector<Tree> trees;
    ErtHyperparams hyperparams;
    std::vector<std::string> feature_names;
    ModelMetadata metadata;
    std::optional<SelectionResult> selection;

    // x in feature_names order.
    double predict_proba(std::span<const double> x) const;
    // x by name; extra names are ignored, missing ones are an error.
    double predict_proba(const std::vector<std::string>& names, std::span<const double> values) const;
    std::vector<double> predict_proba(const FeatureTable& t, int threads = 1) const;

    void validate() const;
    nlohmann::json to_json() const;
    std::string serialize() const;
    static ExtraTreesModel from_json(const nlohmann::json& j);
    static ExtraTreesModel load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

inline constexpr const char* kModelFormat = "ertmodel/1";

// Every sampled split candidate at a node, for checking split optimality.
struct SplitCandidate {
    int feature = 0;
    double threshold = 0.0;
    double decrease = 0.0;
    bool valid = false;  // both children satisfy min_samples_leaf
};

struct NodeTrace {
    int tree = 0;
    int node = 0;
    std::vector<SplitCandidate> candidates;
    int chosen = -1;  // index into candidates, -1 for a leaf
};

struct FitOptions {
    int threads = 1;
    std::vector<NodeTrace>* trace = nullptr;  // collected in tree order when set
};

ExtraTreesModel fit(const FeatureTable& t, const ErtHyperparams& h, const FitOptions& opts = {});

// FP iff P(FP) > threshold.
Label classify(const ExtraTreesModel& m, std::span<const double> x, double threshold = 0.5);

// Mann-Whitney AUC with FP as the positive class; ties count one half.
double roc_auc(std::span<const double> scores, std::span<const Label> labels);

struct CvResult {
    ErtHyperparams best;
    double cv_auc = 0.0;
    std::vector<double> grid_auc;  // mean fold AUC per grid entry
};

// Stratified k-fold search maximizing mean fold AUC. Ties prefer fewer trees,
// then smaller min_samples_split, then gini, then smaller min_samples_leaf,
// then the earlier grid entry.
CvResult cv_select(const FeatureTable& t, const std::vector<ErtHyperparams>& grid, int k = 5,
                   std::uint64_t fold_seed = 0, int threads = 1);

// Row indices per fold, stratified by label.
std::vector<std::vector<std::size_t>> stratified_folds(const FeatureTable& t, int k, std::uint64_t seed);

struct FeatureImportance {
    std::string feature;
    double score = 0.0;
};

// Holdout AUC drop when each feature is removed and the model refitted with
// the same hyperparameters and seed.
std::vector<FeatureImportance> loco_importance(const FeatureTable& train, const ErtHyperparams& h,
                                               const FeatureTable& holdout, int threads = 1);

}  // namespace lesionfp
