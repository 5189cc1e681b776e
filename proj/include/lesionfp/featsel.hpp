#pragma once
// Correlation-based feature reduction: average-linkage clustering on
// d = 1 - pearson, a strict flat cut, and one max-MI representative per
// cluster.

#include "lesionfp/feature_table.hpp"

#include <json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace lesionfp {

struct DistanceMatrix {
    std::vector<std::string> names;
    std::vector<double> d;  // n x n, row-major
    std::vector<std::string> dropped_constant;

    std::size_t size() const noexcept { return names.size(); }
    double at(std::size_t i, std::size_t j) const { return d[i * names.size() + j]; }
};

double pearson(std::span<const double> a, std::span<const double> b);

// Constant columns are dropped (and listed) before the matrix is formed.
DistanceMatrix correlation_distance_matrix(const FeatureTable& t);

struct Merge {
    int a = 0;  // cluster ids: leaves 0..n-1, merge k creates n + k
    int b = 0;
    double height = 0.0;
    int size = 0;
};

struct Dendrogram {
    int leaves = 0;
    std::vector<Merge> merges;
};

// Average linkage. Ties go to the lexicographically smallest pair of active
// slots, where a merged cluster takes the lower slot of its two parts.
Dendrogram agglomerate(const DistanceMatrix& d);
Dendrogram agglomerate(std::span<const double> d, int n);

// Clusters are maximal subtrees whose merge heights are all strictly below
// height. Each cluster lists leaf indices ascending; clusters are ordered by
// their smallest leaf.
std::vector<std::vector<int>> flat_cut(const Dendrogram& dend, double height);

inline constexpr int kMiBins = 16;

// Equal-frequency binning of the feature (ties share a bin), MI in nats.
double mutual_information(std::span<const double> feature, std::span<const Label> labels, int bins = kMiBins);

struct SelectionResult {
    std::vector<std::vector<std::string>> clusters;
    std::vector<std::string> chosen;
    std::map<std::string, double> mi_scores;
    std::vector<std::string> dropped_constant;
    double cut_height = 1.0;

    nlohmann::json to_json() const;
    static SelectionResult from_json(const nlohmann::json& j);
    friend bool operator==(const SelectionResult&, const SelectionResult&) = default;
};

inline constexpr double kDefaultCutHeight = 1.0;

SelectionResult select_features(const FeatureTable& t, double cut_height = kDefaultCutHeight);

}  // namespace lesionfp
