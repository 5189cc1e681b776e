#pragma once
// Lesion correspondence graph between predicted and reference components,
// with detection counting under many-to-one and one-to-many overlaps.

#include "lesionfp/volgrid.hpp"

#include <json.hpp>

#include <set>
#include <vector>

namespace lesionfp {

struct CorrespondenceEdge {
    int predicted_id = 0;
    int reference_id = 0;
    double dice = 0.0;
    friend bool operator==(const CorrespondenceEdge&, const CorrespondenceEdge&) = default;
};

// One record per overlapping pair. The predicted->reference and
// reference->predicted directions carry the same Dice weight.
struct CorrespondenceGraph {
    std::vector<LesionComponent> predicted;
    std::vector<LesionComponent> reference;
    std::vector<CorrespondenceEdge> edges;  // sorted by (predicted_id, reference_id)

    std::vector<const CorrespondenceEdge*> edges_of_predicted(int id) const;
    bool has_predicted(int id) const;
};

struct DetectionCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;

    DetectionCounts& operator+=(const DetectionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const DetectionCounts&, const DetectionCounts&) = default;
};

struct DetectionMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

CorrespondenceGraph build_graph(std::vector<LesionComponent> predicted, std::vector<LesionComponent> reference);

DetectionCounts count_detections(const CorrespondenceGraph& g);

// Empty-case conventions: 0/0 ratios are 1 when tp = fp = fn = 0, else 0.
DetectionMetrics metrics(const DetectionCounts& c);

// Removes the named predicted nodes and their edges.
CorrespondenceGraph filter_graph(const CorrespondenceGraph& g, const std::set<int>& fp_predicted_ids);

// Predicted ids with at least one overlapping reference lesion.
std::set<int> matched_predicted_ids(const CorrespondenceGraph& g);

nlohmann::json to_json(const CorrespondenceGraph& g);
nlohmann::json to_json(const DetectionCounts& c);
nlohmann::json to_json(const DetectionMetrics& m);

}  // namespace lesionfp
