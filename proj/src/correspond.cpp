#include "lesionfp/correspond.hpp"

#include <algorithm>
#include <map>

namespace lesionfp {
using nlohmann::json;

std::vector<const CorrespondenceEdge*> CorrespondenceGraph::edges_of_predicted(int id) const {
    std::vector<const CorrespondenceEdge*> out;
    for (const auto& e : edges)
        if (e.predicted_id == id) out.push_back(&e);
    return out;
}

bool CorrespondenceGraph::has_predicted(int id) const {
    return std::any_of(predicted.begin(), predicted.end(), [id](const LesionComponent& c) { return c.id == id; });
}

CorrespondenceGraph build_graph(std::vector<LesionComponent> predicted, std::vector<LesionComponent> reference) {
    CorrespondenceGraph g;
    const LesionComponent* any = !predicted.empty() ? &predicted.front() : (!reference.empty() ? &reference.front() : nullptr);
    if (any) {
        for (const auto* list : {&predicted, &reference})
            for (const LesionComponent& c : *list)
                if (c.dims != any->dims) throw Error("build_graph: components live on grids with different dims");
    }

    // Candidate pairs come from a voxel -> reference lookup, so only pairs
    // that share at least one voxel are scored.
    std::map<std::int64_t, std::size_t> owner;
    for (std::size_t r = 0; r < reference.size(); ++r)
        for (std::int64_t v : reference[r].voxels) owner.emplace(v, r);

    for (const LesionComponent& p : predicted) {
        std::set<std::size_t> candidates;
        for (std::int64_t v : p.voxels) {
            if (auto it = owner.find(v); it != owner.end()) candidates.insert(it->second);
        }
        for (std::size_t r : candidates) {
            const double d = dice(p, reference[r]);
            if (d > 0.0) g.edges.push_back({p.id, reference[r].id, d});
        }
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const CorrespondenceEdge& a, const CorrespondenceEdge& b) {
        return std::pair(a.predicted_id, a.reference_id) < std::pair(b.predicted_id, b.reference_id);
    });
    g.predicted = std::move(predicted);
    g.reference = std::move(reference);
    return g;
}

DetectionCounts count_detections(const CorrespondenceGraph& g) {
    std::set<int> pred_hit, ref_hit;
    for (const auto& e : g.edges) {
        if (e.dice <= 0.0) continue;
        pred_hit.insert(e.predicted_id);
        ref_hit.insert(e.reference_id);
    }
    DetectionCounts c;
    for (const auto& r : g.reference) (ref_hit.count(r.id) ? c.tp : c.fn) += 1;
    for (const auto& p : g.predicted)
        if (!pred_hit.count(p.id)) ++c.fp;
    return c;
}

DetectionMetrics metrics(const DetectionCounts& c) {
    DetectionMetrics m;
    const bool all_empty = c.tp == 0 && c.fp == 0 && c.fn == 0;
    const auto ratio = [all_empty](int num, int den) {
        if (den == 0) return all_empty ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    const double s = m.precision + m.recall;
    m.f1 = s > 0.0 ? 2.0 * m.precision * m.recall / s : 0.0;
    return m;
}

CorrespondenceGraph filter_graph(const CorrespondenceGraph& g, const std::set<int>& fp_predicted_ids) {
    for (int id : fp_predicted_ids)
        if (!g.has_predicted(id)) throw Error("filter_graph: unknown predicted id " + std::to_string(id));
    CorrespondenceGraph out;
    out.reference = g.reference;
    for (const auto& p : g.predicted)
        if (!fp_predicted_ids.count(p.id)) out.predicted.push_back(p);
    for (const auto& e : g.edges)
        if (!fp_predicted_ids.count(e.predicted_id)) out.edges.push_back(e);
    return out;
}

std::set<int> matched_predicted_ids(const CorrespondenceGraph& g) {
    std::set<int> ids;
    for (const auto& e : g.edges)
        if (e.dice > 0.0) ids.insert(e.predicted_id);
    return ids;
}

namespace {

json component_json(const LesionComponent& c) {
    return {{"id", c.id},
            {"voxel_count", c.voxel_count()},
            {"volume_mm3", c.volume_mm3()},
            {"bbox", {{c.bbox.min.x, c.bbox.min.y, c.bbox.min.z}, {c.bbox.max.x, c.bbox.max.y, c.bbox.max.z}}}};
}

}  // namespace

json to_json(const CorrespondenceGraph& g) {
    json j;
    j["predicted"] = json::array();
    j["reference"] = json::array();
    j["edges"] = json::array();
    for (const auto& c : g.predicted) j["predicted"].push_back(component_json(c));
    for (const auto& c : g.reference) j["reference"].push_back(component_json(c));
    for (const auto& e : g.edges) j["edges"].push_back({{"pid", e.predicted_id}, {"rid", e.reference_id}, {"dice", e.dice}});
    return j;
}

json to_json(const DetectionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}}; }

json to_json(const DetectionMetrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

}  // namespace lesionfp
