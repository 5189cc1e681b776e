#include "lesionfp/featsel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

namespace lesionfp {
using nlohmann::json;

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw Error("pearson: need two equal-length columns of size >= 2");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw Error("pearson: zero-variance column");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

bool is_constant(const std::vector<double>& col) {
    return std::all_of(col.begin(), col.end(), [&](double v) { return v == col.front(); });
}

}  // namespace

DistanceMatrix correlation_distance_matrix(const FeatureTable& t) {
    DistanceMatrix out;
    std::vector<std::vector<double>> cols;
    for (std::size_t c = 0; c < t.cols(); ++c) {
        auto col = t.column(c);
        if (col.empty() || is_constant(col)) {
            out.dropped_constant.push_back(t.names()[c]);
            continue;
        }
        out.names.push_back(t.names()[c]);
        cols.push_back(std::move(col));
    }
    if (!out.dropped_constant.empty()) {
        std::cerr << "warning: dropping constant feature(s):";
        for (const auto& n : out.dropped_constant) std::cerr << ' ' << n;
        std::cerr << '\n';
    }
    const std::size_t n = cols.size();
    if (n < 2) throw Error("correlation distance needs at least two non-constant features");
    out.d.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dist = std::clamp(1.0 - pearson(cols[i], cols[j]), 0.0, 2.0);
            out.d[i * n + j] = dist;
            out.d[j * n + i] = dist;
        }
    return out;
}

Dendrogram agglomerate(const DistanceMatrix& d) { return agglomerate(d.d, static_cast<int>(d.size())); }

Dendrogram agglomerate(std::span<const double> dist, int n) {
    if (n < 1 || dist.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
        throw Error("agglomerate: distance matrix size mismatch");
    const auto N = static_cast<std::size_t>(n);
    std::vector<double> d(dist.begin(), dist.end());
    std::vector<bool> active(N, true);
    std::vector<int> id(N), size(N, 1);
    std::iota(id.begin(), id.end(), 0);

    Dendrogram out;
    out.leaves = n;
    for (int step = 0; step < n - 1; ++step) {
        std::size_t bi = 0, bj = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < N; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < N; ++j) {
                if (!active[j]) continue;
                if (d[i * N + j] < best) {
                    best = d[i * N + j];
                    bi = i;
                    bj = j;
                }
            }
        }
        out.merges.push_back({std::min(id[bi], id[bj]), std::max(id[bi], id[bj]), best, size[bi] + size[bj]});
        // Lance-Williams update for average linkage.
        const double wi = size[bi], wj = size[bj];
        for (std::size_t k = 0; k < N; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const double v = (wi * d[bi * N + k] + wj * d[bj * N + k]) / (wi + wj);
            d[bi * N + k] = v;
            d[k * N + bi] = v;
        }
        active[bj] = false;
        size[bi] += size[bj];
        id[bi] = n + step;
    }
    return out;
}

std::vector<std::vector<int>> flat_cut(const Dendrogram& dend, double height) {
    if (height < 0.0) throw Error("flat_cut: negative height");
    const int n = dend.leaves;
    std::vector<int> parent(static_cast<std::size_t>(n + static_cast<int>(dend.merges.size())));
    std::iota(parent.begin(), parent.end(), 0);
    const auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        return x;
    };
    for (std::size_t k = 0; k < dend.merges.size(); ++k) {
        const Merge& m = dend.merges[k];
        if (!(m.height < height)) continue;
        const int node = n + static_cast<int>(k);
        parent[static_cast<std::size_t>(find(m.a))] = node;
        parent[static_cast<std::size_t>(find(m.b))] = node;
    }
    std::map<int, std::vector<int>> groups;
    for (int leaf = 0; leaf < n; ++leaf) groups[find(leaf)].push_back(leaf);
    std::vector<std::vector<int>> out;
    for (auto& [root, leaves] : groups) out.push_back(std::move(leaves));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return out;
}

double mutual_information(std::span<const double> feature, std::span<const Label> labels, int bins) {
    if (feature.empty() || feature.size() != labels.size()) throw Error("mutual_information: empty or mismatched input");
    const std::size_t n = feature.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return feature[a] < feature[b]; });

    std::size_t distinct = 1;
    for (std::size_t r = 1; r < n; ++r)
        if (feature[order[r]] != feature[order[r - 1]]) ++distinct;
    const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(bins), distinct);

    // Rank-based bin of the first occurrence of each tied value.
    std::vector<std::size_t> bin(n);
    std::size_t current = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (r == 0 || feature[order[r]] != feature[order[r - 1]]) current = r * b / n;
        bin[order[r]] = current;
    }

    std::vector<double> joint(b * 2, 0.0), pb(b, 0.0), pc(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = labels[i] == Label::FP ? 1 : 0;
        joint[bin[i] * 2 + c] += 1.0;
        pb[bin[i]] += 1.0;
        pc[c] += 1.0;
    }
    const double dn = static_cast<double>(n);
    double mi = 0.0;
    for (std::size_t k = 0; k < b; ++k)
        for (std::size_t c = 0; c < 2; ++c) {
            const double pj = joint[k * 2 + c] / dn;
            if (pj <= 0.0) continue;
            mi += pj * std::log(pj / ((pb[k] / dn) * (pc[c] / dn)));
        }
    return std::max(mi, 0.0);
}

SelectionResult select_features(const FeatureTable& t, double cut_height) {
    const DistanceMatrix d = correlation_distance_matrix(t);
    const Dendrogram dend = agglomerate(d);
    SelectionResult out;
    out.cut_height = cut_height;
    out.dropped_constant = d.dropped_constant;
    for (const auto& name : d.names) out.mi_scores[name] = mutual_information(t.column(name), t.labels());
    for (const auto& cluster : flat_cut(dend, cut_height)) {
        std::vector<std::string> names;
        for (int leaf : cluster) names.push_back(d.names[static_cast<std::size_t>(leaf)]);
        std::string best = names.front();
        for (const auto& name : names) {
            const double s = out.mi_scores.at(name), bs = out.mi_scores.at(best);
            if (s > bs || (s == bs && name < best)) best = name;
        }
        out.clusters.push_back(std::move(names));
        out.chosen.push_back(best);
    }
    return out;
}

json SelectionResult::to_json() const {
    json j;
    j["cut_height"] = cut_height;
    j["clusters"] = clusters;
    j["chosen"] = chosen;
    j["mi_scores"] = mi_scores;
    j["dropped_constant"] = dropped_constant;
    return j;
}

SelectionResult SelectionResult::from_json(const json& j) {
    SelectionResult s;
    try {
        s.cut_height = j.at("cut_height").get<double>();
        s.clusters = j.at("clusters").get<std::vector<std::vector<std::string>>>();
        s.chosen = j.at("chosen").get<std::vector<std::string>>();
        s.mi_scores = j.at("mi_scores").get<std::map<std::string, double>>();
        s.dropped_constant = j.value("dropped_constant", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw Error(std::string("malformed selection document: ") + e.what());
    }
    return s;
}

}  // namespace lesionfp
