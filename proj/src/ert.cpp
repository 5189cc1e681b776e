#include "lesionfp/ert.hpp"

#include "lesionfp/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <thread>
#include <tuple>

namespace lesionfp {
using nlohmann::json;

std::string_view to_string(Criterion c) { return c == Criterion::entropy ? "entropy" : "gini"; }

Criterion criterion_from_string(std::string_view s) {
    if (s == "gini") return Criterion::gini;
    if (s == "entropy") return Criterion::entropy;
    throw Error("unknown split criterion '" + std::string(s) + "'");
}

int ErtHyperparams::resolved_max_features(std::size_t d) const {
    if (max_features > 0) return std::min<int>(max_features, static_cast<int>(d));
    return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d)))));
}

json ErtHyperparams::to_json() const {
    return {{"n_trees", n_trees},
            {"min_samples_split", min_samples_split},
            {"min_samples_leaf", min_samples_leaf},
            {"criterion", to_string(criterion)},
            {"max_features", max_features},
            {"seed", seed}};
}

ErtHyperparams ErtHyperparams::from_json(const json& j) {
    ErtHyperparams h;
    h.n_trees = j.value("n_trees", h.n_trees);
    h.min_samples_split = j.value("min_samples_split", h.min_samples_split);
    h.min_samples_leaf = j.value("min_samples_leaf", h.min_samples_leaf);
    h.criterion = criterion_from_string(j.value("criterion", std::string("gini")));
    h.max_features = j.value("max_features", h.max_features);
    h.seed = j.value("seed", h.seed);
    if (h.n_trees < 1 || h.min_samples_split < 2 || h.min_samples_leaf < 1 || h.max_features < 0)
        throw Error("invalid ERT hyperparameters");
    return h;
}

std::vector<ErtHyperparams> default_grid(std::uint64_t seed) {
    std::vector<ErtHyperparams> grid;
    for (int trees : {250, 500, 750, 1000})
        for (int split : {2, 4, 8, 10, 12})
            for (int leaf : {1, 2, 4, 8, 10})
                for (Criterion c : {Criterion::gini, Criterion::entropy})
                    grid.push_back({trees, split, leaf, c, 0, seed});
    return grid;
}

const TreeNode& Tree::leaf_for(std::span<const double> x) const {
    const TreeNode* n = &nodes.front();
    while (!n->is_leaf()) n = &nodes[static_cast<std::size_t>(x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right)];
    return *n;
}

double Tree::fp_fraction(std::span<const double> x) const {
    const TreeNode& leaf = leaf_for(x);
    return static_cast<double>(leaf.count_fp) / static_cast<double>(leaf.count_tp + leaf.count_fp);
}

namespace {

// Column-major training matrix.
struct TrainingSet {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> x;
    std::vector<std::uint8_t> y;  // 1 = FP

    double at(std::size_t i, std::size_t f) const { return x[f * n + i]; }
};

TrainingSet make_training_set(const FeatureTable& t, std::span<const std::size_t> rows) {
    TrainingSet s;
    s.n = rows.size();
    s.d = t.cols();
    s.x.resize(s.n * s.d);
    s.y.resize(s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t f = 0; f < s.d; ++f) s.x[f * s.n + i] = t.at(rows[i], f);
        s.y[i] = t.label(rows[i]) == Label::FP ? 1 : 0;
    }
    return s;
}

std::vector<std::size_t> all_rows(const FeatureTable& t) {
    std::vector<std::size_t> r(t.rows());
    std::iota(r.begin(), r.end(), 0);
    return r;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t m) { return static_cast<std::size_t>(rng() % m); }

double impurity(Criterion c, double n0, double n1) {
    const double n = n0 + n1;
    if (n <= 0.0) return 0.0;
    const double p0 = n0 / n, p1 = n1 / n;
    if (c == Criterion::gini) return 1.0 - p0 * p0 - p1 * p1;
    double h = 0.0;
    if (p0 > 0.0) h -= p0 * std::log(p0);
    if (p1 > 0.0) h -= p1 * std::log(p1);
    return h;
}

Tree grow_tree(const TrainingSet& s, const ErtHyperparams& h, int tree_index, std::vector<NodeTrace>* trace) {
    std::mt19937_64 rng(h.seed + static_cast<std::uint64_t>(tree_index));
    const int max_features = h.resolved_max_features(s.d);
    std::vector<std::size_t> idx(s.n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> features(s.d);

    Tree tree;
    struct Pending {
        int node;
        std::size_t begin, end;
    };
    tree.nodes.emplace_back();
    std::vector<Pending> stack{{0, 0, s.n}};
    while (!stack.empty()) {
        const Pending cur = stack.back();
        stack.pop_back();
        int n1 = 0;
        for (std::size_t k = cur.begin; k < cur.end; ++k) n1 += s.y[idx[k]];
        const int n = static_cast<int>(cur.end - cur.begin);
        const int n0 = n - n1;
        {
            TreeNode& node = tree.nodes[static_cast<std::size_t>(cur.node)];
            node.count_tp = n0;
            node.count_fp = n1;
        }
        NodeTrace nt{tree_index, cur.node, {}, -1};
        const bool splittable = n >= h.min_samples_split && n0 > 0 && n1 > 0 && n >= 2 * h.min_samples_leaf;

        SplitCandidate best{};
        bool found = false;
        if (splittable) {
            const double parent = impurity(h.criterion, n0, n1);
            std::iota(features.begin(), features.end(), 0);
            int evaluated = 0;
            for (std::size_t k = 0; k < s.d && evaluated < max_features; ++k) {
                std::swap(features[k], features[k + uniform_index(rng, s.d - k)]);
                const std::size_t f = features[k];
                double lo = s.at(idx[cur.begin], f), hi = lo;
                for (std::size_t q = cur.begin + 1; q < cur.end; ++q) {
                    const double v = s.at(idx[q], f);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                if (!(hi > lo)) continue;  // constant here; does not count
                ++evaluated;
                double t = lo + uniform01(rng) * (hi - lo);
                if (!(t > lo && t < hi)) t = lo + 0.5 * (hi - lo);
                if (!(t < hi)) t = lo;  // adjacent doubles: lo still separates
                int l0 = 0, l1 = 0;
                for (std::size_t q = cur.begin; q < cur.end; ++q) {
                    if (s.at(idx[q], f) <= t) {
                        if (s.y[idx[q]]) ++l1; else ++l0;
                    }
                }
                const int nl = l0 + l1, nr = n - nl;
                SplitCandidate c{static_cast<int>(f), t, 0.0,
                                 nl >= h.min_samples_leaf && nr >= h.min_samples_leaf};
                c.decrease = parent - (static_cast<double>(nl) / n) * impurity(h.criterion, l0, l1) -
                             (static_cast<double>(nr) / n) * impurity(h.criterion, n0 - l0, n1 - l1);
                if (c.valid && (!found || c.decrease > best.decrease)) {
                    best = c;
                    found = true;
                    nt.chosen = static_cast<int>(nt.candidates.size());
                }
                if (trace) nt.candidates.push_back(c);
            }
        }
        if (trace) trace->push_back(std::move(nt));
        if (!found) continue;

        const auto f = static_cast<std::size_t>(best.feature);
        const auto mid_it = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(cur.begin),
                                           idx.begin() + static_cast<std::ptrdiff_t>(cur.end),
                                           [&](std::size_t i) { return s.at(i, f) <= best.threshold; });
        const auto mid = static_cast<std::size_t>(mid_it - idx.begin());
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        TreeNode& node = tree.nodes[static_cast<std::size_t>(cur.node)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = left + 1;
        stack.push_back({left + 1, mid, cur.end});
        stack.push_back({left, cur.begin, mid});
    }
    return tree;
}

std::vector<Tree> grow_forest(const TrainingSet& s, const ErtHyperparams& h, int n_trees, const FitOptions& opts) {
    std::vector<Tree> trees(static_cast<std::size_t>(n_trees));
    if (opts.trace) {
        for (int t = 0; t < n_trees; ++t) trees[static_cast<std::size_t>(t)] = grow_tree(s, h, t, opts.trace);
        return trees;
    }
    parallel_for(n_trees, opts.threads, [&](int t) { trees[static_cast<std::size_t>(t)] = grow_tree(s, h, t, nullptr); });
    return trees;
}

void check_trainable(const FeatureTable& t) {
    if (t.rows() == 0 || t.cols() == 0) throw Error("cannot fit on an empty feature table");
    if (t.count(Label::TP) == 0 || t.count(Label::FP) == 0) throw Error("training data must contain both TP and FP lesions");
}

}  // namespace

ExtraTreesModel fit(const FeatureTable& t, const ErtHyperparams& h, const FitOptions& opts) {
    check_trainable(t);
    if (h.n_trees < 1 || h.min_samples_split < 2 || h.min_samples_leaf < 1) throw Error("invalid ERT hyperparameters");
    const auto rows = all_rows(t);
    const TrainingSet s = make_training_set(t, rows);
    ExtraTreesModel m;
    m.hyperparams = h;
    m.feature_names = t.names();
    m.trees = grow_forest(s, h, h.n_trees, opts);
    m.metadata.n_samples = t.rows();
    m.metadata.n_tp = t.count(Label::TP);
    m.metadata.n_fp = t.count(Label::FP);
    m.metadata.tp_fp_ratio = static_cast<double>(m.metadata.n_tp) / static_cast<double>(m.metadata.n_fp);
    std::vector<std::string> prov;
    for (std::size_t r = 0; r < t.rows(); ++r) prov.push_back(t.key(r).dataset);
    std::sort(prov.begin(), prov.end());
    prov.erase(std::unique(prov.begin(), prov.end()), prov.end());
    m.metadata.provenance = std::move(prov);
    return m;
}

double ExtraTreesModel::predict_proba(std::span<const double> x) const {
    if (x.size() != feature_names.size()) throw Error("feature vector width does not match the model");
    double sum = 0.0;
    for (const Tree& tr : trees) sum += tr.fp_fraction(x);
    return sum / static_cast<double>(trees.size());
}

double ExtraTreesModel::predict_proba(const std::vector<std::string>& names, std::span<const double> values) const {
    if (names.size() != values.size()) throw Error("feature names and values differ in length");
    std::vector<double> x;
    x.reserve(feature_names.size());
    for (const auto& f : feature_names) {
        const auto it = std::find(names.begin(), names.end(), f);
        if (it == names.end()) throw Error("missing feature '" + f + "'");
        x.push_back(values[static_cast<std::size_t>(it - names.begin())]);
    }
    return predict_proba(x);
}

std::vector<double> ExtraTreesModel::predict_proba(const FeatureTable& t, int threads) const {
    std::vector<std::size_t> cols;
    for (const auto& f : feature_names) cols.push_back(t.column_index(f));
    std::vector<double> out(t.rows());
    parallel_for(static_cast<int>(t.rows()), threads, [&](int r) {
        std::vector<double> x;
        x.reserve(cols.size());
        for (std::size_t c : cols) x.push_back(t.at(static_cast<std::size_t>(r), c));
        out[static_cast<std::size_t>(r)] = predict_proba(x);
    });
    return out;
}

void ExtraTreesModel::validate() const {
    if (trees.empty()) throw Error("model has no trees");
    const int d = static_cast<int>(feature_names.size());
    for (const Tree& tr : trees) {
        if (tr.nodes.empty()) throw Error("model contains an empty tree");
        const int n = static_cast<int>(tr.nodes.size());
        std::vector<int> visits(static_cast<std::size_t>(n), 0);
        std::vector<int> stack{0};
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            if (i < 0 || i >= n || visits[static_cast<std::size_t>(i)]++) throw Error("malformed tree structure");
            const TreeNode& node = tr.nodes[static_cast<std::size_t>(i)];
            if (node.is_leaf()) {
                if (node.count_tp < 0 || node.count_fp < 0 || node.count_tp + node.count_fp <= 0)
                    throw Error("leaf with empty class counts");
            } else {
                if (node.feature >= d) throw Error("split feature index out of range");
                stack.push_back(node.left);
                stack.push_back(node.right);
            }
        }
        if (std::count(visits.begin(), visits.end(), 0) != 0) throw Error("tree has unreachable nodes");
    }
}

json ExtraTreesModel::to_json() const {
    json j;
    j["format"] = kModelFormat;
    j["hyperparams"] = hyperparams.to_json();
    j["feature_names"] = feature_names;
    j["metadata"] = {{"n_samples", metadata.n_samples},
                     {"n_tp", metadata.n_tp},
                     {"n_fp", metadata.n_fp},
                     {"tp_fp_ratio", metadata.tp_fp_ratio},
                     {"provenance", metadata.provenance}};
    j["selection"] = selection ? selection->to_json() : json(nullptr);
    json trees_j = json::array();
    for (const Tree& tr : trees) {
        json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
             tp = json::array(), fp = json::array();
        for (const TreeNode& n : tr.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(n.threshold);
            left.push_back(n.left);
            right.push_back(n.right);
            tp.push_back(n.count_tp);
            fp.push_back(n.count_fp);
        }
        trees_j.push_back({{"feature", feature},
                           {"threshold", threshold},
                           {"left", left},
                           {"right", right},
                           {"count_tp", tp},
                           {"count_fp", fp}});
    }
    j["trees"] = std::move(trees_j);
    return j;
}

std::string ExtraTreesModel::serialize() const { return to_json().dump() + "\n"; }

ExtraTreesModel ExtraTreesModel::from_json(const json& j) {
    ExtraTreesModel m;
    try {
        if (j.at("format").get<std::string>() != kModelFormat)
            throw Error("unsupported model format '" + j.at("format").get<std::string>() + "'");
        m.hyperparams = ErtHyperparams::from_json(j.at("hyperparams"));
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        const json& md = j.at("metadata");
        m.metadata.n_samples = md.at("n_samples").get<std::size_t>();
        m.metadata.n_tp = md.at("n_tp").get<std::size_t>();
        m.metadata.n_fp = md.at("n_fp").get<std::size_t>();
        m.metadata.tp_fp_ratio = md.at("tp_fp_ratio").get<double>();
        m.metadata.provenance = md.value("provenance", std::vector<std::string>{});
        if (j.contains("selection") && !j.at("selection").is_null())
            m.selection = SelectionResult::from_json(j.at("selection"));
        for (const json& tj : j.at("trees")) {
            const auto feature = tj.at("feature").get<std::vector<int>>();
            const auto threshold = tj.at("threshold").get<std::vector<double>>();
            const auto left = tj.at("left").get<std::vector<int>>();
            const auto right = tj.at("right").get<std::vector<int>>();
            const auto tp = tj.at("count_tp").get<std::vector<int>>();
            const auto fp = tj.at("count_fp").get<std::vector<int>>();
            const std::size_t n = feature.size();
            if (threshold.size() != n || left.size() != n || right.size() != n || tp.size() != n || fp.size() != n)
                throw Error("tree node arrays differ in length");
            Tree tr;
            for (std::size_t i = 0; i < n; ++i) tr.nodes.push_back({feature[i], threshold[i], left[i], right[i], tp[i], fp[i]});
            m.trees.push_back(std::move(tr));
        }
    } catch (const json::exception& e) {
        throw Error(std::string("malformed model document: ") + e.what());
    }
    m.validate();
    return m;
}

ExtraTreesModel ExtraTreesModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("malformed model file " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void ExtraTreesModel::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model " + path.string());
    out << serialize();
    if (!out) throw Error("failed writing " + path.string());
}

Label classify(const ExtraTreesModel& m, std::span<const double> x, double threshold) {
    return m.predict_proba(x) > threshold ? Label::FP : Label::TP;
}

double roc_auc(std::span<const double> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw Error("roc_auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == Label::FP) {
                pos_rank_sum += mid_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("roc_auc: both classes must be present");
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<std::vector<std::size_t>> stratified_folds(const FeatureTable& t, int k, std::uint64_t seed) {
    if (k < 2) throw Error("cross-validation needs k >= 2");
    if (t.count(Label::TP) < static_cast<std::size_t>(k) || t.count(Label::FP) < static_cast<std::size_t>(k))
        throw Error("insufficient samples: each class needs at least k = " + std::to_string(k) + " lesions");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    for (Label cls : {Label::TP, Label::FP}) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < t.rows(); ++r)
            if (t.label(r) == cls) rows.push_back(r);
        for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[uniform_index(rng, i)]);
        for (std::size_t i = 0; i < rows.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(rows[i]);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

CvResult cv_select(const FeatureTable& t, const std::vector<ErtHyperparams>& grid, int k, std::uint64_t fold_seed,
                   int threads) {
    if (grid.empty()) throw Error("cv_select: empty hyperparameter grid");
    check_trainable(t);
    const auto folds = stratified_folds(t, k, fold_seed);

    // Tree t of a forest depends only on (data, split settings, seed + t), so
    // one forest of the largest size serves every n_trees in a group through
    // its prefix means.
    using GroupKey = std::tuple<int, int, int, int, std::uint64_t>;
    std::map<GroupKey, std::vector<std::size_t>> groups;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto& h = grid[g];
        if (h.n_trees < 1 || h.min_samples_split < 2 || h.min_samples_leaf < 1) throw Error("invalid ERT hyperparameters");
        groups[{h.min_samples_split, h.min_samples_leaf, static_cast<int>(h.criterion), h.max_features, h.seed}].push_back(g);
    }

    std::vector<double> auc_sum(grid.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::size_t> train_rows;
        for (std::size_t o = 0; o < folds.size(); ++o)
            if (o != f) train_rows.insert(train_rows.end(), folds[o].begin(), folds[o].end());
        std::sort(train_rows.begin(), train_rows.end());
        const TrainingSet s = make_training_set(t, train_rows);
        const auto& test_rows = folds[f];
        std::vector<Label> test_labels;
        for (std::size_t r : test_rows) test_labels.push_back(t.label(r));

        for (const auto& [key, members] : groups) {
            int max_trees = 0;
            for (std::size_t g : members) max_trees = std::max(max_trees, grid[g].n_trees);
            const std::vector<Tree> trees = grow_forest(s, grid[members.front()], max_trees, {threads, nullptr});
            // Running sums in tree order, identical to predict_proba.
            std::vector<std::vector<double>> prefix(test_rows.size());
            for (std::size_t i = 0; i < test_rows.size(); ++i) {
                const auto x = t.row(test_rows[i]);
                prefix[i].resize(static_cast<std::size_t>(max_trees));
                double sum = 0.0;
                for (int tr = 0; tr < max_trees; ++tr) {
                    sum += trees[static_cast<std::size_t>(tr)].fp_fraction(x);
                    prefix[i][static_cast<std::size_t>(tr)] = sum;
                }
            }
            for (std::size_t g : members) {
                const int nt = grid[g].n_trees;
                std::vector<double> scores(test_rows.size());
                for (std::size_t i = 0; i < test_rows.size(); ++i)
                    scores[i] = prefix[i][static_cast<std::size_t>(nt - 1)] / static_cast<double>(nt);
                auc_sum[g] += roc_auc(scores, test_labels);
            }
        }
    }

    CvResult out;
    out.grid_auc.resize(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) out.grid_auc[g] = auc_sum[g] / static_cast<double>(folds.size());
    std::size_t best = 0;
    const auto rank = [&](std::size_t g) {
        const auto& h = grid[g];
        return std::make_tuple(-out.grid_auc[g], h.n_trees, h.min_samples_split, static_cast<int>(h.criterion),
                               h.min_samples_leaf, g);
    };
    for (std::size_t g = 1; g < grid.size(); ++g)
        if (rank(g) < rank(best)) best = g;
    out.best = grid[best];
    out.cv_auc = out.grid_auc[best];
    return out;
}

std::vector<FeatureImportance> loco_importance(const FeatureTable& train, const ErtHyperparams& h,
                                               const FeatureTable& holdout, int threads) {
    if (holdout.count(Label::TP) == 0 || holdout.count(Label::FP) == 0)
        throw Error("LOCO holdout must contain both classes");
    const auto holdout_auc = [&](const FeatureTable& tr) {
        const ExtraTreesModel m = fit(tr, h, {threads, nullptr});
        return roc_auc(m.predict_proba(holdout, threads), holdout.labels());
    };
    const double full = holdout_auc(train);
    std::vector<FeatureImportance> out;
    for (const auto& name : train.names()) {
        if (train.cols() < 2) {
            out.push_back({name, full - 0.5});
            continue;
        }
        out.push_back({name, full - holdout_auc(train.without_column(name))});
    }
    return out;
}

}  // namespace lesionfp
