#include "../common/oracles.hpp"

#include "lesionfp/ert.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace lesionfp;

namespace {

// Feature 0 separates the classes; the rest are noise.
FeatureTable separable(std::mt19937_64& rng, std::size_t n, int d, double gap = 1.0) {
    std::vector<std::string> names;
    for (int c = 0; c < d; ++c) names.push_back("x" + std::to_string(c));
    FeatureTable t(names);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
        const Label l = r % 2 ? Label::FP : Label::TP;
        std::vector<double> row(static_cast<std::size_t>(d));
        row[0] = (l == Label::FP ? 1.0 + gap : 0.0) + u(rng);
        for (int c = 1; c < d; ++c) row[static_cast<std::size_t>(c)] = g(rng);
        t.add_row({"s", "p", static_cast<int>(r)}, l, row);
    }
    return t;
}

FeatureTable with_labels_permuted(const FeatureTable& t, std::mt19937_64& rng) {
    std::vector<Label> labels = t.labels();
    std::shuffle(labels.begin(), labels.end(), rng);
    FeatureTable out(t.names());
    for (std::size_t r = 0; r < t.rows(); ++r)
        out.add_row(t.key(r), labels[r], std::vector<double>(t.row(r).begin(), t.row(r).end()));
    return out;
}

double holdout_auc(const ExtraTreesModel& m, const FeatureTable& t) {
    return roc_auc(m.predict_proba(t), t.labels());
}

ExtraTreesModel leaf_model(std::vector<std::pair<int, int>> leaves) {
    ExtraTreesModel m;
    m.feature_names = {"a"};
    for (auto [tp, fp] : leaves) {
        Tree t;
        TreeNode n;
        n.count_tp = tp;
        n.count_fp = fp;
        t.nodes.push_back(n);
        m.trees.push_back(t);
    }
    return m;
}

ErtHyperparams small(int trees = 40, std::uint64_t seed = 0) {
    ErtHyperparams h;
    h.n_trees = trees;
    h.seed = seed;
    return h;
}

}  // namespace

TEST_CASE("roc auc conventions") {
    const std::vector<Label> l{Label::TP, Label::TP, Label::FP, Label::FP};
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, l) == 1.0);
    CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, l) == 0.0);
    CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, l) == 0.5);
    CHECK(roc_auc(std::vector<double>{0.1, 0.5, 0.5, 0.9}, l) == doctest::Approx(0.875));
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<Label>{Label::TP, Label::TP}), Error);

    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> q(0, 9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(30), neg(30);
        std::vector<Label> lab(30);
        for (int i = 0; i < 30; ++i) {
            s[i] = q(rng);
            neg[i] = -s[i];
            lab[i] = (rng() & 1) ? Label::FP : Label::TP;
        }
        lab[0] = Label::TP;
        lab[1] = Label::FP;
        CHECK(roc_auc(s, lab) + roc_auc(neg, lab) == doctest::Approx(1.0));
        // pairwise oracle
        double wins = 0, pairs = 0;
        for (int i = 0; i < 30; ++i)
            for (int j = 0; j < 30; ++j)
                if (lab[i] == Label::FP && lab[j] == Label::TP) {
                    wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                    pairs += 1;
                }
        CHECK(roc_auc(s, lab) == doctest::Approx(wins / pairs));
    }
}

TEST_CASE("prediction averages leaf fractions") {
    CHECK(leaf_model({{0, 3}}).predict_proba(std::vector<double>{0.0}) == 1.0);
    CHECK(leaf_model({{2, 0}, {0, 5}}).predict_proba(std::vector<double>{0.0}) == 0.5);
    CHECK_THROWS_AS(leaf_model({{1, 1}}).predict_proba(std::vector<std::string>{"b"}, std::vector<double>{0.0}), Error);
    CHECK(leaf_model({{1, 1}}).predict_proba(std::vector<std::string>{"b", "a"}, std::vector<double>{9.0, 0.0}) == 0.5);
}

TEST_CASE("classification threshold is strict") {
    const std::vector<double> x{0.0};
    CHECK(classify(leaf_model({{1, 9}}), x, 0.5) == Label::FP);
    CHECK(classify(leaf_model({{1, 1}}), x, 0.5) == Label::TP);
    CHECK(classify(leaf_model({{0, 1}}), x, 1.0) == Label::TP);
}

TEST_CASE("separable data") {
    std::mt19937_64 rng(103);
    const FeatureTable train = separable(rng, 200, 4);
    const FeatureTable test = separable(rng, 200, 4);
    const ExtraTreesModel m = fit(train, small());
    CHECK(holdout_auc(m, train) == 1.0);
    CHECK(holdout_auc(m, test) >= 0.98);
    for (std::size_t r = 0; r < train.rows(); ++r) {
        const double p = m.predict_proba(train.row(r));
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        CHECK((train.label(r) == Label::FP ? p > 0.5 : p < 0.5));
    }
}

TEST_CASE("two training samples") {
    FeatureTable t({"a", "b"});
    t.add_row({"d", "p", 1}, Label::TP, {0.0, 1.0});
    t.add_row({"d", "p", 2}, Label::FP, {1.0, 0.0});
    const ExtraTreesModel m = fit(t, small(10));
    for (const Tree& tree : m.trees) CHECK(tree.nodes.size() <= 3);
    CHECK(m.predict_proba(t.row(0)) <= 0.5);
    CHECK(m.predict_proba(t.row(1)) >= 0.5);
}

TEST_CASE("fit errors") {
    FeatureTable one({"a"});
    one.add_row({"d", "p", 1}, Label::TP, {0.0});
    one.add_row({"d", "p", 2}, Label::TP, {1.0});
    CHECK_THROWS_AS(fit(one, small()), Error);
    CHECK_THROWS_AS(fit(FeatureTable({"a"}), small()), Error);
}

TEST_CASE("permuted labels carry no signal") {
    std::mt19937_64 rng(107);
    double sum = 0;
    const int reps = 5;
    for (int k = 0; k < reps; ++k) {
        const FeatureTable train = with_labels_permuted(separable(rng, 500, 5), rng);
        const FeatureTable test = with_labels_permuted(separable(rng, 500, 5), rng);
        sum += holdout_auc(fit(train, small(40, k)), test);
    }
    const double auc = sum / reps;
    CHECK(auc >= 0.4);
    CHECK(auc <= 0.6);
}

TEST_CASE("model bytes do not depend on thread count") {
    std::mt19937_64 rng(109);
    const FeatureTable t = separable(rng, 150, 5, 0.0);
    ErtHyperparams h = small(30, 7);
    h.min_samples_leaf = 2;
    const std::string one = fit(t, h, {1}).serialize();
    CHECK(fit(t, h, {3}).serialize() == one);
    CHECK(fit(t, h, {8}).serialize() == one);
    h.seed = 8;
    CHECK(fit(t, h, {1}).serialize() != one);
}

TEST_CASE("chosen split beats every sampled candidate") {
    std::mt19937_64 rng(113);
    const FeatureTable t = separable(rng, 120, 6, -0.5);
    for (Criterion c : {Criterion::gini, Criterion::entropy}) {
        ErtHyperparams h = small(5);
        h.criterion = c;
        std::vector<NodeTrace> trace;
        fit(t, h, {1, &trace});
        REQUIRE_FALSE(trace.empty());
        for (const NodeTrace& n : trace) {
            if (n.chosen < 0) continue;
            const SplitCandidate& best = n.candidates[static_cast<std::size_t>(n.chosen)];
            CHECK(best.valid);
            for (const SplitCandidate& s : n.candidates)
                if (s.valid) CHECK(best.decrease >= s.decrease);
        }
    }
}

TEST_CASE("replayed routing respects split and leaf minimums") {
    std::mt19937_64 rng(127);
    const FeatureTable t = separable(rng, 160, 4, -0.6);
    for (auto [split, leaf] : {std::pair{2, 1}, {8, 4}, {12, 10}}) {
        ErtHyperparams h = small(10);
        h.min_samples_split = split;
        h.min_samples_leaf = leaf;
        const ExtraTreesModel m = fit(t, h);
        m.validate();
        for (const Tree& tree : m.trees) {
            std::vector<int> reach(tree.nodes.size(), 0);
            std::vector<int> fp(tree.nodes.size(), 0);
            for (std::size_t r = 0; r < t.rows(); ++r) {
                int k = 0;
                while (true) {
                    ++reach[static_cast<std::size_t>(k)];
                    const TreeNode& n = tree.nodes[static_cast<std::size_t>(k)];
                    if (n.is_leaf()) {
                        fp[static_cast<std::size_t>(k)] += t.label(r) == Label::FP;
                        break;
                    }
                    k = t.at(r, static_cast<std::size_t>(n.feature)) <= n.threshold ? n.left : n.right;
                }
            }
            for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
                const TreeNode& n = tree.nodes[k];
                if (n.is_leaf()) {
                    CHECK(reach[k] >= leaf);
                    CHECK(n.count_tp + n.count_fp == reach[k]);
                    CHECK(n.count_fp == fp[k]);
                } else {
                    CHECK(reach[k] >= split);
                }
            }
        }
    }
}

TEST_CASE("model file round trip") {
    std::mt19937_64 rng(131);
    const FeatureTable t = separable(rng, 80, 3);
    ExtraTreesModel m = fit(t, small(8));
    m.metadata.provenance = {"alpha", "beta"};
    oracle::TempDir tmp("model");
    m.save(tmp.path / "m.json");
    const ExtraTreesModel r = ExtraTreesModel::load(tmp.path / "m.json");
    CHECK(r.serialize() == m.serialize());
    CHECK(r.metadata.provenance == m.metadata.provenance);
    CHECK(m.to_json()["format"] == kModelFormat);
    CHECK(m.metadata.n_tp == 40);
    CHECK(m.metadata.tp_fp_ratio == doctest::Approx(1.0));
}

TEST_CASE("stratified folds") {
    std::mt19937_64 rng(137);
    FeatureTable t({"a"});
    for (int r = 0; r < 53; ++r) t.add_row({"d", "p", r}, r % 4 == 0 ? Label::FP : Label::TP, {double(r)});
    const auto folds = stratified_folds(t, 5, 3);
    REQUIRE(folds.size() == 5);
    std::vector<int> seen(53, 0);
    for (const auto& f : folds) {
        int fp = 0;
        for (auto r : f) {
            ++seen[r];
            fp += t.label(r) == Label::FP;
        }
        CHECK(fp >= 2);
        CHECK(fp <= 3);
    }
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("grid search") {
    std::mt19937_64 rng(139);
    const FeatureTable t = separable(rng, 100, 4);
    const std::vector<ErtHyperparams> one{small(20)};
    const CvResult r1 = cv_select(t, one, 5, 0);
    CHECK(r1.best == one[0]);
    CHECK(r1.cv_auc >= 0.95);

    std::vector<ErtHyperparams> grid;
    for (int split : {2, 8})
        for (int leaf : {1, 4}) {
            ErtHyperparams h = small(20);
            h.min_samples_split = split;
            h.min_samples_leaf = leaf;
            grid.push_back(h);
        }
    std::vector<ErtHyperparams> doubled = grid;
    doubled.insert(doubled.end(), grid.begin(), grid.end());
    const CvResult a = cv_select(t, grid, 5, 1);
    const CvResult b = cv_select(t, doubled, 5, 1);
    CHECK(a.best == b.best);
    CHECK(a.cv_auc == b.cv_auc);
    CHECK(a.grid_auc.size() == 4);

    FeatureTable few({"a"});
    for (int r = 0; r < 12; ++r) few.add_row({"d", "p", r}, r < 9 ? Label::TP : Label::FP, {double(r)});
    CHECK_THROWS_AS(cv_select(few, one, 5, 0), Error);
}

TEST_CASE("grid ties prefer the simpler model") {
    // every candidate scores 1.0 on trivially separable data
    FeatureTable t({"a"});
    for (int r = 0; r < 40; ++r) t.add_row({"d", "p", r}, r < 20 ? Label::TP : Label::FP, {r < 20 ? 0.0 : 10.0});
    std::vector<ErtHyperparams> grid;
    for (int trees : {30, 10})
        for (Criterion c : {Criterion::entropy, Criterion::gini}) {
            ErtHyperparams h = small(trees);
            h.criterion = c;
            h.min_samples_split = 4;
            grid.push_back(h);
        }
    const CvResult r = cv_select(t, grid, 5, 0);
    CHECK(r.best.n_trees == 10);
    CHECK(r.best.criterion == Criterion::gini);
}

TEST_CASE("default grid covers the documented ranges") {
    const auto g = default_grid(5);
    CHECK(g.size() == 4 * 5 * 5 * 2);
    for (const auto& h : g) CHECK(h.seed == 5);
}

TEST_CASE("loco importance") {
    const int seeds = 10;
    double noise = 0, sole = 0, twin_a = 0, twin_b = 0;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 rng(200 + s);
        const FeatureTable train = separable(rng, 200, 2, 0.2);
        const FeatureTable test = separable(rng, 200, 2, 0.2);
        const auto imp = loco_importance(train, small(30, s), test);
        REQUIRE(imp.size() == 2);
        for (const auto& f : imp) (f.feature == "x0" ? sole : noise) += f.score / seeds;

        // duplicate the informative column
        FeatureTable dtrain({"x0", "x0b", "x1"}), dtest({"x0", "x0b", "x1"});
        for (std::size_t r = 0; r < train.rows(); ++r)
            dtrain.add_row(train.key(r), train.label(r), {train.at(r, 0), train.at(r, 0), train.at(r, 1)});
        for (std::size_t r = 0; r < test.rows(); ++r)
            dtest.add_row(test.key(r), test.label(r), {test.at(r, 0), test.at(r, 0), test.at(r, 1)});
        for (const auto& f : loco_importance(dtrain, small(30, s), dtest)) {
            if (f.feature == "x0") twin_a += f.score / seeds;
            if (f.feature == "x0b") twin_b += f.score / seeds;
        }
    }
    CHECK(std::abs(noise) <= 0.03);
    CHECK(sole >= 0.3);
    CHECK(std::abs(twin_a) <= 0.03);
    CHECK(std::abs(twin_b) <= 0.03);
}
