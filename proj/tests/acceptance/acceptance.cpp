// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [N ...] [--expect-fail N ...]
//
// Numbers restrict the run to those criteria. Criteria named with
// --expect-fail still print FAIL but do not change the exit status.

#include "../common/oracles.hpp"

#include "lesionfp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace lesionfp;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- 1 ----------------------------------------------------------------

void uncertainty_identities(Outcome& o) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::bernoulli_distribution extreme(0.05);
    const Dims d{16, 16, 16};
    const double ln2 = std::log(2.0);
    int bad_order = 0, bad_range = 0, bad_s1 = 0, bad_same = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int s = std::array{1, 2, 5, 10}[trial % 4];
        ProbabilityStack st;
        for (int k = 0; k < s; ++k) {
            std::vector<float> v(static_cast<std::size_t>(voxel_count(d)));
            for (auto& x : v) x = extreme(rng) ? std::round(u(rng)) : u(rng);
            st.samples.emplace_back(d, Spacing{1, 1, 1}, ValueKind::probability, std::move(v));
        }
        const UncertaintyMaps m = uncertainty_maps(st);
        for (std::int64_t i = 0; i < m.predictive.size(); ++i) {
            if (!(m.aleatoric[i] <= m.predictive[i] + 1e-9)) ++bad_order;
            for (float x : {m.predictive[i], m.aleatoric[i], m.epistemic[i]})
                if (!(x >= 0.0f && x <= ln2 + 1e-6)) ++bad_range;
        }
        if (s == 1)
            for (float e : m.epistemic.data()) bad_s1 += e != 0.0f;
        if (trial % 50 == 0) {
            ProbabilityStack same;
            for (int k = 0; k < 5; ++k) same.samples.push_back(st.samples[0]);
            const UncertaintyMaps sm = uncertainty_maps(same);
            for (float e : sm.epistemic.data()) bad_same += e != 0.0f;
        }
    }
    const double t = seconds_since(t0);
    o.detail << "1000 stacks, " << t << " s";
    o.require(bad_order == 0, "aleatoric above predictive at " + std::to_string(bad_order) + " voxels");
    o.require(bad_range == 0, std::to_string(bad_range) + " values outside [0, ln 2]");
    o.require(bad_s1 == 0, "nonzero epistemic with one sample");
    o.require(bad_same == 0, "nonzero epistemic with identical samples");
    o.require(t < 10.0, "runtime");
}

// ---- 2 ----------------------------------------------------------------

void counting_oracle(Outcome& o) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2);
    int mismatches = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const BinaryMask p = oracle::random_mask(rng, {8, 8, 8}, 0.04 + 0.001 * (trial % 100));
        const BinaryMask r = oracle::random_mask(rng, {8, 8, 8}, 0.04 + 0.001 * ((trial * 3) % 100));
        const DetectionCounts got = count_detections(build_graph(connected_components(p), connected_components(r)));
        if (!(got == oracle::overlap_counts(oracle::components(p), oracle::components(r)))) ++mismatches;
    }
    const Dims d{8, 8, 8};
    const Spacing sp{1, 1, 1};
    const CorrespondenceGraph fig = build_graph(
        {make_component(0, d, sp, {0, 1, 2, 3, 4, 5, 6, 7}), make_component(1, d, sp, {300, 301})},
        {make_component(0, d, sp, {0, 1}), make_component(1, d, sp, {3, 4}), make_component(2, d, sp, {7, 8})});
    const DetectionCounts c = count_detections(fig);
    const double t = seconds_since(t0);
    o.detail << "500 pairs, " << mismatches << " mismatches; figure graph tp=" << c.tp << " fp=" << c.fp
             << " fn=" << c.fn << ", " << t << " s";
    o.require(mismatches == 0, "oracle mismatch");
    o.require(c == DetectionCounts{3, 1, 0}, "figure graph counts");
    o.require(t < 5.0, "runtime");
}

// ---- 3 ----------------------------------------------------------------

void shape_analytics(Outcome& o) {
    const int r = 10, n = 2 * r + 5;
    BinaryMask ball({n, n, n}, {1, 1, 1});
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const int dx = x - n / 2, dy = y - n / 2, dz = z - n / 2;
                ball.set(x, y, z, dx * dx + dy * dy + dz * dz <= r * r);
            }
    const double sph = shape_features(ball).get("shape_sphericity");

    BinaryMask box({44, 24, 14}, {1, 1, 1});
    for (int z = 2; z < 12; ++z)
        for (int y = 2; y < 22; ++y)
            for (int x = 2; x < 42; ++x) box.set(x, y, z, true);
    const FeatureVector fb = shape_features(box);
    const double el = fb.get("shape_elongation"), fl = fb.get("shape_flatness");

    std::mt19937_64 rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const BinaryMask core = morph_close_open(oracle::random_mask(rng, {8, 8, 8}, 0.7));
        if (core.empty()) continue;
        const Dims big{14, 14, 14};
        BinaryMask a(big, {1, 1, 1}), b(big, {1, 1, 1}), p(big, {1, 1, 1});
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    if (core.get(x, y, z)) {
                        a.set(x + 1, y + 1, z + 1, true);
                        b.set(x + 5, y + 3, z + 4, true);
                        p.set(y + 2, z + 2, x + 2, true);
                    }
        const FeatureVector fa = shape_features(a), fbt = shape_features(b), fp = shape_features(p);
        for (std::size_t i = 0; i < fa.values.size(); ++i) {
            const double scale = std::max(1.0, std::abs(fa.values[i]));
            worst = std::max({worst, std::abs(fbt.values[i] - fa.values[i]) / scale,
                              std::abs(fp.values[i] - fa.values[i]) / scale});
        }
    }
    o.detail << "ball sphericity " << sph << ", box elongation " << el << " flatness " << fl
             << ", invariance deviation " << worst;
    o.require(std::abs(sph - 1.0) <= 0.05, "sphericity");
    o.require(std::abs(el - 0.5) <= 0.02, "elongation");
    o.require(std::abs(fl - 0.25) <= 0.02, "flatness");
    o.require(worst <= 1e-9, "translation/permutation invariance");
}

// ---- 4 ----------------------------------------------------------------

FeatureTable table_from(const std::vector<std::vector<double>>& cols, const std::vector<Label>& labels) {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < cols.size(); ++c) names.push_back("f" + std::to_string(100 + c));
    FeatureTable t(names);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        std::vector<double> row;
        for (const auto& c : cols) row.push_back(c[r]);
        t.add_row({"a", "p", static_cast<int>(r)}, labels[r], row);
    }
    return t;
}

void feature_reduction(Outcome& o) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t n = 1500;
    auto labels = [&] {
        std::vector<Label> l(n);
        for (std::size_t i = 0; i < n; ++i) l[i] = (rng() & 1) ? Label::FP : Label::TP;
        return l;
    };

    int dup_fail = 0, scale_fail = 0, block_fail = 0;
    for (int trial = 0; trial < 10; ++trial) {
        // 8 blocks of 3 features; block latents centred across blocks
        const int blocks = 8;
        std::vector<std::vector<double>> z(blocks, std::vector<double>(n));
        for (auto& c : z)
            for (auto& x : c) x = g(rng);
        for (std::size_t r = 0; r < n; ++r) {
            double m = 0;
            for (int b = 0; b < blocks; ++b) m += z[b][r] / blocks;
            for (int b = 0; b < blocks; ++b) z[b][r] -= m;
        }
        std::vector<std::vector<double>> cols;
        for (int b = 0; b < blocks; ++b)
            for (int k = 0; k < 3; ++k) {
                std::vector<double> c(n);
                for (std::size_t r = 0; r < n; ++r) c[r] = z[b][r] + 0.3 * g(rng);
                cols.push_back(c);
            }
        const std::vector<Label> lab = labels();
        const FeatureTable base = table_from(cols, lab);
        const SelectionResult sel = select_features(base, 1.0);
        block_fail += sel.clusters.size() != static_cast<std::size_t>(blocks);

        auto scaled = cols;
        const std::size_t k = rng() % scaled.size();
        const double s = std::exp(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
        for (auto& x : scaled[k]) x *= s;
        scale_fail += !(select_features(table_from(scaled, lab), 1.0) == sel);

        auto dup = cols;
        const std::size_t src = rng() % dup.size();
        dup.push_back(dup[src]);
        const SelectionResult ds = select_features(table_from(dup, lab), 1.0);
        const std::string a = "f" + std::to_string(100 + src), b = "f" + std::to_string(100 + dup.size() - 1);
        const bool both = std::count(ds.chosen.begin(), ds.chosen.end(), a) && std::count(ds.chosen.begin(), ds.chosen.end(), b);
        dup_fail += both;
    }
    o.detail << "10 trials: block count misses " << block_fail << ", rescaling changes " << scale_fail
             << ", duplicate pairs kept " << dup_fail;
    o.require(block_fail == 0, "block count");
    o.require(scale_fail == 0, "rescaling invariance");
    o.require(dup_fail == 0, "duplicate collapse");
}

// ---- 5 and 6 ----------------------------------------------------------

FeatureTable synthetic(std::mt19937_64& rng, std::size_t n, int d, double gap, bool permute) {
    std::vector<std::string> names;
    for (int c = 0; c < d; ++c) names.push_back("x" + std::to_string(c));
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Label> labels(n);
    for (std::size_t r = 0; r < n; ++r) labels[r] = r % 2 ? Label::FP : Label::TP;
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<double> row(static_cast<std::size_t>(d));
        row[0] = (labels[r] == Label::FP ? 1.0 + gap : 0.0) + u(rng);
        for (int c = 1; c < d; ++c) row[static_cast<std::size_t>(c)] = g(rng);
        rows.push_back(row);
    }
    if (permute) std::shuffle(labels.begin(), labels.end(), rng);
    FeatureTable t(names);
    for (std::size_t r = 0; r < n; ++r) t.add_row({"s", "p", static_cast<int>(r)}, labels[r], rows[r]);
    return t;
}

void ert_sanity(Outcome& o) {
    std::mt19937_64 rng(5);
    const auto t0 = Clock::now();
    const FeatureTable train = synthetic(rng, 400, 6, 0.05, false);
    const FeatureTable test = synthetic(rng, 400, 6, 0.05, false);
    const CvResult cv = cv_select(train, default_grid(0), 5, 0, 1);
    const double cv_time = seconds_since(t0);
    const ExtraTreesModel m = fit(train, cv.best);
    const double auc = roc_auc(m.predict_proba(test), test.labels());

    double perm = 0;
    for (int k = 0; k < 5; ++k) {
        const FeatureTable ptrain = synthetic(rng, 400, 6, 0.05, true);
        const FeatureTable ptest = synthetic(rng, 400, 6, 0.05, true);
        ErtHyperparams h;
        h.seed = static_cast<std::uint64_t>(k);
        const ExtraTreesModel pm = fit(ptrain, h);
        perm += roc_auc(pm.predict_proba(ptest), ptest.labels()) / 5;
    }

    ErtHyperparams h = cv.best;
    h.seed = 42;
    const std::string ref = fit(train, h, {1}).serialize();
    bool same = true;
    for (int threads : {2, 3, 4, 7}) same = same && fit(train, h, {threads}).serialize() == ref;

    o.detail << "holdout AUC " << auc << " (grid of " << default_grid().size() << " in " << cv_time
             << " s), permuted-label AUC " << perm << ", thread-invariant " << (same ? "yes" : "no");
    o.require(auc >= 0.98, "holdout AUC");
    o.require(perm >= 0.4 && perm <= 0.6, "permuted-label AUC");
    o.require(same, "determinism");
    o.require(cv_time < 60.0, "grid runtime");
}

void loco_check(Outcome& o) {
    double noise = 0, sole = 0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 rng(600 + s);
        const FeatureTable train = synthetic(rng, 400, 2, 0.1, false);
        const FeatureTable test = synthetic(rng, 400, 2, 0.1, false);
        ErtHyperparams h;
        h.seed = static_cast<std::uint64_t>(s);
        for (const auto& f : loco_importance(train, h, test)) (f.feature == "x0" ? sole : noise) += f.score / seeds;
    }
    o.detail << "noise importance " << noise << ", separating feature importance " << sole;
    o.require(std::abs(noise) <= 0.03, "noise importance");
    o.require(sole >= 0.3, "separating importance");
}

// ---- 7 and 8 ----------------------------------------------------------

struct PhantomRun {
    oracle::TempDir dir{"accept"};
    std::filesystem::path dataset;
    double generate_seconds = 0;

    PhantomRun() {
        dataset = dir.path / "phantom";
        const auto t0 = Clock::now();
        generate_phantom(PhantomSpec{}, dataset);
        generate_seconds = seconds_since(t0);
    }
};

PhantomRun& phantom() {
    static PhantomRun run;
    return run;
}

ExperimentConfig phantom_config(SourceMode mode) {
    ExperimentConfig c;
    c.dataset_dir = phantom().dataset;
    c.mode = mode;
    c.grid = grid_from_json(nlohmann::json::parse(
        R"({"n_trees": [250], "min_samples_split": [2, 8], "min_samples_leaf": [1, 4], "criterion": ["gini", "entropy"]})"));
    return c;
}

bool is_shape_descriptor(const std::string& f) {
    return f == "shape_sphericity" || f == "shape_flatness" || f == "shape_elongation" ||
           f == "shape_maximum_3d_diameter";
}

void end_to_end(Outcome& o) {
    const auto t0 = Clock::now();
    PhantomRun& run = phantom();
    const DetectionReport u = run_pipeline(phantom_config(SourceMode::uncertainty));
    ExperimentConfig mc = phantom_config(SourceMode::mask_only);
    mc.loco = false;
    const DetectionReport m = run_pipeline(mc);
    const double t = seconds_since(t0);

    const std::string top = u.loco.empty() ? std::string("none") : u.loco.front().feature;
    o.detail << "precision " << u.precision.before << " -> " << u.precision.after_mean << ", F1 change "
             << u.f1.relative_change_pct << "%, recall change " << u.recall.relative_change_pct << "%, LOCO top "
             << top << " (" << (u.loco.empty() ? 0.0 : u.loco.front().score) << "), F1 after uncertainty "
             << u.f1.after_mean << " vs mask " << m.f1.after_mean << ", " << t << " s (generation "
             << run.generate_seconds << " s)";
    o.require(u.precision.after_mean > u.precision.before, "precision increase");
    o.require(u.f1.relative_change_pct > 0.0, "F1 change");
    o.require(u.recall.relative_change_pct > -15.0, "recall drop");
    o.require(is_shape_descriptor(top), "LOCO top feature");
    o.require(std::abs(u.f1.after_mean - m.f1.after_mean) <= 0.05, "mask_only F1 gap");
    o.require(t < 300.0, "runtime");
}

void logsum_baseline(Outcome& o) {
    const LogsumReport r = run_logsum_baseline(phantom_config(SourceMode::uncertainty), 1.0);

    // balls of distinct radii in a constant-uncertainty volume
    const Dims d{80, 24, 24};
    BinaryMask mask(d, {1, 1, 1});
    int cx = 3;
    const std::vector<int> radii{4, 1, 3, 2, 5};
    for (int rad : radii) {
        cx += rad;
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    const int dx = x - cx, dy = y - 12, dz = z - 12;
                    if (dx * dx + dy * dy + dz * dz <= rad * rad) mask.set(x, y, z, true);
                }
        cx += rad + 3;
    }
    const auto lesions = connected_components(mask);
    const VolumeGrid u(d, {1, 1, 1}, ValueKind::uncertainty, 0.3f);
    std::vector<int> order;
    for (double thr = 1.0; thr >= -1e-9 && order.size() < lesions.size(); thr -= 0.001) {
        for (int id : logsum_filter(lesions, u, thr).removed)
            if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
    }
    std::vector<double> diam;
    for (int id : order) diam.push_back(shape_features(component_mask(lesions[static_cast<std::size_t>(id - 1)])).get("shape_maximum_3d_diameter"));
    const bool increasing = std::is_sorted(diam.begin(), diam.end()) && diam.size() + 1 >= lesions.size();

    o.detail << "Spearman(scaled log-sum, diameter) " << r.spearman_scaled_vs_diameter << " over " << r.lesions.size()
             << " test lesions; sweep removes " << order.size() << " of " << lesions.size()
             << " in increasing diameter: " << (increasing ? "yes" : "no");
    o.require(r.spearman_scaled_vs_diameter <= -0.8, "Spearman");
    o.require(increasing, "removal order");
}

// ---- 9 ----------------------------------------------------------------

void ks_calibration(Outcome& o) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    int rejects = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> a(100), b(100);
        for (auto& x : a) x = g(rng);
        for (auto& x : b) x = g(rng);
        rejects += ks_two_sample(a, b).p_value < 0.05;
    }
    const double rate = rejects / 1000.0;
    o.detail << "rejection rate " << rate;
    o.require(rate >= 0.02 && rate <= 0.09, "rate");
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {"uncertainty identities", uncertainty_identities},
        {"counting oracle", counting_oracle},
        {"shape-feature analytics", shape_analytics},
        {"feature reduction", feature_reduction},
        {"ERT sanity", ert_sanity},
        {"LOCO", loco_check},
        {"end-to-end phantom", end_to_end},
        {"log-sum baseline", logsum_baseline},
        {"KS calibration", ks_calibration},
    };
    std::set<int> only, expected;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--expect-fail" && i + 1 < argc)
            expected.insert(std::atoi(argv[++i]));
        else
            only.insert(std::atoi(a.c_str()));
    }

    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            criteria[k].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        if (!o.pass && !expected.count(id)) ++failed;
        if (o.pass && expected.count(id)) o.detail << " [expected to fail]";
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[k].first << ": " << o.detail.str()
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
