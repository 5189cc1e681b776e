#include "lesionfp/pipeline.hpp"

#include "lesionfp/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lesionfp {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename F>
auto staged(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<ErtHyperparams> grid_from_json(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "default") return default_grid();
        throw Error("unknown grid name '" + j.get<std::string>() + "'");
    }
    if (j.is_array()) {
        std::vector<ErtHyperparams> out;
        for (const json& e : j) out.push_back(ErtHyperparams::from_json(e));
        if (out.empty()) throw Error("empty hyperparameter grid");
        return out;
    }
    const auto ints = [&](const char* key, std::vector<int> def) {
        return j.contains(key) ? j.at(key).get<std::vector<int>>() : def;
    };
    const auto trees = ints("n_trees", {250, 500, 750, 1000});
    const auto splits = ints("min_samples_split", {2, 4, 8, 10, 12});
    const auto leaves = ints("min_samples_leaf", {1, 2, 4, 8, 10});
    const auto feats = ints("max_features", {0});
    std::vector<Criterion> crits{Criterion::gini, Criterion::entropy};
    if (j.contains("criterion")) {
        crits.clear();
        for (const auto& c : j.at("criterion").get<std::vector<std::string>>()) crits.push_back(criterion_from_string(c));
    }
    std::vector<ErtHyperparams> out;
    for (int t : trees)
        for (int s : splits)
            for (int l : leaves)
                for (Criterion c : crits)
                    for (int f : feats) {
                        ErtHyperparams h;
                        h.n_trees = t;
                        h.min_samples_split = s;
                        h.min_samples_leaf = l;
                        h.criterion = c;
                        h.max_features = f;
                        out.push_back(h);
                    }
    if (out.empty()) throw Error("empty hyperparameter grid");
    return out;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
    ExperimentConfig c;
    try {
        if (!j.is_object()) throw Error("config must be an object");
        if (j.contains("dataset_dir")) c.dataset_dir = resolve(base_dir, j.at("dataset_dir").get<std::string>());
        if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
        if (j.contains("mode")) c.mode = source_mode_from_string(j.at("mode").get<std::string>());
        if (j.contains("uncertainty_type"))
            c.uncertainty_type = uncertainty_type_from_string(j.at("uncertainty_type").get<std::string>());
        c.probability_threshold = j.value("probability_threshold", c.probability_threshold);
        c.iso_spacing = j.value("iso_spacing", c.iso_spacing);
        c.roi_margin = j.value("roi_margin", c.roi_margin);
        c.cut_height = j.value("cut_height", c.cut_height);
        if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
        c.cv_folds = j.value("cv_folds", c.cv_folds);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        c.classifier_threshold = j.value("classifier_threshold", c.classifier_threshold);
        c.classifier_enabled = j.value("classifier_enabled", c.classifier_enabled);
        c.loco = j.value("loco", c.loco);
        c.logsum_epsilon = j.value("logsum_epsilon", c.logsum_epsilon);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw Error(std::string("invalid config: ") + e.what());
    }
    if (!(c.probability_threshold >= 0.0 && c.probability_threshold <= 1.0))
        throw Error("probability_threshold must lie in [0, 1]");
    if (!(c.iso_spacing > 0.0)) throw Error("iso_spacing must be positive");
    if (c.roi_margin < 0) throw Error("roi_margin must be non-negative");
    if (!(c.cut_height >= 0.0)) throw Error("cut_height must be non-negative");
    if (c.cv_folds < 2) throw Error("cv_folds must be at least 2");
    if (c.seeds.empty()) throw Error("seeds must not be empty");
    if (!(c.logsum_epsilon > 0.0)) throw Error("logsum_epsilon must be positive");
    if (c.threads < 1) c.threads = 1;
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("malformed config " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
    json g = json::array();
    for (const auto& h : grid) {
        json e = h.to_json();
        e.erase("seed");
        g.push_back(e);
    }
    return {{"dataset_dir", dataset_dir.string()},
            {"output_dir", output_dir.string()},
            {"mode", to_string(mode)},
            {"uncertainty_type", to_string(uncertainty_type)},
            {"probability_threshold", probability_threshold},
            {"iso_spacing", iso_spacing},
            {"roi_margin", roi_margin},
            {"cut_height", cut_height},
            {"grid", grid.empty() ? json("default") : g},
            {"cv_folds", cv_folds},
            {"seeds", seeds},
            {"classifier_threshold", classifier_threshold},
            {"classifier_enabled", classifier_enabled},
            {"loco", loco},
            {"logsum_epsilon", logsum_epsilon},
            {"threads", threads}};
}

UncertaintyType ExperimentConfig::effective_uncertainty_type(SourceKind source) const {
    return varies_parameters(source) ? uncertainty_type : UncertaintyType::predictive;
}

std::vector<ErtHyperparams> ExperimentConfig::grid_for_seed(std::uint64_t seed) const {
    std::vector<ErtHyperparams> g = grid.empty() ? default_grid(seed) : grid;
    for (auto& h : g) h.seed = seed;
    return g;
}

namespace {

struct PatientWork {
    PatientDetections det;
    UncertaintyMaps maps;
    VolumeGrid mean;
    BinaryMask predicted;
};

PatientWork process_patient(const ExperimentConfig& cfg, const DatasetManifest& manifest, const PatientEntry& entry) {
    const ProbabilityStack stack = staged("load", [&] { return load_stack(cfg.dataset_dir, manifest, entry.id); });
    PatientWork w{{entry.id, entry.split, {}, {}}, staged("uncertainty", [&] { return uncertainty_maps(stack); }),
                  mean_probability(stack), BinaryMask{}};
    staged("detect", [&] {
        w.predicted = morph_close_open(binarize(w.mean, cfg.probability_threshold));
        return 0;
    });
    staged("match", [&] {
        const BinaryMask ref = read_mask(cfg.dataset_dir / entry.id / "reference");
        if (ref.dims() != w.predicted.dims()) throw Error("reference and prediction grids differ for " + entry.id);
        w.det.graph = build_graph(connected_components(w.predicted), connected_components(ref));
        w.det.before = count_detections(w.det.graph);
        return 0;
    });
    return w;
}

FeatureTable patient_features(const ExperimentConfig& cfg, const DatasetManifest& manifest, const PatientWork& w,
                              UncertaintyType type) {
    return staged("features", [&] {
        VolumeGrid image;
        const VolumeGrid* source = &w.mean;
        if (cfg.mode == SourceMode::uncertainty) {
            source = &w.maps.get(type);
        } else if (cfg.mode == SourceMode::image) {
            image = read_volume(cfg.dataset_dir / w.det.patient / "image");
            if (image.dims() != w.mean.dims()) throw Error("image grid differs from prediction for " + w.det.patient);
            source = &image;
        }
        const RoiOptions opts{cfg.roi_margin, cfg.iso_spacing};
        std::vector<RoiPatch> patches;
        for (const LesionComponent& c : w.det.graph.predicted) {
            RoiPatch p = extract_roi(*source, w.predicted, c, opts, cfg.mode);
            p.key = {manifest.dataset, w.det.patient, c.id};
            p.label = w.det.graph.edges_of_predicted(c.id).empty() ? Label::FP : Label::TP;
            patches.push_back(std::move(p));
        }
        return featurize(patches, cfg.mode);
    });
}

}  // namespace

PatientDetections detect_patient(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                                 const PatientEntry& patient) {
    return process_patient(cfg, manifest, patient).det;
}

PreparedDataset prepare_dataset(const ExperimentConfig& cfg) {
    PreparedDataset data;
    data.manifest = staged("load", [&] { return DatasetManifest::load(cfg.dataset_dir); });
    data.uncertainty_type = cfg.effective_uncertainty_type(data.manifest.source);
    const auto& entries = data.manifest.patients;
    const int n = static_cast<int>(entries.size());
    data.patients.resize(entries.size());
    std::vector<FeatureTable> tables(entries.size());
    parallel_for(n, cfg.threads, [&](int i) {
        const auto k = static_cast<std::size_t>(i);
        PatientWork w = process_patient(cfg, data.manifest, entries[k]);
        tables[k] = patient_features(cfg, data.manifest, w, data.uncertainty_type);
        data.patients[k] = std::move(w.det);
    });
    data.train = FeatureTable(feature_names(cfg.mode));
    data.test = FeatureTable(feature_names(cfg.mode));
    for (std::size_t k = 0; k < entries.size(); ++k)
        (entries[k].split == Split::test ? data.test : data.train).append(tables[k]);
    return data;
}

TrainedModel train_model(const FeatureTable& train, const SelectionResult& selection, const ExperimentConfig& cfg,
                         std::uint64_t seed, const std::vector<std::string>& provenance) {
    return staged("train", [&] {
        const FeatureTable proj = train.project(selection.chosen);
        TrainedModel tm;
        tm.cv = cv_select(proj, cfg.grid_for_seed(seed), cfg.cv_folds, seed, cfg.threads);
        tm.model = fit(proj, tm.cv.best, {cfg.threads, nullptr});
        tm.model.selection = selection;
        tm.model.metadata.provenance = provenance;
        return tm;
    });
}

TrainedModel train_model(const FeatureTable& train, const ExperimentConfig& cfg, std::uint64_t seed,
                         const std::vector<std::string>& provenance) {
    const SelectionResult sel = staged("reduce", [&] { return select_features(train, cfg.cut_height); });
    return train_model(train, sel, cfg, seed, provenance);
}

namespace {

std::vector<const PatientDetections*> test_patients(const PreparedDataset& data) {
    std::vector<const PatientDetections*> out;
    for (const auto& p : data.patients)
        if (p.split == Split::test) out.push_back(&p);
    return out;
}

DetectionReport base_report(const PreparedDataset& data, const ExperimentConfig& cfg) {
    DetectionReport r;
    r.dataset = data.manifest.dataset;
    r.mode = cfg.mode;
    r.uncertainty_type = data.uncertainty_type;
    for (const PatientDetections* p : test_patients(data)) {
        r.patients.push_back(p->patient);
        r.per_patient_before.push_back(p->before);
        r.before += p->before;
    }
    return r;
}

SeedResult evaluate(const ExtraTreesModel& model, const PreparedDataset& data, double threshold, int threads) {
    return staged("filter", [&] {
        SeedResult s;
        s.seed = model.hyperparams.seed;
        s.hyperparams = model.hyperparams;
        for (const auto& f : model.feature_names)
            if (!data.test.has_column(f)) throw Error("feature mismatch: model needs '" + f + "'");
        std::map<std::string, std::set<int>> flagged;
        if (data.test.rows() > 0) {
            const std::vector<double> proba = model.predict_proba(data.test, threads);
            for (std::size_t r = 0; r < proba.size(); ++r)
                if (proba[r] > threshold) flagged[data.test.key(r).patient].insert(data.test.key(r).lesion_id);
            if (data.test.count(Label::TP) > 0 && data.test.count(Label::FP) > 0)
                s.test_auc = roc_auc(proba, data.test.labels());
        }
        for (const PatientDetections* p : test_patients(data)) {
            const auto it = flagged.find(p->patient);
            const DetectionCounts c =
                it == flagged.end() ? p->before : count_detections(filter_graph(p->graph, it->second));
            s.per_patient_after.push_back(c);
        }
        return s;
    });
}

}  // namespace

void DetectionReport::summarize() {
    before = {};
    for (const auto& c : per_patient_before) before += c;
    before_metrics = metrics(before);
    std::vector<double> pa, ra, fa;
    for (auto& s : seeds) {
        s.after = {};
        for (const auto& c : s.per_patient_after) s.after += c;
        s.after_metrics = metrics(s.after);
        pa.push_back(s.after_metrics.precision);
        ra.push_back(s.after_metrics.recall);
        fa.push_back(s.after_metrics.f1);
    }
    const auto fill = [&](MetricSummary& m, double b, const std::vector<double>& after) {
        m = {};
        m.before = b;
        if (after.empty()) {
            m.after_mean = b;
            return;
        }
        m.after_mean = mean(after);
        m.after_sd = sample_sd(after);
        m.relative_change_pct = b > 0.0 ? 100.0 * (m.after_mean - b) / b : 0.0;
        const std::vector<double> base(after.size(), b);
        const KsResult ks = ks_two_sample(base, after);
        m.ks_statistic = ks.statistic;
        m.ks_p_value = ks.p_value;
    };
    fill(precision, before_metrics.precision, pa);
    fill(recall, before_metrics.recall, ra);
    fill(f1, before_metrics.f1, fa);
}

json DetectionReport::to_json() const {
    const auto summary = [](const MetricSummary& m) {
        return json{{"before", m.before},
                    {"after_mean", m.after_mean},
                    {"after_sd", m.after_sd},
                    {"relative_change_pct", m.relative_change_pct},
                    {"ks_statistic", m.ks_statistic},
                    {"ks_p_value", m.ks_p_value}};
    };
    json j;
    j["dataset"] = dataset;
    j["model_provenance"] = model_provenance;
    j["mode"] = to_string(mode);
    j["uncertainty_type"] = to_string(uncertainty_type);
    j["before"] = {{"counts", lesionfp::to_json(before)}, {"metrics", lesionfp::to_json(before_metrics)}};
    j["patients"] = json::array();
    for (std::size_t i = 0; i < patients.size(); ++i) {
        json p{{"patient", patients[i]}, {"before", lesionfp::to_json(per_patient_before[i])}};
        json after = json::array();
        for (const auto& s : seeds) after.push_back(lesionfp::to_json(s.per_patient_after[i]));
        p["after_per_seed"] = std::move(after);
        j["patients"].push_back(std::move(p));
    }
    j["seeds"] = json::array();
    for (const auto& s : seeds)
        j["seeds"].push_back({{"seed", s.seed},
                              {"hyperparams", s.hyperparams.to_json()},
                              {"cv_auc", optional_json(s.cv_auc)},
                              {"test_auc", optional_json(s.test_auc)},
                              {"after", {{"counts", lesionfp::to_json(s.after)},
                                         {"metrics", lesionfp::to_json(s.after_metrics)}}}});
    j["summary"] = {{"precision", summary(precision)}, {"recall", summary(recall)}, {"f1", summary(f1)}};
    j["selection"] = selection ? selection->to_json() : json(nullptr);
    j["loco"] = json::array();
    for (const auto& f : loco) j["loco"].push_back({{"feature", f.feature}, {"importance", f.score}});
    return j;
}

std::string DetectionReport::to_csv() const {
    std::ostringstream out;
    out << "patient,stage,seed,tp,fp,fn,precision,recall,f1\n";
    const auto row = [&](const std::string& patient, const char* stage, const std::string& seed,
                         const DetectionCounts& c) {
        const DetectionMetrics m = metrics(c);
        out << patient << ',' << stage << ',' << seed << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
            << format_double(m.precision) << ',' << format_double(m.recall) << ',' << format_double(m.f1) << '\n';
    };
    for (std::size_t i = 0; i < patients.size(); ++i) {
        row(patients[i], "before", "", per_patient_before[i]);
        for (const auto& s : seeds) row(patients[i], "after", std::to_string(s.seed), s.per_patient_after[i]);
    }
    row("ALL", "before", "", before);
    for (const auto& s : seeds) row("ALL", "after", std::to_string(s.seed), s.after);
    return out.str();
}

void DetectionReport::save(const fs::path& dir) const {
    fs::create_directories(dir);
    write_text(dir / "report.json", to_json().dump(2) + "\n");
    write_text(dir / "report.csv", to_csv());
}

DetectionReport run_pipeline(const ExperimentConfig& cfg) {
    const PreparedDataset data = prepare_dataset(cfg);
    return run_pipeline(cfg, data);
}

DetectionReport run_pipeline(const ExperimentConfig& cfg, const PreparedDataset& data) {
    DetectionReport r = base_report(data, cfg);
    r.model_provenance = {data.manifest.dataset};
    std::vector<ExtraTreesModel> models;
    if (!cfg.classifier_enabled) {
        for (std::uint64_t seed : cfg.seeds) {
            SeedResult s;
            s.seed = seed;
            s.per_patient_after = r.per_patient_before;
            r.seeds.push_back(std::move(s));
        }
    } else {
        const SelectionResult sel = staged("reduce", [&] { return select_features(data.train, cfg.cut_height); });
        r.selection = sel;
        const FeatureTable train_sel = data.train.project(sel.chosen);
        const FeatureTable test_sel = data.test.project(sel.chosen);
        std::map<std::string, double> loco_sum;
        bool loco_done = false;
        for (std::uint64_t seed : cfg.seeds) {
            TrainedModel tm = train_model(data.train, sel, cfg, seed, r.model_provenance);
            SeedResult s = evaluate(tm.model, data, cfg.classifier_threshold, cfg.threads);
            s.seed = seed;
            s.cv_auc = tm.cv.cv_auc;
            r.seeds.push_back(std::move(s));
            if (cfg.loco && sel.chosen.size() >= 2 && test_sel.count(Label::TP) > 0 && test_sel.count(Label::FP) > 0) {
                const auto imp = staged("loco", [&] {
                    return loco_importance(train_sel, tm.model.hyperparams, test_sel, cfg.threads);
                });
                for (const auto& f : imp) loco_sum[f.feature] += f.score;
                loco_done = true;
            }
            models.push_back(std::move(tm.model));
        }
        if (loco_done) {
            for (const auto& [name, sum] : loco_sum)
                r.loco.push_back({name, sum / static_cast<double>(cfg.seeds.size())});
            std::stable_sort(r.loco.begin(), r.loco.end(),
                             [](const FeatureImportance& a, const FeatureImportance& b) { return a.score > b.score; });
        }
    }
    r.summarize();
    if (!cfg.output_dir.empty()) {
        staged("report", [&] {
            r.save(cfg.output_dir);
            data.train.write_csv(cfg.output_dir / "features_train.csv");
            data.test.write_csv(cfg.output_dir / "features_test.csv");
            if (r.selection) write_text(cfg.output_dir / "selection.json", r.selection->to_json().dump(2) + "\n");
            for (const auto& m : models)
                m.save(cfg.output_dir / ("model_seed" + std::to_string(m.hyperparams.seed) + ".json"));
            json graphs = json::object();
            for (const auto& p : data.patients) graphs[p.patient] = lesionfp::to_json(p.graph);
            write_text(cfg.output_dir / "graphs.json", graphs.dump(1) + "\n");
            return 0;
        });
    }
    return r;
}

DetectionReport cross_test(const ExtraTreesModel& model, const ExperimentConfig& cfg) {
    const PreparedDataset data = prepare_dataset(cfg);
    return cross_test(model, data, cfg);
}

DetectionReport cross_test(const ExtraTreesModel& model, const PreparedDataset& data, const ExperimentConfig& cfg) {
    DetectionReport r = base_report(data, cfg);
    r.model_provenance = model.metadata.provenance;
    r.selection = model.selection;
    r.seeds.push_back(evaluate(model, data, cfg.classifier_threshold, cfg.threads));
    r.summarize();
    if (!cfg.output_dir.empty()) staged("report", [&] {
            r.save(cfg.output_dir);
            return 0;
        });
    return r;
}

ExtraTreesModel combined_train(const std::vector<PreparedDataset>& datasets, const ExperimentConfig& cfg,
                               std::uint64_t seed) {
    if (datasets.empty()) throw StageError("train", "combined training needs at least one dataset");
    FeatureTable all(datasets.front().train.names());
    std::vector<std::string> provenance;
    for (const auto& d : datasets) {
        if (d.train.names() != all.names())
            throw StageError("train", "incompatible feature columns in dataset '" + d.manifest.dataset + "'");
        all.append(d.train);
        if (std::find(provenance.begin(), provenance.end(), d.manifest.dataset) == provenance.end())
            provenance.push_back(d.manifest.dataset);
    }
    return train_model(all, cfg, seed, provenance).model;
}

ExtraTreesModel combined_train(const std::vector<ExperimentConfig>& datasets, std::uint64_t seed) {
    if (datasets.empty()) throw StageError("train", "combined training needs at least one dataset");
    std::vector<PreparedDataset> prepared;
    for (const auto& c : datasets) prepared.push_back(prepare_dataset(c));
    return combined_train(prepared, datasets.front(), seed);
}

json LogsumReport::to_json() const {
    json j;
    j["dataset"] = dataset;
    j["uncertainty_type"] = to_string(uncertainty_type);
    j["scaler"] = {{"min", scaler.min()}, {"max", scaler.max()}};
    j["threshold"] = threshold;
    j["threshold_tuned"] = threshold_tuned;
    j["before"] = {{"counts", lesionfp::to_json(before)}, {"metrics", lesionfp::to_json(before_metrics)}};
    j["after"] = {{"counts", lesionfp::to_json(after)}, {"metrics", lesionfp::to_json(after_metrics)}};
    j["spearman_scaled_vs_diameter"] = spearman_scaled_vs_diameter;
    j["n_lesions"] = lesions.size();
    return j;
}

std::string LogsumReport::to_csv() const {
    std::ostringstream out;
    out << "lesion,label,logsum,scaled,max_diameter_mm,removed\n";
    for (const auto& l : lesions)
        out << l.key.str() << ',' << lesionfp::to_string(l.label) << ',' << format_double(l.logsum) << ','
            << format_double(l.scaled) << ',' << format_double(l.max_diameter_mm) << ',' << (l.removed ? 1 : 0)
            << '\n';
    return out.str();
}

void LogsumReport::save(const fs::path& dir) const {
    fs::create_directories(dir);
    write_text(dir / "logsum.json", to_json().dump(2) + "\n");
    write_text(dir / "logsum.csv", to_csv());
}

LogsumReport run_logsum_baseline(const ExperimentConfig& cfg, std::optional<double> threshold) {
    const DatasetManifest manifest = staged("load", [&] { return DatasetManifest::load(cfg.dataset_dir); });
    const UncertaintyType type = cfg.effective_uncertainty_type(manifest.source);

    struct Entry {
        PatientDetections det;
        std::vector<LogsumLesion> lesions;
    };
    std::vector<Entry> entries(manifest.patients.size());
    parallel_for(static_cast<int>(entries.size()), cfg.threads, [&](int i) {
        const auto k = static_cast<std::size_t>(i);
        PatientWork w = process_patient(cfg, manifest, manifest.patients[k]);
        const VolumeGrid& u = w.maps.get(type);
        staged("logsum", [&] {
            for (const LesionComponent& c : w.det.graph.predicted) {
                LogsumLesion l;
                l.key = {manifest.dataset, w.det.patient, c.id};
                l.label = w.det.graph.edges_of_predicted(c.id).empty() ? Label::FP : Label::TP;
                l.logsum = lesion_logsum(u, c, cfg.logsum_epsilon);
                l.max_diameter_mm =
                    shape_features(crop(component_mask(c), c.bbox)).get("shape_maximum_3d_diameter");
                entries[k].lesions.push_back(l);
            }
            return 0;
        });
        entries[k].det = std::move(w.det);
    });

    LogsumReport r;
    r.dataset = manifest.dataset;
    r.uncertainty_type = type;
    std::vector<double> train_values;
    for (const auto& e : entries)
        if (e.det.split == Split::train)
            for (const auto& l : e.lesions) train_values.push_back(l.logsum);
    if (train_values.empty()) throw StageError("logsum", "no training lesions to fit the log-sum scaling");
    r.scaler = LogsumScaler::fit(train_values);
    for (auto& e : entries)
        for (auto& l : e.lesions) l.scaled = r.scaler.scale(l.logsum);

    const auto counts_at = [&](Split split, double t) {
        DetectionCounts total;
        for (const auto& e : entries) {
            if (e.det.split != split) continue;
            std::set<int> ids;
            for (const auto& l : e.lesions)
                if (l.scaled > t) ids.insert(l.key.lesion_id);
            total += count_detections(filter_graph(e.det.graph, ids));
        }
        return total;
    };

    if (threshold) {
        r.threshold = *threshold;
    } else {
        std::set<double> candidates{1.0};
        for (const auto& e : entries)
            if (e.det.split == Split::val)
                for (const auto& l : e.lesions) candidates.insert(l.scaled);
        double best_f1 = -1.0;
        // Descending so ties keep the larger threshold (fewer removals).
        for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
            const double f = metrics(counts_at(Split::val, *it)).f1;
            if (f > best_f1) {
                best_f1 = f;
                r.threshold = *it;
            }
        }
        r.threshold_tuned = true;
    }

    std::vector<double> scaled, diam;
    for (const auto& e : entries) {
        if (e.det.split != Split::test) continue;
        r.before += e.det.before;
        for (LogsumLesion l : e.lesions) {
            l.removed = l.scaled > r.threshold;
            scaled.push_back(l.scaled);
            diam.push_back(l.max_diameter_mm);
            r.lesions.push_back(l);
        }
    }
    r.after = counts_at(Split::test, r.threshold);
    r.before_metrics = metrics(r.before);
    r.after_metrics = metrics(r.after);
    if (scaled.size() >= 2) r.spearman_scaled_vs_diameter = spearman(scaled, diam);
    if (!cfg.output_dir.empty()) staged("report", [&] {
            r.save(cfg.output_dir);
            return 0;
        });
    return r;
}

}  // namespace lesionfp
