// lesionfp: command-line front end for the false-positive reduction toolkit.

#include "lesionfp/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

using namespace lesionfp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
    std::string config;
    std::string dataset;
    std::string out;
    std::vector<std::uint64_t> seeds;
    std::optional<double> threshold;
    std::string mode;
    std::string uncertainty_type;
    int threads = 0;
};

void add_overrides(CLI::App* app, Overrides& o, bool with_threshold = true) {
    app->add_option("-c,--config", o.config, "Experiment config (JSON)");
    app->add_option("--dataset", o.dataset, "Dataset directory (overrides config)");
    app->add_option("--seed", o.seeds, "Seed list (overrides config)");
    if (with_threshold) app->add_option("--threshold", o.threshold, "Classifier threshold on P(FP)");
    app->add_option("--mode", o.mode, "Feature source: uncertainty, image, mask_only");
    app->add_option("--uncertainty-type", o.uncertainty_type, "predictive, aleatoric or epistemic");
    app->add_option("-j,--threads", o.threads, "Worker threads");
}

ExperimentConfig make_config(const Overrides& o) {
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
    if (!o.dataset.empty()) c.dataset_dir = o.dataset;
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.seeds.empty()) c.seeds = o.seeds;
    if (o.threshold) c.classifier_threshold = *o.threshold;
    if (!o.mode.empty()) c.mode = source_mode_from_string(o.mode);
    if (!o.uncertainty_type.empty()) c.uncertainty_type = uncertainty_type_from_string(o.uncertainty_type);
    if (o.threads > 0) c.threads = o.threads;
    if (c.dataset_dir.empty()) throw Error("no dataset directory given (--dataset or config)");
    return c;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw Error("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

void print_metrics(const char* label, const DetectionCounts& c) {
    const DetectionMetrics m = metrics(c);
    std::cout << label << ": tp=" << c.tp << " fp=" << c.fp << " fn=" << c.fn << " precision=" << m.precision
              << " recall=" << m.recall << " f1=" << m.f1 << '\n';
}

void print_report(const DetectionReport& r) {
    std::cout << "dataset " << r.dataset << ", mode " << to_string(r.mode) << ", " << r.patients.size()
              << " test patients\n";
    print_metrics("before", r.before);
    for (const auto& s : r.seeds) {
        std::cout << "seed " << s.seed;
        if (s.cv_auc) std::cout << " cv_auc=" << *s.cv_auc;
        if (s.test_auc) std::cout << " test_auc=" << *s.test_auc;
        std::cout << '\n';
        print_metrics("  after", s.after);
    }
    const auto line = [](const char* name, const MetricSummary& m) {
        std::cout << name << ": " << m.before << " -> " << m.after_mean << " +/- " << m.after_sd << " ("
                  << m.relative_change_pct << "%, KS p=" << m.ks_p_value << ")\n";
    };
    line("precision", r.precision);
    line("recall", r.recall);
    line("f1", r.f1);
    for (const auto& f : r.loco) std::cout << "loco " << f.feature << " " << f.score << '\n';
}

template <typename F>
void run_stage(const char* stage, F&& f) {
    try {
        f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty-based false-positive lesion filtering"};
    app.require_subcommand(1);

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic dataset");
    std::string ph_out, ph_spec;
    PhantomSpec spec;
    std::optional<std::uint64_t> ph_seed;
    std::optional<int> ph_train, ph_val, ph_test, ph_samples, ph_lmin, ph_lmax, ph_bmin, ph_bmax;
    std::optional<double> ph_jitter, ph_soft, ph_noise, ph_miss;
    std::string ph_source, ph_name;
    phantom->add_option("-o,--out", ph_out, "Output directory")->required();
    phantom->add_option("--spec", ph_spec, "Phantom parameters (JSON)");
    phantom->add_option("--seed", ph_seed);
    phantom->add_option("--name", ph_name, "Dataset name");
    phantom->add_option("--train", ph_train);
    phantom->add_option("--val", ph_val);
    phantom->add_option("--test", ph_test);
    phantom->add_option("--samples", ph_samples);
    phantom->add_option("--source", ph_source, "Sample source kind");
    phantom->add_option("--lesions-min", ph_lmin);
    phantom->add_option("--lesions-max", ph_lmax);
    phantom->add_option("--blobs-min", ph_bmin);
    phantom->add_option("--blobs-max", ph_bmax);
    phantom->add_option("--jitter", ph_jitter, "Per-sample boundary jitter, mm");
    phantom->add_option("--softness", ph_soft, "Boundary softness, mm");
    phantom->add_option("--noise", ph_noise, "Probability noise level");
    phantom->add_option("--miss-rate", ph_miss);

    // uncertainty
    auto* unc = app.add_subcommand("uncertainty", "Compute mean probability and uncertainty maps");
    std::string un_dataset, un_patient, un_out, un_source = "mcdropout";
    std::vector<std::string> un_samples;
    unc->add_option("--dataset", un_dataset, "Dataset directory");
    unc->add_option("--patient", un_patient, "Patient id within the dataset");
    unc->add_option("--samples", un_samples, "Probability volumes (LFV stems), instead of --dataset");
    unc->add_option("--source", un_source, "Source kind for --samples");
    unc->add_option("-o,--out", un_out, "Output directory")->required();

    // detect
    auto* detect = app.add_subcommand("detect", "Binarize, clean up and label a probability map");
    std::string de_prob, de_out;
    double de_thr = 0.5;
    detect->add_option("--prob", de_prob, "Probability volume (LFV stem)")->required();
    detect->add_option("--threshold", de_thr, "Binarization threshold");
    detect->add_option("-o,--out", de_out, "Output stem for mask and components")->required();

    // match
    auto* match = app.add_subcommand("match", "Build the correspondence graph between two masks");
    std::string ma_pred, ma_ref, ma_out;
    match->add_option("--pred", ma_pred, "Predicted mask (LFV stem)")->required();
    match->add_option("--ref", ma_ref, "Reference mask (LFV stem)")->required();
    match->add_option("-o,--out", ma_out, "Graph JSON output");

    // features
    auto* features = app.add_subcommand("features", "Detect lesions and compute feature tables");
    Overrides fe;
    add_overrides(features, fe, false);
    features->add_option("-o,--out", fe.out, "Output directory")->required();

    // reduce
    auto* reduce = app.add_subcommand("reduce", "Correlation clustering and MI feature selection");
    std::string re_features, re_out;
    double re_cut = kDefaultCutHeight;
    reduce->add_option("--features", re_features, "Training feature CSV")->required();
    reduce->add_option("--cut", re_cut, "Dendrogram cut height");
    reduce->add_option("-o,--out", re_out, "Selection JSON output")->required();

    // train
    auto* train = app.add_subcommand("train", "Cross-validated ERT training");
    Overrides tr;
    std::string tr_features, tr_selection, tr_out, tr_name;
    add_overrides(train, tr, false);
    train->add_option("--features", tr_features, "Training feature CSV")->required();
    train->add_option("--selection", tr_selection, "Selection JSON (computed when absent)");
    train->add_option("--name", tr_name, "Provenance recorded in the model");
    train->add_option("-o,--out", tr_out, "Model output")->required();

    // filter
    auto* filter = app.add_subcommand("filter", "Classify lesions and filter the test-set graphs");
    Overrides fi;
    std::string fi_model;
    add_overrides(filter, fi);
    filter->add_option("--model", fi_model, "Model file")->required();
    filter->add_option("-o,--out", fi.out, "Output directory");

    // loco
    auto* loco = app.add_subcommand("loco", "Leave-one-covariate-out importance");
    std::string lo_model, lo_train, lo_holdout, lo_out;
    std::vector<std::uint64_t> lo_seeds;
    int lo_threads = 1;
    loco->add_option("--model", lo_model, "Model file (hyperparameters and features)")->required();
    loco->add_option("--train", lo_train, "Training feature CSV")->required();
    loco->add_option("--holdout", lo_holdout, "Holdout feature CSV")->required();
    loco->add_option("--seed", lo_seeds, "Seeds to average over (default: the model's)");
    loco->add_option("-j,--threads", lo_threads);
    loco->add_option("-o,--out", lo_out, "Importance JSON output");

    // logsum
    auto* logsum = app.add_subcommand("logsum", "Log-sum threshold baseline");
    Overrides ls;
    std::optional<double> ls_thr;
    add_overrides(logsum, ls, false);
    logsum->add_option("--threshold", ls_thr, "Scaled log-sum threshold (tuned on val when absent)");
    logsum->add_option("-o,--out", ls.out, "Output directory");

    // cross-test
    auto* cross = app.add_subcommand("cross-test", "Apply a model trained elsewhere to a dataset's test split");
    Overrides cr;
    std::string cr_model;
    add_overrides(cross, cr);
    cross->add_option("--model", cr_model, "Model file")->required();
    cross->add_option("-o,--out", cr.out, "Output directory");

    // combined-train
    auto* combined = app.add_subcommand("combined-train", "Train one model on merged training sets");
    std::vector<std::string> co_configs;
    std::uint64_t co_seed = 0;
    std::string co_out;
    int co_threads = 0;
    combined->add_option("-c,--config", co_configs, "Experiment configs, one per dataset")->required();
    combined->add_option("--seed", co_seed);
    combined->add_option("-j,--threads", co_threads);
    combined->add_option("-o,--out", co_out, "Model output")->required();

    // report
    auto* report = app.add_subcommand("report", "Run the full pipeline and write the detection report");
    Overrides rp;
    bool rp_no_classifier = false;
    add_overrides(report, rp);
    report->add_flag("--no-classifier", rp_no_classifier, "Skip classification (before == after)");
    report->add_option("-o,--out", rp.out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*phantom) {
            run_stage("phantom", [&] {
                if (!ph_spec.empty()) spec = PhantomSpec::from_json(read_json(ph_spec));
                if (ph_seed) spec.seed = *ph_seed;
                if (!ph_name.empty()) spec.dataset = ph_name;
                if (ph_train) spec.train_patients = *ph_train;
                if (ph_val) spec.val_patients = *ph_val;
                if (ph_test) spec.test_patients = *ph_test;
                if (ph_samples) spec.samples = *ph_samples;
                if (!ph_source.empty()) spec.source = source_kind_from_string(ph_source);
                if (ph_lmin) spec.lesions_min = *ph_lmin;
                if (ph_lmax) spec.lesions_max = *ph_lmax;
                if (ph_bmin) spec.false_blobs_min = *ph_bmin;
                if (ph_bmax) spec.false_blobs_max = *ph_bmax;
                if (ph_jitter) spec.jitter_mm = *ph_jitter;
                if (ph_soft) spec.softness_mm = *ph_soft;
                if (ph_noise) spec.noise = *ph_noise;
                if (ph_miss) spec.miss_rate = *ph_miss;
                const DatasetManifest m = generate_phantom(spec, ph_out);
                std::cout << "wrote " << m.patients.size() << " patients to " << ph_out << '\n';
            });
        } else if (*unc) {
            run_stage("uncertainty", [&] {
                ProbabilityStack stack;
                if (!un_samples.empty()) {
                    stack.source = source_kind_from_string(un_source);
                    for (const auto& s : un_samples) {
                        VolumeGrid v = read_volume(s);
                        stack.samples.push_back(v.kind() == ValueKind::probability ? std::move(v)
                                                                                  : v.with_kind(ValueKind::probability));
                    }
                } else {
                    if (un_dataset.empty() || un_patient.empty())
                        throw Error("give --samples or both --dataset and --patient");
                    stack = load_stack(un_dataset, DatasetManifest::load(un_dataset), un_patient);
                }
                const UncertaintyMaps maps = uncertainty_maps(stack);
                fs::create_directories(un_out);
                write_volume(mean_probability(stack), fs::path(un_out) / "mean");
                write_volume(maps.predictive, fs::path(un_out) / "predictive");
                write_volume(maps.aleatoric, fs::path(un_out) / "aleatoric");
                write_volume(maps.epistemic, fs::path(un_out) / "epistemic");
                std::cout << "min unclamped epistemic " << maps.min_unclamped_epistemic << '\n';
            });
        } else if (*detect) {
            run_stage("detect", [&] {
                VolumeGrid p = read_volume(de_prob);
                if (p.kind() != ValueKind::probability) p = p.with_kind(ValueKind::probability);
                const BinaryMask m = morph_close_open(binarize(p, de_thr));
                const auto comps = connected_components(m);
                write_mask(m, de_out);
                json j = json::array();
                for (const auto& c : comps)
                    j.push_back({{"id", c.id},
                                 {"voxel_count", c.voxel_count()},
                                 {"volume_mm3", c.volume_mm3()},
                                 {"bbox", {{"min", {c.bbox.min.x, c.bbox.min.y, c.bbox.min.z}},
                                           {"max", {c.bbox.max.x, c.bbox.max.y, c.bbox.max.z}}}}});
                write_json(lfv_stem(de_out).string() + ".components.json", j);
                std::cout << comps.size() << " lesions\n";
            });
        } else if (*match) {
            run_stage("match", [&] {
                const auto g = build_graph(connected_components(read_mask(ma_pred)),
                                           connected_components(read_mask(ma_ref)));
                const DetectionCounts c = count_detections(g);
                if (!ma_out.empty())
                    write_json(ma_out, {{"graph", to_json(g)}, {"counts", to_json(c)}, {"metrics", to_json(metrics(c))}});
                print_metrics("detections", c);
            });
        } else if (*features) {
            const ExperimentConfig cfg = make_config(fe);
            const PreparedDataset data = prepare_dataset(cfg);
            run_stage("features", [&] {
                fs::create_directories(cfg.output_dir);
                data.train.write_csv(cfg.output_dir / "features_train.csv");
                data.test.write_csv(cfg.output_dir / "features_test.csv");
                json j = json::object();
                for (const auto& p : data.patients)
                    j[p.patient] = {{"split", to_string(p.split)},
                                    {"graph", to_json(p.graph)},
                                    {"counts", to_json(p.before)}};
                write_json(cfg.output_dir / "detections.json", j);
                std::cout << data.train.rows() << " training and " << data.test.rows() << " test lesions\n";
            });
        } else if (*reduce) {
            run_stage("reduce", [&] {
                const SelectionResult s = select_features(FeatureTable::read_csv(re_features), re_cut);
                write_json(re_out, s.to_json());
                for (const auto& c : s.chosen) std::cout << c << '\n';
            });
        } else if (*train) {
            run_stage("train", [&] {
                ExperimentConfig cfg = tr.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(tr.config);
                if (tr.threads > 0) cfg.threads = tr.threads;
                const std::uint64_t seed = tr.seeds.empty() ? cfg.seeds.front() : tr.seeds.front();
                const FeatureTable t = FeatureTable::read_csv(tr_features);
                const std::vector<std::string> prov{tr_name.empty() ? t.rows() ? t.key(0).dataset : "" : tr_name};
                const TrainedModel tm =
                    tr_selection.empty()
                        ? train_model(t, cfg, seed, prov)
                        : train_model(t, SelectionResult::from_json(read_json(tr_selection)), cfg, seed, prov);
                tm.model.save(tr_out);
                std::cout << "cv_auc " << tm.cv.cv_auc << " with " << tm.model.hyperparams.to_json().dump() << '\n';
            });
        } else if (*filter || *cross) {
            Overrides& o = *filter ? fi : cr;
            const ExperimentConfig cfg = make_config(o);
            const ExtraTreesModel model =
                [&] {
                    try {
                        return ExtraTreesModel::load(*filter ? fi_model : cr_model);
                    } catch (const std::exception& e) {
                        throw StageError("load", e.what());
                    }
                }();
            print_report(cross_test(model, cfg));
        } else if (*loco) {
            run_stage("loco", [&] {
                const ExtraTreesModel m = ExtraTreesModel::load(lo_model);
                const FeatureTable tr_t = FeatureTable::read_csv(lo_train).project(m.feature_names);
                const FeatureTable ho_t = FeatureTable::read_csv(lo_holdout).project(m.feature_names);
                if (lo_seeds.empty()) lo_seeds.push_back(m.hyperparams.seed);
                std::map<std::string, double> sum;
                for (std::uint64_t s : lo_seeds) {
                    ErtHyperparams h = m.hyperparams;
                    h.seed = s;
                    for (const auto& f : loco_importance(tr_t, h, ho_t, lo_threads)) sum[f.feature] += f.score;
                }
                json j = json::array();
                for (const auto& f : m.feature_names) {
                    const double v = sum[f] / static_cast<double>(lo_seeds.size());
                    j.push_back({{"feature", f}, {"importance", v}});
                    std::cout << f << ' ' << v << '\n';
                }
                if (!lo_out.empty()) write_json(lo_out, j);
            });
        } else if (*logsum) {
            const ExperimentConfig cfg = make_config(ls);
            const LogsumReport r = run_logsum_baseline(cfg, ls_thr);
            std::cout << "threshold " << r.threshold << (r.threshold_tuned ? " (tuned on val)" : "") << '\n';
            print_metrics("before", r.before);
            print_metrics("after", r.after);
            std::cout << "spearman(scaled log-sum, diameter) " << r.spearman_scaled_vs_diameter << '\n';
        } else if (*combined) {
            std::vector<ExperimentConfig> cfgs;
            for (const auto& c : co_configs) {
                cfgs.push_back(ExperimentConfig::load(c));
                if (co_threads > 0) cfgs.back().threads = co_threads;
            }
            const ExtraTreesModel m = combined_train(cfgs, co_seed);
            run_stage("report", [&] { m.save(co_out); });
            std::cout << "trained on " << m.metadata.n_samples << " lesions from";
            for (const auto& p : m.metadata.provenance) std::cout << ' ' << p;
            std::cout << '\n';
        } else if (*report) {
            ExperimentConfig cfg = make_config(rp);
            if (rp_no_classifier) cfg.classifier_enabled = false;
            print_report(run_pipeline(cfg));
        }
    } catch (const StageError& e) {
        std::cerr << "lesionfp: error " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "lesionfp: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
