#include "lesionfp/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace lesionfp {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view s) {
    for (Split v : {Split::train, Split::val, Split::test})
        if (to_string(v) == s) return v;
    throw Error("unknown split '" + std::string(s) + "'");
}

json PhantomSpec::to_json() const {
    return {{"dataset", dataset},
            {"dims", dims},
            {"spacing", spacing},
            {"train_patients", train_patients},
            {"val_patients", val_patients},
            {"test_patients", test_patients},
            {"lesions_min", lesions_min},
            {"lesions_max", lesions_max},
            {"lesion_axis_min_mm", lesion_axis_min_mm},
            {"lesion_axis_max_mm", lesion_axis_max_mm},
            {"miss_rate", miss_rate},
            {"partial_rate", partial_rate},
            {"partial_diameter_min_mm", partial_diameter_min_mm},
            {"partial_diameter_max_mm", partial_diameter_max_mm},
            {"irregularity", irregularity},
            {"false_blobs_min", false_blobs_min},
            {"false_blobs_max", false_blobs_max},
            {"blob_diameter_min_mm", blob_diameter_min_mm},
            {"blob_diameter_max_mm", blob_diameter_max_mm},
            {"samples", samples},
            {"source", to_string(source)},
            {"jitter_mm", jitter_mm},
            {"softness_mm", softness_mm},
            {"softness_spread", softness_spread},
            {"peak_min", peak_min},
            {"peak_max", peak_max},
            {"noise", noise},
            {"background_probability", background_probability},
            {"seed", seed}};
}

PhantomSpec PhantomSpec::from_json(const json& j) {
    PhantomSpec s;
    try {
        s.dataset = j.value("dataset", s.dataset);
        if (j.contains("dims")) s.dims = j.at("dims").get<Dims>();
        if (j.contains("spacing")) s.spacing = j.at("spacing").get<Spacing>();
        s.train_patients = j.value("train_patients", s.train_patients);
        s.val_patients = j.value("val_patients", s.val_patients);
        s.test_patients = j.value("test_patients", s.test_patients);
        s.lesions_min = j.value("lesions_min", s.lesions_min);
        s.lesions_max = j.value("lesions_max", s.lesions_max);
        s.lesion_axis_min_mm = j.value("lesion_axis_min_mm", s.lesion_axis_min_mm);
        s.lesion_axis_max_mm = j.value("lesion_axis_max_mm", s.lesion_axis_max_mm);
        s.miss_rate = j.value("miss_rate", s.miss_rate);
        s.partial_rate = j.value("partial_rate", s.partial_rate);
        s.partial_diameter_min_mm = j.value("partial_diameter_min_mm", s.partial_diameter_min_mm);
        s.partial_diameter_max_mm = j.value("partial_diameter_max_mm", s.partial_diameter_max_mm);
        s.irregularity = j.value("irregularity", s.irregularity);
        s.false_blobs_min = j.value("false_blobs_min", s.false_blobs_min);
        s.false_blobs_max = j.value("false_blobs_max", s.false_blobs_max);
        s.blob_diameter_min_mm = j.value("blob_diameter_min_mm", s.blob_diameter_min_mm);
        s.blob_diameter_max_mm = j.value("blob_diameter_max_mm", s.blob_diameter_max_mm);
        s.samples = j.value("samples", s.samples);
        s.source = source_kind_from_string(j.value("source", std::string(to_string(s.source))));
        s.jitter_mm = j.value("jitter_mm", s.jitter_mm);
        s.softness_mm = j.value("softness_mm", s.softness_mm);
        s.softness_spread = j.value("softness_spread", s.softness_spread);
        s.peak_min = j.value("peak_min", s.peak_min);
        s.peak_max = j.value("peak_max", s.peak_max);
        s.noise = j.value("noise", s.noise);
        s.background_probability = j.value("background_probability", s.background_probability);
        s.seed = j.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw Error(std::string("invalid phantom parameters: ") + e.what());
    }
    return s;
}

DatasetManifest DatasetManifest::load(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    std::ifstream in(p);
    if (!in) throw Error("cannot open manifest " + p.string());
    DatasetManifest m;
    try {
        json j;
        in >> j;
        m.dataset = j.at("dataset").get<std::string>();
        m.source = source_kind_from_string(j.at("source_kind").get<std::string>());
        m.samples = j.at("samples").get<int>();
        for (const json& pj : j.at("patients"))
            m.patients.push_back({pj.at("id").get<std::string>(), split_from_string(pj.at("split").get<std::string>())});
    } catch (const json::exception& e) {
        throw Error("malformed manifest " + p.string() + ": " + e.what());
    }
    if (m.samples < 1) throw Error("manifest declares no probability samples");
    if (m.source == SourceKind::baseline && m.samples != 1) throw Error("a baseline dataset must have one sample");
    return m;
}

void DatasetManifest::save(const fs::path& dir, const json& extra) const {
    json j = extra.is_object() ? extra : json::object();
    j["dataset"] = dataset;
    j["source_kind"] = to_string(source);
    j["samples"] = samples;
    j["patients"] = json::array();
    for (const auto& p : patients) j["patients"].push_back({{"id", p.id}, {"split", to_string(p.split)}});
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << j.dump(2) << '\n';
}

namespace {

std::string sample_name(int s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "prob_%02d", s);
    return buf;
}

enum class ObjectKind { lesion, partial, missed, false_blob };

std::string_view kind_name(ObjectKind k) {
    switch (k) {
    case ObjectKind::lesion: return "lesion";
    case ObjectKind::partial: return "partial";
    case ObjectKind::missed: return "missed";
    case ObjectKind::false_blob: return "false_blob";
    }
    return "lesion";
}

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;  // rows are the local axes

// Rotated ellipsoid with a smooth radial perturbation.
struct Shape {
    Vec3 centre{};
    Vec3 semi{1.0, 1.0, 1.0};
    Mat3 axes{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    std::array<Vec3, 3> lobe_dir{};
    std::array<double, 3> lobe_amp{};
    std::array<double, 3> lobe_freq{};
    std::array<double, 3> lobe_phase{};

    double bound(double irregularity) const { return std::max({semi[0], semi[1], semi[2]}) * (1.0 + irregularity); }

    // Approximate signed distance to the surface, in mm.
    double distance(const Vec3& p) const {
        Vec3 q{};
        double rho2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            const double t = (p[0] - centre[0]) * axes[a][0] + (p[1] - centre[1]) * axes[a][1] +
                             (p[2] - centre[2]) * axes[a][2];
            q[a] = t / semi[a];
            rho2 += q[a] * q[a];
        }
        const double rho = std::sqrt(rho2);
        double f = 1.0;
        if (rho > 1e-12)
            for (std::size_t k = 0; k < 3; ++k) {
                const double u = (q[0] * lobe_dir[k][0] + q[1] * lobe_dir[k][1] + q[2] * lobe_dir[k][2]) / rho;
                f += lobe_amp[k] * std::cos(lobe_freq[k] * u + lobe_phase[k]);
            }
        return (rho / f - 1.0) * std::min({semi[0], semi[1], semi[2]});
    }
};

struct Object {
    ObjectKind kind;
    Shape reference;  // unused for false blobs
    Shape predicted;  // region the simulated network fires on
    double peak = 0.97;
    double softness = 0.6;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double normal(std::mt19937_64& rng) {
    // Box-Muller on our own uniforms for a portable stream.
    const double u1 = std::max(uniform(rng, 0.0, 1.0), 1e-300);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Vec3 random_unit(std::mt19937_64& rng) {
    for (;;) {
        const Vec3 v{normal(rng), normal(rng), normal(rng)};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

Mat3 random_rotation(std::mt19937_64& rng) {
    const Vec3 a = random_unit(rng);
    Vec3 b = random_unit(rng);
    double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    for (std::size_t k = 0; k < 3; ++k) b[k] -= d * a[k];
    double n = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    while (n < 1e-6) {
        b = random_unit(rng);
        d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        for (std::size_t k = 0; k < 3; ++k) b[k] -= d * a[k];
        n = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    }
    for (double& x : b) x /= n;
    const Vec3 c{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    return {a, b, c};
}

Shape random_shape(std::mt19937_64& rng, const Vec3& centre, const Vec3& semi, double irregularity) {
    Shape s;
    s.centre = centre;
    s.semi = semi;
    s.axes = random_rotation(rng);
    for (std::size_t k = 0; k < 3; ++k) {
        s.lobe_dir[k] = random_unit(rng);
        s.lobe_amp[k] = uniform(rng, 0.0, irregularity / 3.0);
        s.lobe_freq[k] = uniform(rng, 2.0, 5.0);
        s.lobe_phase[k] = uniform(rng, 0.0, 6.283185307179586);
    }
    return s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<Object> place_objects(const PhantomSpec& spec, std::mt19937_64& rng) {
    std::vector<Object> objs;
    const double extent[3] = {spec.dims[0] * spec.spacing[0], spec.dims[1] * spec.spacing[1],
                              spec.dims[2] * spec.spacing[2]};
    const int n_lesions = uniform_int(rng, spec.lesions_min, spec.lesions_max);
    const int n_blobs = uniform_int(rng, spec.false_blobs_min, spec.false_blobs_max);
    for (int i = 0; i < n_lesions + n_blobs; ++i) {
        Object o{};
        Vec3 semi{};
        if (i < n_lesions) {
            const double r = uniform(rng, 0.0, 1.0);
            o.kind = r < spec.miss_rate                       ? ObjectKind::missed
                     : r < spec.miss_rate + spec.partial_rate ? ObjectKind::partial
                                                              : ObjectKind::lesion;
            for (double& a : semi) a = 0.5 * uniform(rng, spec.lesion_axis_min_mm, spec.lesion_axis_max_mm);
        } else {
            o.kind = ObjectKind::false_blob;
            for (double& a : semi) a = 0.5 * uniform(rng, spec.blob_diameter_min_mm, spec.blob_diameter_max_mm);
        }
        const double irr = o.kind == ObjectKind::false_blob ? 0.0 : spec.irregularity;
        const double bound = std::max({semi[0], semi[1], semi[2]}) * (1.0 + irr);
        Vec3 centre{};
        bool placed = false;
        for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
            const double margin = bound + 3.0;
            bool fits = true;
            for (std::size_t k = 0; k < 3; ++k) {
                if (extent[k] < 2.0 * margin) {
                    fits = false;
                    break;
                }
                centre[k] = uniform(rng, margin, extent[k] - margin);
                // Blob centres sit on voxel centres so the speckle survives
                // the opening step.
                if (o.kind == ObjectKind::false_blob)
                    centre[k] = std::round(centre[k] / spec.spacing[k]) * spec.spacing[k];
            }
            if (!fits) break;
            placed = true;
            for (const Object& other : objs) {
                const Shape& os = other.kind == ObjectKind::false_blob ? other.predicted : other.reference;
                const double ob = os.bound(other.kind == ObjectKind::false_blob ? 0.0 : spec.irregularity);
                double d2 = 0.0;
                for (std::size_t k = 0; k < 3; ++k) d2 += (centre[k] - os.centre[k]) * (centre[k] - os.centre[k]);
                if (std::sqrt(d2) < bound + ob + 5.0) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) throw Error("impossible packing: cannot place " + std::to_string(n_lesions + n_blobs) +
                                 " objects in the phantom volume");
        o.reference = random_shape(rng, centre, semi, irr);
        o.predicted = o.reference;
        o.peak = uniform(rng, spec.peak_min, spec.peak_max);
        o.softness = spec.softness_mm * uniform(rng, 1.0 - spec.softness_spread, 1.0 + spec.softness_spread);
        if (o.kind == ObjectKind::lesion) {
            const double scale = uniform(rng, 0.9, 1.1);
            for (std::size_t k = 0; k < 3; ++k) {
                o.predicted.semi[k] *= scale;
                o.predicted.centre[k] += uniform(rng, -0.5, 0.5);
            }
        } else if (o.kind == ObjectKind::partial) {
            // A fragment of the lesion: elongated and flattened core.
            const double r = 0.5 * uniform(rng, spec.partial_diameter_min_mm, spec.partial_diameter_max_mm);
            o.predicted = random_shape(rng, centre, {1.8 * r, r, 0.8 * r}, spec.irregularity);
            for (std::size_t k = 0; k < 3; ++k)
                o.predicted.centre[k] = std::round(centre[k] / spec.spacing[k]) * spec.spacing[k];
        } else if (o.kind == ObjectKind::missed) {
            o.peak = 0.35;
        }
        objs.push_back(o);
    }
    return objs;
}

}  // namespace

DatasetManifest generate_phantom(const PhantomSpec& spec, const fs::path& out_dir) {
    check_geometry(spec.dims, spec.spacing);
    if (spec.train_patients < 0 || spec.val_patients < 0 || spec.test_patients < 0 || spec.lesions_min < 0 ||
        spec.lesions_max < spec.lesions_min || spec.false_blobs_min < 0 || spec.false_blobs_max < spec.false_blobs_min)
        throw Error("phantom counts must be non-negative with min <= max");
    if (!(spec.lesion_axis_min_mm > 0.0) || spec.lesion_axis_max_mm < spec.lesion_axis_min_mm ||
        !(spec.blob_diameter_min_mm > 0.0) || spec.blob_diameter_max_mm < spec.blob_diameter_min_mm)
        throw Error("phantom radii must be positive with min <= max");
    if (spec.samples < 1) throw Error("phantom needs at least one probability sample");
    if (spec.source == SourceKind::baseline && spec.samples != 1) throw Error("a baseline phantom has one sample");
    if (!(spec.softness_mm > 0.0) || spec.jitter_mm < 0.0 || spec.noise < 0.0)
        throw Error("phantom noise parameters must be non-negative (softness positive)");

    DatasetManifest manifest;
    manifest.dataset = spec.dataset;
    manifest.source = spec.source;
    manifest.samples = spec.samples;

    const Dims& d = spec.dims;
    const Spacing& sp = spec.spacing;
    const int total = spec.train_patients + spec.val_patients + spec.test_patients;
    json truth = json::object();
    for (int pi = 0; pi < total; ++pi) {
        char id[16];
        std::snprintf(id, sizeof(id), "p%03d", pi);
        const Split split = pi < spec.train_patients ? Split::train
                            : pi < spec.train_patients + spec.val_patients ? Split::val
                                                                           : Split::test;
        manifest.patients.push_back({id, split});
        std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(pi) + 1);
        const std::vector<Object> objs = place_objects(spec, rng);

        BinaryMask reference(d, sp);
        VolumeGrid image(d, sp, ValueKind::intensity);
        std::vector<float> noise_field(static_cast<std::size_t>(voxel_count(d)));
        for (float& v : noise_field) v = static_cast<float>(spec.noise * normal(rng));
        std::vector<float> image_noise(noise_field.size());
        for (float& v : image_noise) v = static_cast<float>(8.0 * normal(rng));

        std::vector<std::vector<double>> shifts(objs.size());
        for (auto& s : shifts) {
            s.resize(static_cast<std::size_t>(spec.samples));
            for (double& v : s) v = spec.jitter_mm * normal(rng);
        }

        std::vector<std::vector<float>> probs(static_cast<std::size_t>(spec.samples),
                                              std::vector<float>(noise_field.size()));
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    const std::array<double, 3> p{x * sp[0], y * sp[1], z * sp[2]};
                    const auto idx = static_cast<std::size_t>(linear_index(d, x, y, z));
                    double img = 40.0;
                    std::vector<double> best(static_cast<std::size_t>(spec.samples), spec.background_probability);
                    for (std::size_t o = 0; o < objs.size(); ++o) {
                        const Object& ob = objs[o];
                        const double dpred = ob.predicted.distance(p);
                        if (ob.kind != ObjectKind::false_blob && ob.reference.distance(p) <= 0.0)
                            reference.set(x, y, z, true);
                        img += 60.0 * sigmoid(-(ob.kind == ObjectKind::false_blob ? dpred : ob.reference.distance(p)) / 0.5);
                        if (dpred > 6.0 * ob.softness + 4.0 * spec.jitter_mm + 2.0) continue;
                        for (int s = 0; s < spec.samples; ++s) {
                            const double v =
                                ob.peak * sigmoid(-(dpred - shifts[o][static_cast<std::size_t>(s)]) / ob.softness);
                            best[static_cast<std::size_t>(s)] = std::max(best[static_cast<std::size_t>(s)], v);
                        }
                    }
                    image[static_cast<std::int64_t>(idx)] = static_cast<float>(img + image_noise[idx]);
                    for (int s = 0; s < spec.samples; ++s)
                        probs[static_cast<std::size_t>(s)][idx] = static_cast<float>(
                            std::clamp(best[static_cast<std::size_t>(s)] + noise_field[idx], 0.0, 1.0));
                }

        const fs::path pdir = out_dir / id;
        fs::create_directories(pdir);
        write_mask(reference, pdir / "reference");
        write_volume(image, pdir / "image");
        for (int s = 0; s < spec.samples; ++s)
            write_volume(VolumeGrid(d, sp, ValueKind::probability, std::move(probs[static_cast<std::size_t>(s)])),
                         pdir / sample_name(s));

        json objs_j = json::array();
        for (const Object& o : objs)
            objs_j.push_back({{"kind", kind_name(o.kind)},
                              {"centre_mm", o.reference.centre},
                              {"semi_axes_mm", o.reference.semi},
                              {"peak", o.peak},
                              {"softness_mm", o.softness}});
        truth[id] = std::move(objs_j);
    }
    manifest.save(out_dir, {{"phantom", spec.to_json()}, {"objects", truth}});
    return manifest;
}

ProbabilityStack load_stack(const fs::path& dataset_dir, const DatasetManifest& manifest, const std::string& patient) {
    ProbabilityStack stack;
    stack.source = manifest.source;
    for (int s = 0; s < manifest.samples; ++s) {
        VolumeGrid v = read_volume(dataset_dir / patient / sample_name(s));
        if (v.kind() != ValueKind::probability) v = v.with_kind(ValueKind::probability);
        stack.samples.push_back(std::move(v));
    }
    stack.validate();
    return stack;
}

}  // namespace lesionfp
