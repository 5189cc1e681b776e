#include "lesionfp/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lesionfp {

std::string_view to_string(SourceKind kind) {
    switch (kind) {
    case SourceKind::baseline: return "baseline";
    case SourceKind::tta: return "tta";
    case SourceKind::mcdropout: return "mcdropout";
    case SourceKind::mcdropout_tta: return "mcdropout_tta";
    case SourceKind::ensemble: return "ensemble";
    case SourceKind::ensemble_tta: return "ensemble_tta";
    }
    return "baseline";
}

SourceKind source_kind_from_string(std::string_view name) {
    for (SourceKind k : {SourceKind::baseline, SourceKind::tta, SourceKind::mcdropout, SourceKind::mcdropout_tta,
                         SourceKind::ensemble, SourceKind::ensemble_tta})
        if (to_string(k) == name) return k;
    throw Error("unknown source kind '" + std::string(name) + "'");
}

bool varies_parameters(SourceKind kind) {
    return kind != SourceKind::baseline && kind != SourceKind::tta;
}

std::string_view to_string(UncertaintyType t) {
    switch (t) {
    case UncertaintyType::predictive: return "predictive";
    case UncertaintyType::aleatoric: return "aleatoric";
    case UncertaintyType::epistemic: return "epistemic";
    }
    return "predictive";
}

UncertaintyType uncertainty_type_from_string(std::string_view name) {
    for (UncertaintyType t : {UncertaintyType::predictive, UncertaintyType::aleatoric, UncertaintyType::epistemic})
        if (to_string(t) == name) return t;
    throw Error("unknown uncertainty type '" + std::string(name) + "'");
}

void ProbabilityStack::validate() const {
    if (samples.empty()) throw Error("probability stack is empty");
    if (source == SourceKind::baseline && samples.size() != 1)
        throw Error("a baseline stack must hold exactly one sample");
    for (const VolumeGrid& s : samples) {
        if (s.dims() != samples.front().dims() || s.spacing() != samples.front().spacing())
            throw Error("probability samples differ in dims or spacing");
        if (s.kind() != ValueKind::probability) throw Error("stack sample is not a probability volume");
    }
}

const VolumeGrid& UncertaintyMaps::get(UncertaintyType t) const {
    switch (t) {
    case UncertaintyType::aleatoric: return aleatoric;
    case UncertaintyType::epistemic: return epistemic;
    case UncertaintyType::predictive: break;
    }
    return predictive;
}

double binary_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("binary_entropy: p outside [0, 1]");
    double h = 0.0;
    if (p > 0.0) h -= p * std::log(p);
    if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
    return h;
}

namespace {

// Sample values at one voxel, sorted so that accumulation order does not
// depend on sample order.
void gather_sorted(const ProbabilityStack& stack, std::int64_t i, std::vector<float>& buf) {
    buf.clear();
    for (const VolumeGrid& s : stack.samples) buf.push_back(s[i]);
    std::sort(buf.begin(), buf.end());
}

double sorted_mean(const std::vector<float>& vals) {
    double sum = 0.0;
    for (float v : vals) sum += v;
    return sum / static_cast<double>(vals.size());
}

}  // namespace

VolumeGrid mean_probability(const ProbabilityStack& stack) {
    stack.validate();
    const VolumeGrid& first = stack.samples.front();
    std::vector<float> out(static_cast<std::size_t>(first.size()));
    std::vector<float> buf;
    for (std::int64_t i = 0; i < first.size(); ++i) {
        gather_sorted(stack, i, buf);
        out[static_cast<std::size_t>(i)] = static_cast<float>(sorted_mean(buf));
    }
    return VolumeGrid(first.dims(), first.spacing(), ValueKind::probability, std::move(out));
}

UncertaintyMaps uncertainty_maps(const ProbabilityStack& stack) {
    stack.validate();
    const VolumeGrid& first = stack.samples.front();
    const auto n = static_cast<std::size_t>(first.size());
    std::vector<float> pred(n), alea(n), epi(n);
    std::vector<float> buf;
    double min_raw = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        gather_sorted(stack, static_cast<std::int64_t>(i), buf);
        const double hp = binary_entropy(sorted_mean(buf));
        double ha;
        if (buf.front() == buf.back()) {
            // Identical samples: the mean entropy is exactly the entropy.
            ha = hp;
        } else {
            double sum = 0.0;
            for (float v : buf) sum += binary_entropy(v);
            ha = sum / static_cast<double>(buf.size());
        }
        const double raw = hp - ha;
        min_raw = std::min(min_raw, raw);
        pred[i] = static_cast<float>(hp);
        alea[i] = static_cast<float>(std::min(ha, hp));
        epi[i] = static_cast<float>(std::max(0.0, raw));
    }
    UncertaintyMaps maps{
        VolumeGrid(first.dims(), first.spacing(), ValueKind::uncertainty, std::move(pred)),
        VolumeGrid(first.dims(), first.spacing(), ValueKind::uncertainty, std::move(alea)),
        VolumeGrid(first.dims(), first.spacing(), ValueKind::uncertainty, std::move(epi)),
        n == 0 ? 0.0 : min_raw,
    };
    return maps;
}

double lesion_logsum(const VolumeGrid& u, const LesionComponent& lesion, double epsilon) {
    if (u.kind() != ValueKind::uncertainty) throw Error("lesion_logsum expects an uncertainty volume");
    if (!(epsilon > 0.0)) throw Error("lesion_logsum: epsilon must be positive");
    if (lesion.dims != u.dims()) throw Error("lesion voxel outside uncertainty volume");
    double sum = 0.0;
    for (std::int64_t v : lesion.voxels) {
        if (v < 0 || v >= u.size()) throw Error("lesion voxel outside uncertainty volume");
        sum += std::log(static_cast<double>(u[v]) + epsilon);
    }
    return sum;
}

LogsumScaler LogsumScaler::fit(std::span<const double> values) {
    if (values.empty()) return {};
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {*lo, *hi};
}

double LogsumScaler::scale(double logsum) const {
    const double range = max_ - min_;
    if (!(range > 0.0)) return 0.0;
    return std::clamp((logsum - min_) / range, 0.0, 1.0);
}

LogsumPartition logsum_filter(const std::vector<LesionComponent>& lesions, const VolumeGrid& u, double threshold,
                              const LogsumScaler* scaler, double epsilon) {
    LogsumPartition part;
    if (lesions.empty()) return part;
    std::vector<double> raw;
    raw.reserve(lesions.size());
    for (const LesionComponent& l : lesions) raw.push_back(lesion_logsum(u, l, epsilon));
    const LogsumScaler s = scaler ? *scaler : LogsumScaler::fit(raw);
    for (std::size_t i = 0; i < lesions.size(); ++i) {
        const double v = s.scale(raw[i]);
        part.scaled.push_back(v);
        (v > threshold ? part.removed : part.kept).push_back(lesions[i].id);
    }
    return part;
}

}  // namespace lesionfp
