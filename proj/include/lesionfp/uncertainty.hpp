#pragma once
// Entropy-based uncertainty from a stack of stochastic probability samples.
// All entropies are in nats, binary (lesion vs background) only.

#include "lesionfp/volgrid.hpp"

#include <vector>

namespace lesionfp {

enum class SourceKind { baseline, tta, mcdropout, mcdropout_tta, ensemble, ensemble_tta };

std::string_view to_string(SourceKind kind);
SourceKind source_kind_from_string(std::string_view name);

// True when the source varies model parameters, i.e. epistemic uncertainty
// can be nonzero.
bool varies_parameters(SourceKind kind);

struct ProbabilityStack {
    std::vector<VolumeGrid> samples;
    SourceKind source = SourceKind::mcdropout;

    void validate() const;
};

enum class UncertaintyType { predictive, aleatoric, epistemic };

std::string_view to_string(UncertaintyType t);
UncertaintyType uncertainty_type_from_string(std::string_view name);

struct UncertaintyMaps {
    VolumeGrid predictive;
    VolumeGrid aleatoric;
    VolumeGrid epistemic;
    // Smallest predictive - aleatoric difference seen before clamping.
    double min_unclamped_epistemic = 0.0;

    const VolumeGrid& get(UncertaintyType t) const;
};

VolumeGrid mean_probability(const ProbabilityStack& stack);

// -p ln p - (1-p) ln(1-p), with 0 ln 0 = 0.
double binary_entropy(double p);

UncertaintyMaps uncertainty_maps(const ProbabilityStack& stack);

inline constexpr double kLogsumEpsilon = 1e-10;

// Sum over lesion voxels of ln(u + epsilon).
double lesion_logsum(const VolumeGrid& u, const LesionComponent& lesion, double epsilon = kLogsumEpsilon);

// Min-max scaling of log-sum values, fitted on training lesions and clamped
// to [0, 1] when applied elsewhere.
class LogsumScaler {
public:
    LogsumScaler() = default;
    LogsumScaler(double min, double max) : min_(min), max_(max) {}
    static LogsumScaler fit(std::span<const double> values);

    double scale(double logsum) const;
    double min() const noexcept { return min_; }
    double max() const noexcept { return max_; }

private:
    double min_ = 0.0;
    double max_ = 1.0;
};

struct LogsumPartition {
    std::vector<int> kept;
    std::vector<int> removed;
    std::vector<double> scaled;  // per input lesion, same order
};

// Lesions whose scaled log-sum exceeds threshold are removed. Without a
// scaler, scaling is fitted on the given lesions.
LogsumPartition logsum_filter(const std::vector<LesionComponent>& lesions, const VolumeGrid& u, double threshold,
                              const LogsumScaler* scaler = nullptr, double epsilon = kLogsumEpsilon);

}  // namespace lesionfp
