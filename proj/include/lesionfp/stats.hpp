#pragma once

#include <span>
#include <vector>

namespace lesionfp {

struct KsResult {
    double statistic = 0.0;  // sup |F_a - F_b|
    double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test. The p-value uses the asymptotic
// Kolmogorov distribution evaluated at (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D
// with ne = n m / (n + m).
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

// Survival function of the Kolmogorov distribution.
double kolmogorov_sf(double lambda);

// Average ranks (1-based), ties share their mean rank.
std::vector<double> ranks(std::span<const double> v);

double spearman(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_sd(std::span<const double> v);

}  // namespace lesionfp
