#include "lesionfp/stats.hpp"
#include "lesionfp/volgrid.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace lesionfp;

TEST_CASE("ks identical and disjoint samples") {
    const std::vector<double> a{0.1, 0.4, 0.2, 0.9, 0.5};
    const KsResult same = ks_two_sample(a, a);
    CHECK(same.statistic == 0.0);
    CHECK(same.p_value == doctest::Approx(1.0));

    std::mt19937_64 rng(151);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> lo(20), hi(20);
    for (auto& x : lo) x = u(rng);
    for (auto& x : hi) x = 2.0 + u(rng);
    const KsResult r = ks_two_sample(lo, hi);
    CHECK(r.statistic == 1.0);
    CHECK(r.p_value < 1e-6);

    CHECK_THROWS_AS(ks_two_sample(std::vector<double>{}, a), Error);
}

TEST_CASE("ks statistic against a step oracle") {
    std::mt19937_64 rng(157);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(7 + trial % 5), b(11 + trial % 3);
        for (auto& x : a) x = std::round(g(rng) * 3) / 3;
        for (auto& x : b) x = std::round((g(rng) + 0.3) * 3) / 3;
        double d = 0;
        auto cdf = [](const std::vector<double>& v, double t) {
            double c = 0;
            for (double x : v) c += x <= t;
            return c / static_cast<double>(v.size());
        };
        for (const auto* v : {&a, &b})
            for (double t : *v) d = std::max(d, std::abs(cdf(a, t) - cdf(b, t)));
        CHECK(ks_two_sample(a, b).statistic == doctest::Approx(d));
    }
}

TEST_CASE("ks calibration under the null") {
    std::mt19937_64 rng(163);
    std::normal_distribution<double> g(0.0, 1.0);
    int rejects = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> a(100), b(100);
        for (auto& x : a) x = g(rng);
        for (auto& x : b) x = g(rng);
        rejects += ks_two_sample(a, b).p_value < 0.05;
    }
    CHECK(rejects >= 20);
    CHECK(rejects <= 90);
}

TEST_CASE("kolmogorov survival function") {
    CHECK(kolmogorov_sf(0.0) == 1.0);
    CHECK(kolmogorov_sf(1.3581) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(kolmogorov_sf(5.0) < 1e-20);
}

TEST_CASE("ranks and spearman") {
    const std::vector<double> v{3, 1, 3, 2};
    CHECK(ranks(v) == std::vector<double>{3.5, 1, 3.5, 2});
    const std::vector<double> a{1, 2, 3, 4, 5};
    const std::vector<double> b{10, 20, 25, 100, 1000};
    const std::vector<double> c{5, 4, 3, 2, 1};
    CHECK(spearman(a, b) == doctest::Approx(1.0));
    CHECK(spearman(a, c) == doctest::Approx(-1.0));
}

TEST_CASE("mean and sample sd") {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(mean(v) == 5.0);
    CHECK(sample_sd(v) == doctest::Approx(std::sqrt(32.0 / 7.0)));
    CHECK(sample_sd(std::vector<double>{3.0}) == 0.0);
}
