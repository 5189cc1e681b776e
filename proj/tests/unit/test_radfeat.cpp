#include "../common/oracles.hpp"

#include "lesionfp/radfeat.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

using namespace lesionfp;

namespace {

BinaryMask ball(int r, int pad = 2) {
    const int n = 2 * r + 1 + 2 * pad;
    BinaryMask m({n, n, n}, {1, 1, 1});
    const int c = n / 2;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const int dx = x - c, dy = y - c, dz = z - c;
                m.set(x, y, z, dx * dx + dy * dy + dz * dz <= r * r);
            }
    return m;
}

BinaryMask box(int a, int b, int c, int pad = 2) {
    BinaryMask m({a + 2 * pad, b + 2 * pad, c + 2 * pad}, {1, 1, 1});
    for (int z = 0; z < c; ++z)
        for (int y = 0; y < b; ++y)
            for (int x = 0; x < a; ++x) m.set(x + pad, y + pad, z + pad, true);
    return m;
}

RoiPatch patch_of(const VolumeGrid& v, SourceMode mode = SourceMode::uncertainty) {
    RoiPatch p;
    p.scalar = v;
    p.mask = BinaryMask(v.dims(), v.spacing(), true);
    p.mode = mode;
    return p;
}

// Per-axis variance of voxel coordinates; axis-aligned shapes have a
// diagonal covariance.
std::array<double, 3> axis_variance(const BinaryMask& m) {
    std::array<double, 3> s{}, s2{};
    double n = 0;
    const Dims& d = m.dims();
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x)
                if (m.get(x, y, z)) {
                    const double p[3] = {double(x), double(y), double(z)};
                    for (int a = 0; a < 3; ++a) {
                        s[a] += p[a];
                        s2[a] += p[a] * p[a];
                    }
                    n += 1;
                }
    std::array<double, 3> v{};
    for (int a = 0; a < 3; ++a) v[a] = s2[a] / n - (s[a] / n) * (s[a] / n);
    return v;
}

}  // namespace

TEST_CASE("ball shape features") {
    const FeatureVector f = shape_features(ball(10));
    CHECK(f.get("shape_sphericity") >= 0.95);
    CHECK(f.get("shape_sphericity") <= 1.05);
    CHECK(f.get("shape_elongation") == doctest::Approx(1.0).epsilon(0.03));
    CHECK(f.get("shape_flatness") == doctest::Approx(1.0).epsilon(0.03));
    CHECK(f.get("shape_volume_mm3") == doctest::Approx(4.0 / 3.0 * std::numbers::pi * 1000).epsilon(0.02));
    CHECK(f.get("shape_maximum_3d_diameter") == doctest::Approx(20.0).epsilon(0.01));
    const double var = axis_variance(ball(10))[0];
    CHECK(f.get("shape_major_axis_length") == doctest::Approx(4.0 * std::sqrt(var)));
}

TEST_CASE("box shape features") {
    const BinaryMask m = box(40, 20, 10);
    const FeatureVector f = shape_features(m);
    CHECK(f.get("shape_elongation") == doctest::Approx(0.5).epsilon(0.04));
    CHECK(f.get("shape_flatness") == doctest::Approx(0.25).epsilon(0.08));
    const auto v = axis_variance(m);
    CHECK(f.get("shape_elongation") == doctest::Approx(std::sqrt(v[1] / v[0])).epsilon(1e-9));
    CHECK(f.get("shape_flatness") == doctest::Approx(std::sqrt(v[2] / v[0])).epsilon(1e-9));
    CHECK(f.get("shape_voxel_count") == 8000);
    CHECK(f.get("shape_least_axis_length") == doctest::Approx(4.0 * std::sqrt(v[2])));
    CHECK(f.get("shape_maximum_3d_diameter") == doctest::Approx(std::sqrt(39.0 * 39 + 19 * 19 + 9 * 9)));
    CHECK(f.get("shape_sphericity") < 1.0);
}

TEST_CASE("single voxel shape conventions") {
    BinaryMask m({3, 3, 3}, {0.5, 1.0, 2.0});
    m.set(1, 1, 1, true);
    const FeatureVector f = shape_features(m);
    CHECK(f.get("shape_elongation") == 1.0);
    CHECK(f.get("shape_flatness") == 1.0);
    CHECK(f.get("shape_maximum_3d_diameter") == doctest::Approx(std::sqrt(0.25 + 1 + 4)));
    for (double x : f.values) CHECK(std::isfinite(x));
    CHECK_THROWS_AS(shape_features(BinaryMask({3, 3, 3}, {1, 1, 1})), Error);
}

TEST_CASE("shape features ignore translation and axis order") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const BinaryMask core = morph_close_open(oracle::random_mask(rng, {7, 7, 7}, 0.7));
        if (core.empty()) continue;
        BinaryMask a({12, 12, 12}, {1, 1, 1}), b({12, 12, 12}, {1, 1, 1}), p({12, 12, 12}, {1, 1, 1});
        for (int z = 0; z < 7; ++z)
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 7; ++x)
                    if (core.get(x, y, z)) {
                        a.set(x + 1, y + 1, z + 1, true);
                        b.set(x + 4, y + 3, z + 2, true);
                        p.set(z + 2, x + 2, y + 2, true);
                    }
        const FeatureVector fa = shape_features(a);
        const FeatureVector fb = shape_features(b);
        const FeatureVector fp = shape_features(p);
        for (std::size_t i = 0; i < fa.values.size(); ++i) {
            CHECK(fb.values[i] == doctest::Approx(fa.values[i]).epsilon(1e-9));
            CHECK(fp.values[i] == doctest::Approx(fa.values[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("sphericity stays below one on random masks") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        const BinaryMask m = oracle::random_mask(rng, {6, 6, 6}, 0.3 + 0.03 * trial);
        if (m.empty()) continue;
        const FeatureVector f = shape_features(m);
        CHECK(f.get("shape_sphericity") <= 1.05);
        for (double x : f.values) CHECK(std::isfinite(x));
    }
}

TEST_CASE("first-order values") {
    const VolumeGrid v({4, 1, 1}, {1, 1, 1}, ValueKind::intensity, std::vector<float>{3, 1, 4, 2});
    const FeatureVector f = firstorder_features(patch_of(v));
    CHECK(f.get("firstorder_mean") == doctest::Approx(2.5));
    CHECK(f.get("firstorder_variance") == doctest::Approx(1.25));
    CHECK(f.get("firstorder_rms") == doctest::Approx(2.7386).epsilon(1e-4));
    CHECK(f.get("firstorder_minimum") == 1.0);
    CHECK(f.get("firstorder_maximum") == 4.0);
    CHECK(f.get("firstorder_range") == 3.0);
    CHECK(f.get("firstorder_median") == doctest::Approx(2.5));
    CHECK(f.get("firstorder_energy") == doctest::Approx(30.0));
    CHECK(f.get("firstorder_mean_absolute_deviation") == doctest::Approx(1.0));

    const VolumeGrid c({3, 3, 3}, {1, 1, 1}, ValueKind::intensity, 0.4f);
    const FeatureVector fc = firstorder_features(patch_of(c));
    for (const char* n : {"firstorder_mean", "firstorder_median", "firstorder_minimum", "firstorder_maximum"})
        CHECK(fc.get(n) == doctest::Approx(0.4));
    CHECK(fc.get("firstorder_variance") == 0.0);
    CHECK(fc.get("firstorder_skewness") == 0.0);
    CHECK(fc.get("firstorder_kurtosis") == 0.0);
    CHECK(fc.get("firstorder_entropy") == 0.0);

    CHECK_THROWS_AS(firstorder_features(patch_of(c, SourceMode::mask_only)), Error);
}

TEST_CASE("first-order moments of normal samples") {
    std::mt19937_64 rng(41);
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::vector<float> data(100 * 100 * 10);
    for (auto& x : data) x = g(rng);
    const VolumeGrid v({100, 100, 10}, {1, 1, 1}, ValueKind::intensity, data);
    RoiPatch p = patch_of(v);
    const FeatureVector f = firstorder_features(p);
    CHECK(std::abs(f.get("firstorder_skewness")) < 0.05);
    CHECK(std::abs(f.get("firstorder_kurtosis")) < 0.1);

    // voxel order does not matter
    std::shuffle(data.begin(), data.end(), rng);
    const FeatureVector s = firstorder_features(patch_of(VolumeGrid({100, 100, 10}, {1, 1, 1}, ValueKind::intensity, data)));
    for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(s.values[i] == doctest::Approx(f.values[i]).epsilon(1e-9));
}

TEST_CASE("glcm of a constant patch") {
    const VolumeGrid c({4, 4, 4}, {1, 1, 1}, ValueKind::intensity, 2.0f);
    const FeatureVector f = glcm_features(patch_of(c));
    CHECK(f.get("glcm_contrast") == 0.0);
    CHECK(f.get("glcm_joint_energy") == doctest::Approx(1.0));
    CHECK(f.get("glcm_joint_entropy") == 0.0);
    CHECK(f.get("glcm_correlation") == 1.0);
}

TEST_CASE("glcm of a checkerboard") {
    const Dims d{8, 8, 8};
    VolumeGrid v(d, {1, 1, 1}, ValueKind::intensity, 0.0f);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) v.at(x, y, z) = static_cast<float>((x + y + z) % 2);
    const RoiPatch p = patch_of(v);

    for (const Index3 axis : {Index3{1, 0, 0}, Index3{0, 1, 0}, Index3{0, 0, 1}}) {
        const Glcm m = glcm_matrix(p, {axis});
        const FeatureVector f = glcm_feature_values(m);
        CHECK(f.get("glcm_correlation") == doctest::Approx(-1.0));
        CHECK(f.get("glcm_contrast") == doctest::Approx(31.0 * 31.0));
    }

    // brute-force count per direction, averaged
    const std::vector<int> levels = discretize(p);
    double contrast = 0.0;
    for (const Index3& o : glcm_offsets()) {
        double n = 0, diff = 0;
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
                    if (!inside(d, nx, ny, nz)) continue;
                    const int a = levels[static_cast<std::size_t>(linear_index(d, x, y, z))];
                    const int b = levels[static_cast<std::size_t>(linear_index(d, nx, ny, nz))];
                    n += 2;
                    diff += 2.0 * (a - b) * (a - b);
                }
        contrast += diff / n;
    }
    contrast /= 13.0;
    CHECK(glcm_offsets().size() == 13);
    CHECK(glcm_features(p).get("glcm_contrast") == doctest::Approx(contrast));
}

TEST_CASE("glcm matrix is symmetric and normalized") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> data(9 * 8 * 7);
    for (auto& x : data) x = u(rng);
    RoiPatch p = patch_of(VolumeGrid({9, 8, 7}, {1, 1, 1}, ValueKind::intensity, data));
    p.mask = morph_close_open(oracle::random_mask(rng, {9, 8, 7}, 0.8));
    p.mask.set(0, true);
    const Glcm m = glcm_matrix(p, glcm_offsets());
    double sum = 0;
    for (int i = 1; i <= m.levels; ++i)
        for (int j = 1; j <= m.levels; ++j) {
            CHECK(m.at(i, j) == doctest::Approx(m.at(j, i)));
            sum += m.at(i, j);
        }
    CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("glcm entropy of shuffled levels") {
    std::mt19937_64 rng(47);
    std::uniform_int_distribution<int> lv(0, 3);
    std::vector<float> data(20 * 20 * 20);
    for (auto& x : data) x = static_cast<float>(lv(rng));
    const RoiPatch p = patch_of(VolumeGrid({20, 20, 20}, {1, 1, 1}, ValueKind::intensity, data));
    std::map<float, double> freq;
    for (float x : data) freq[x] += 1.0 / static_cast<double>(data.size());
    double h = 0;
    for (const auto& [k, q] : freq) h -= q * std::log2(q);
    CHECK(glcm_features(p).get("glcm_joint_entropy") == doctest::Approx(2 * h).epsilon(0.05));
}

TEST_CASE("roi extraction") {
    const Dims d{10, 10, 10};
    BinaryMask m(d, {1, 1, 1});
    m.set(5, 5, 5, true);
    const auto cc = connected_components(m);
    const VolumeGrid u(d, {1, 1, 1}, ValueKind::uncertainty, 0.2f);
    const RoiPatch p = extract_roi(u, m, cc[0], {2, 1.0});
    CHECK(p.scalar.dims() == Dims{5, 5, 5});
    CHECK(p.mask.count() == 1);

    BinaryMask full({6, 6, 6}, {1, 1, 1}, true);
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<float> g(0.0f, 0.6f);
    std::vector<float> data(216);
    for (auto& x : data) x = g(rng);
    const VolumeGrid src({6, 6, 6}, {1, 1, 1}, ValueKind::uncertainty, data);
    const RoiPatch whole = extract_roi(src, full, connected_components(full)[0], {0, 1.0});
    CHECK(whole.mask == full);
    for (std::int64_t i = 0; i < src.size(); ++i) CHECK(whole.scalar[i] == doctest::Approx(src[i]).epsilon(1e-6));

    BinaryMask an({8, 8, 6}, {1.5, 1.5, 2.0});
    an.set(3, 3, 3, true);
    an.set(4, 3, 3, true);
    const VolumeGrid ua({8, 8, 6}, {1.5, 1.5, 2.0}, ValueKind::uncertainty, 0.3f);
    const RoiPatch pa = extract_roi(ua, an, connected_components(an)[0], {2, 1.543});
    CHECK(pa.scalar.spacing() == Spacing{1.543, 1.543, 1.543});
    CHECK(pa.mask.spacing() == Spacing{1.543, 1.543, 1.543});
    CHECK_FALSE(pa.mask.empty());
}

TEST_CASE("roi keeps only the chosen lesion") {
    BinaryMask m({12, 6, 6}, {1, 1, 1});
    m.set(2, 2, 2, true);
    m.set(5, 2, 2, true);
    const auto cc = connected_components(m);
    REQUIRE(cc.size() == 2);
    const VolumeGrid u(m.dims(), m.spacing(), ValueKind::uncertainty, 0.1f);
    const RoiPatch p = extract_roi(u, m, cc[0], {3, 1.0});
    CHECK(p.mask.count() == 1);
}

TEST_CASE("featurize columns") {
    const VolumeGrid v({5, 5, 5}, {1, 1, 1}, ValueKind::uncertainty, 0.3f);
    RoiPatch p = patch_of(v);
    p.key = {"d", "p", 1};
    CHECK(featurize({p}, SourceMode::uncertainty).cols() == 34);
    p.mode = SourceMode::mask_only;
    const FeatureTable t = featurize({p}, SourceMode::mask_only);
    CHECK(t.cols() == 11);
    CHECK(t.names() == shape_feature_names());

    const FeatureTable empty = featurize({}, SourceMode::image);
    CHECK(empty.rows() == 0);
    CHECK(empty.cols() == 34);

    RoiPatch q = patch_of(v);
    CHECK_THROWS_AS(featurize({p, q}, SourceMode::mask_only), Error);
}
