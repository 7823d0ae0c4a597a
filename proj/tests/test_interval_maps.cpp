#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "recurlab/interval_maps.hpp"
#include "recurlab/rng.hpp"
#include "recurlab/stats.hpp"

using namespace recurlab;

namespace {

std::vector<double> draws(const IntervalMap& map, std::uint64_t seed, std::size_t n) {
    SplitMix64 rng(seed);
    std::vector<double> xs(n);
    for (auto& x : xs) x = map.quantile(rng.uniform_open());
    return xs;
}

double composite_simpson(auto f, double a, double b, int panels) {
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int i = 1; i < panels; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

} // namespace

TEST(Evaluate, BranchValues) {
    EXPECT_DOUBLE_EQ(evaluate(TentMap{}, 0.25), 0.5);
    EXPECT_DOUBLE_EQ(evaluate(GaussMap{}, 0.4), 0.5);
    EXPECT_DOUBLE_EQ(evaluate(LorenzMap{0.75}, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(evaluate(DoublingMap{}, 0.75), 0.5);
}

TEST(Evaluate, RejectsDiscontinuitiesAndDomain) {
    EXPECT_THROW(evaluate(DoublingMap{}, 0.5), SingularInput);
    EXPECT_THROW(evaluate(GaussMap{}, 1.0 / 3.0), SingularInput);
    EXPECT_THROW(evaluate(GaussMap{}, 0.0), SingularInput);
    EXPECT_THROW(evaluate(TentMap{}, 1.5), DomainError);
    EXPECT_THROW(evaluate(TentMap{}, -0.1), DomainError);
    EXPECT_NO_THROW(evaluate(TentMap{}, 0.5));
    EXPECT_DOUBLE_EQ(evaluate(GaussMap{}, 1.0), 0.0);
}

TEST(Derivative, Values) {
    EXPECT_DOUBLE_EQ(derivative(TentMap{}, 0.25), 2.0);
    EXPECT_DOUBLE_EQ(derivative(TentMap{}, 0.75), -2.0);
    EXPECT_DOUBLE_EQ(derivative(GaussMap{}, 0.4), -6.25);
    EXPECT_THROW(derivative(TentMap{}, 0.5), SingularInput);
}

TEST(Derivative, DivergenceIsSignedOverflow) {
    const LorenzMap lorenz(0.75);
    EXPECT_TRUE(std::isinf(derivative(lorenz, 0.5)));
    EXPECT_TRUE(std::isinf(derivative(GaussMap{}, 0.0)));
    EXPECT_LT(derivative(GaussMap{}, 0.0), 0.0);
    // |T'(x)| = 2 alpha |2x-1|^(alpha-1)
    for (double d : {1e-2, 1e-4, 1e-6}) {
        const double x = 0.5 - d / 2.0;
        EXPECT_NEAR(std::abs(derivative(lorenz, x)), 1.5 * std::pow(d, -0.25), 1e-9 * std::pow(d, -0.25));
    }
}

TEST(IntervalMapId, ResolvesKnownIds) {
    EXPECT_EQ(IntervalMap::from_id("tent").name(), "tent");
    EXPECT_EQ(IntervalMap::from_id("gauss").name(), "gauss");
    EXPECT_EQ(IntervalMap::from_id("lorenz:alpha=0.6").name(), "lorenz:alpha=0.6");
    EXPECT_TRUE(IntervalMap::from_id("doubling").is_dyadic());
    EXPECT_FALSE(IntervalMap::from_id("gauss").is_dyadic());
    EXPECT_THROW(IntervalMap::from_id("baker"), ConfigError);
    EXPECT_THROW(IntervalMap::from_id("lorenz:alpha=abc"), ConfigError);
    EXPECT_THROW(IntervalMap::from_id("lorenz:alpha=0.4"), ConfigError);
    EXPECT_THROW(IntervalMap::from_id("custom:/nonexistent/table.json"), IoError);
}

TEST(SampleInvariant, TentMean) {
    const auto xs = draws(IntervalMap::from_id("tent"), 11, 1'000'000);
    const double se = std::sqrt(1.0 / 12.0 / xs.size());
    EXPECT_NEAR(stats::mean(xs), 0.5, 3.0 * se);
}

TEST(SampleInvariant, GaussMean) {
    // int_0^1 x / ((1+x) ln 2) dx = (1 - ln 2) / ln 2
    const double expected = (1.0 - std::numbers::ln2) / std::numbers::ln2;
    const auto xs = draws(IntervalMap::from_id("gauss"), 12, 1'000'000);
    const double sd = stats::stddev(xs);
    EXPECT_NEAR(stats::mean(xs), expected, 3.0 * sd / std::sqrt(double(xs.size())));
}

class Pushforward : public ::testing::TestWithParam<const char*> {};

TEST_P(Pushforward, KolmogorovSmirnovWithinTolerance) {
    const auto map = IntervalMap::from_id(GetParam());
    auto xs = draws(map, 21, 100'000);
    const auto fresh = draws(map, 22, 100'000);
    for (auto& x : xs) x = evaluate(map, x);
    EXPECT_LE(stats::ks_two_sample(xs, fresh), 0.01);
}

INSTANTIATE_TEST_SUITE_P(Maps, Pushforward, ::testing::Values("tent", "doubling", "gauss", "lorenz:alpha=0.75"));

TEST(NumericDensity, GaussFixedPointMatchesClosedForm) {
    const auto dens = build_invariant_density(GaussMap{}, {4096, 200, 256});
    double worst = 0.0;
    for (int i = 0; i <= 10000; ++i) {
        const double x = i / 10000.0;
        worst = std::max(worst, std::abs(dens(x) - 1.0 / ((1.0 + x) * std::numbers::ln2)));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(NumericDensity, LorenzNormalisedAndPositive) {
    const LorenzMap lorenz(0.75);
    const auto* dens = lorenz.numeric_density();
    ASSERT_NE(dens, nullptr);
    const double total = composite_simpson([&](double x) { return (*dens)(x); }, 0.0, 1.0, 8192);
    EXPECT_NEAR(total, 1.0, 1e-6);
    EXPECT_NEAR(dens->cdf(1.0), 1.0, 1e-8);
    for (double x = 0.0; x <= 1.0; x += 1.0 / 512) EXPECT_GE((*dens)(x), 0.0);
    for (double u : {0.1, 0.5, 0.9}) EXPECT_NEAR(dens->cdf(dens->quantile(u)), u, 1e-10);
}

TEST(NumericDensity, TentFixedPointIsUniform) {
    const auto dens = build_invariant_density(TentMap{});
    for (double x = 0.0; x <= 1.0; x += 0.01) EXPECT_NEAR(dens(x), 1.0, 1e-9);
}

TEST(CustomMap, LinearTentTableReproducesTent) {
    const auto path = std::filesystem::temp_directory_path() / "recurlab_custom_tent.json";
    {
        std::ofstream out(path);
        out << R"({"breakpoints": [0, 0.5, 1], "coefficients": [[0, 2], [2, -2]]})";
    }
    const auto map = IntervalMap::from_id("custom:" + path.string());
    EXPECT_EQ(map.branch_count(), std::optional<std::size_t>(2));
    EXPECT_DOUBLE_EQ(map.eval(0.3), 0.6);
    EXPECT_DOUBLE_EQ(map.deriv(0.7), -2.0);
    EXPECT_NEAR(map.expansion().lambda_min, 2.0, 1e-9);
    for (double x = 0.05; x < 1.0; x += 0.1) EXPECT_NEAR(map.density(x), 1.0, 1e-6);
    std::filesystem::remove(path);
}

TEST(CustomMap, RejectsNonMonotoneBranch) {
    nlohmann::json j = {{"breakpoints", {0.0, 1.0}}, {"coefficients", {{0.0, 4.0, -4.0}}}};
    EXPECT_THROW(PolynomialMap::from_json(j), ConfigError);
}

TEST(GaussMap, NearestSingularHandlesAccumulation) {
    const GaussMap g;
    EXPECT_DOUBLE_EQ(g.nearest_singular(0.34), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(g.nearest_singular(0.9), 1.0);
    EXPECT_LE(g.distance_to_singular(1e-9), 1e-9);
    EXPECT_EQ(g.singular_points(10).size(), 11u);
}
