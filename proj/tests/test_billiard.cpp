#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "recurlab/billiard.hpp"
#include "recurlab/stats.hpp"

using namespace recurlab;
using namespace recurlab::billiard;

namespace {

const BilliardTable& table() {
    static const BilliardTable t = BilliardTable::default_table();
    return t;
}

double global_r(const BilliardState& s) { return table().arc_offset(s.scatterer) + s.r; }

} // namespace

TEST(DefaultTable, Geometry) {
    const auto& t = table();
    ASSERT_EQ(t.scatterers().size(), 2u);
    EXPECT_NEAR(t.total_perimeter(), 2.0 * std::numbers::pi * 0.66, 1e-12);
    EXPECT_NEAR(t.measure_constant(), 1.0 / (2.0 * t.total_perimeter()), 1e-15);
    EXPECT_EQ(t.lattice_reach(), 3);
}

TEST(CollisionMap, DiagonalHeadOnFlight) {
    const BilliardState s{0, 0.44 * std::numbers::pi / 4.0, 0.0};
    const auto c = collision_map(table(), s);
    EXPECT_EQ(c.state.scatterer, 1u);
    EXPECT_NEAR(c.state.phi, 0.0, 1e-12);
    EXPECT_NEAR(c.state.r, 0.22 * 5.0 * std::numbers::pi / 4.0, 1e-12);
    EXPECT_NEAR(c.free_path, std::sqrt(0.5) - 0.66, 1e-12);
    EXPECT_NEAR(c.free_path, 0.0471, 1e-4);
}

TEST(CollisionMap, TimeReversalInvolution) {
    SplitMix64 rng(101);
    double worst = 0.0;
    for (int i = 0; i < 100'000; ++i) {
        const auto s = invariant_sample(table(), rng);
        const auto back = collision_map(table(), reverse(collision_map(table(), s).state)).state;
        ASSERT_EQ(back.scatterer, s.scatterer);
        worst = std::max(worst, phase_distance(table(), back, reverse(s)));
    }
    EXPECT_LE(worst, 1e-9);
}

TEST(CollisionMap, OutgoingAngleInRange) {
    SplitMix64 rng(102);
    for (int i = 0; i < 1'000'000; ++i) {
        const auto out = collision_map(table(), invariant_sample(table(), rng)).state;
        ASSERT_LE(std::abs(out.phi), half_pi);
        ASSERT_GE(out.r, 0.0);
        ASSERT_LT(out.r, table().scatterer(out.scatterer).perimeter());
    }
}

TEST(CollisionMap, ReflectionLawInCartesianLift) {
    SplitMix64 rng(103);
    for (int i = 0; i < 100'000; ++i) {
        const auto s = invariant_sample(table(), rng);
        const auto c = collision_map(table(), s);
        const Vec2 v = table().velocity(s);
        const Vec2 hit = table().boundary_point(s) + c.free_path * v;
        // The hit point is a lattice translate of the boundary point of F(s).
        const Vec2 diff = hit - table().boundary_point(c.state);
        EXPECT_NEAR(diff.x, std::round(diff.x), 1e-10);
        EXPECT_NEAR(diff.y, std::round(diff.y), 1e-10);
        const Vec2 n = table().normal(c.state);
        const Vec2 out = table().velocity(c.state);
        EXPECT_NEAR(dot(out, n), -dot(v, n), 1e-10);
        EXPECT_NEAR(cross(out, n), cross(v, n), 1e-10);
        EXPECT_NEAR(norm(out), 1.0, 1e-12);
    }
}

TEST(CollisionMap, Errors) {
    EXPECT_THROW(collision_map(table(), {0, 0.1, half_pi}), GrazingCollision);
    EXPECT_THROW(collision_map(table(), {0, 0.1, -half_pi + 1e-13}), GrazingCollision);
    const BilliardTable short_sight({{{0.0, 0.0}, 0.44}, {{0.5, 0.5}, 0.22}}, 0.01);
    EXPECT_THROW(collision_map(short_sight, {0, 0.3, 0.2}), HorizonExceeded);
}

TEST(InvariantSample, ArcsineLaw) {
    EXPECT_DOUBLE_EQ(phi_from_uniform(0.5), 0.0);
    SplitMix64 rng(104);
    const int n = 1'000'000;
    int inside = 0;
    for (int i = 0; i < n; ++i) inside += std::abs(invariant_sample(table(), rng).phi) < std::numbers::pi / 6.0;
    const double se = std::sqrt(0.25 / n);
    EXPECT_NEAR(static_cast<double>(inside) / n, 0.5, 3.0 * se);
}

TEST(InvariantSample, ScattererChosenByPerimeter) {
    SplitMix64 rng(105);
    const int n = 1'000'000;
    int first = 0;
    for (int i = 0; i < n; ++i) first += invariant_sample(table(), rng).scatterer == 0;
    const double p = 0.44 / 0.66;
    EXPECT_NEAR(static_cast<double>(first) / n, p, 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST(InvariantSample, MarginalsInvariantUnderCollision) {
    SplitMix64 rng(106), fresh_rng(107);
    const std::size_t n = 100'000;
    std::vector<double> phi_push, r_push, phi_fresh, r_fresh;
    for (std::size_t i = 0; i < n; ++i) {
        const auto img = collision_map(table(), invariant_sample(table(), rng)).state;
        phi_push.push_back(img.phi);
        r_push.push_back(global_r(img));
        const auto f = invariant_sample(table(), fresh_rng);
        phi_fresh.push_back(f.phi);
        r_fresh.push_back(global_r(f));
    }
    EXPECT_LE(stats::ks_two_sample(phi_push, phi_fresh), 0.01);
    EXPECT_LE(stats::ks_two_sample(r_push, r_fresh), 0.01);
}

TEST(PhaseDistance, Examples) {
    const BilliardState a{0, 0.5, 0.1};
    EXPECT_DOUBLE_EQ(phase_distance(table(), a, a), 0.0);
    const double per = table().scatterer(0).perimeter();
    const BilliardState b{0, 0.05, 0.1}, c{0, per - 0.05, 0.1};
    EXPECT_NEAR(phase_distance(table(), b, c), 0.1, 1e-12);
    EXPECT_TRUE(std::isinf(phase_distance(table(), a, {1, 0.5, 0.1})));
}

TEST(BallMeasure, MatchesBesselClosedForm) {
    // int over the disc of cos(phi0 + u) = cos(phi0) * 2 pi rho J1(rho)
    const double c = table().measure_constant();
    for (double phi0 : {0.0, 0.3, -1.0, 1.4}) {
        for (double rho : {1e-4, 1e-2, 0.1, 0.15}) {
            if (std::abs(phi0) + rho >= half_pi) continue;
            const double oracle = c * 2.0 * std::numbers::pi * rho * std::cyl_bessel_j(1.0, rho) * std::cos(phi0);
            EXPECT_NEAR(ball_measure(table(), {0, 1.0, phi0}, rho), oracle, 1e-12 * oracle + 1e-300);
        }
    }
}

TEST(BallMeasure, SmallBallsAreDiscs) {
    const double c = table().measure_constant();
    for (double rho : {1e-3, 1e-4, 1e-5}) {
        const double v = ball_measure(table(), {1, 0.2, 0.0}, rho);
        EXPECT_NEAR(v / (c * std::numbers::pi * rho * rho), 1.0, 0.01);
    }
    const double phi0 = 0.8;
    EXPECT_NEAR(ball_measure(table(), {1, 0.2, phi0}, 1e-6) / 1e-12, c * std::numbers::pi * std::cos(phi0), 1e-6);
    EXPECT_EQ(ball_measure(table(), {0, 0.0, 0.0}, 0.0), 0.0);
}

TEST(BallMeasure, Errors) {
    EXPECT_THROW(ball_measure(table(), {0, 0.0, 1.5}, 0.1), BoundaryBall);
    EXPECT_THROW(ball_measure(table(), {0, 0.0, 0.0}, -1e-3), PreconditionError);
}

TEST(Homogeneity, StripExamples) {
    EXPECT_EQ(homogeneity_index({0, 0.0, 0.0}, 10), 0);
    EXPECT_EQ(homogeneity_index({0, 0.0, half_pi - 1.0 / 144.5}, 10), 12);
    EXPECT_EQ(homogeneity_index({0, 0.0, -(half_pi - 1.0 / 144.5)}, 10), -12);
    EXPECT_EQ(homogeneity_index({0, 0.0, half_pi - 1.0 / 110.0}, 10), 10);
    EXPECT_THROW(homogeneity_index({0, 0.0, half_pi}, 10), BoundaryState);
}

TEST(Homogeneity, BracketingProperty) {
    SplitMix64 rng(108);
    for (int i = 0; i < 100'000; ++i) {
        const double gap = std::ldexp(rng.uniform_open(), -static_cast<int>(rng() % 20));
        const long k = homogeneity_index({0, 0.0, half_pi - gap}, 10);
        const double g = half_pi - (half_pi - gap);  // the gap as stored
        if (k == 0) {
            EXPECT_GE(g, 0.01);
        } else {
            EXPECT_GE(k, 10);
            EXPECT_LT(1.0 / double((k + 1) * (k + 1)), g);
            EXPECT_LE(g, 1.0 / double(k * k));
        }
    }
}

TEST(FiniteHorizon, FreePathsBounded) {
    SplitMix64 rng(109);
    double longest = 0.0;
    std::size_t collisions = 0;
    while (collisions < 1'000'000) {
        auto s = invariant_sample(table(), rng);
        for (int i = 0; i < 10'000 && collisions < 1'000'000; ++i, ++collisions) {
            Collision c;
            try {
                c = collision_map(table(), s);
            } catch (const GrazingCollision&) {
                break;
            }
            longest = std::max(longest, c.free_path);
            s = c.state;
        }
    }
    EXPECT_LE(longest, table().horizon_bound());
}

TEST(DerivativeGrowth, ExpansionScalesWithStripIndexSquared) {
    // Take w in strip k and its preimage z = F^{-1}(w); the collision map
    // stretches near z like 1 / cos(phi(w)).
    SplitMix64 rng(110);
    std::vector<double> lk, le;
    for (int k = 10; k <= 40; k += 5) {
        std::vector<double> exps;
        while (exps.size() < 41) {
            auto w = invariant_sample(table(), rng);
            const double gap = 1.0 / ((k + 0.5) * (k + 0.5));
            w.phi = std::copysign(half_pi - gap, w.phi);
            ASSERT_EQ(std::abs(homogeneity_index(w, 10)), k);
            const auto z = reverse(collision_map(table(), reverse(w)).state);
            const double e = boundary_expansion(table(), z);
            if (std::isfinite(e)) exps.push_back(e);
        }
        lk.push_back(std::log(double(k)));
        le.push_back(std::log(stats::median(exps)));
    }
    const auto fit = stats::least_squares(lk, le);
    ASSERT_TRUE(fit);
    EXPECT_NEAR(fit->slope, 2.0, 0.3);
}

TEST(BilliardTable, RejectsOverlap) {
    try {
        BilliardTable({{{0.0, 0.0}, 0.3}, {{0.5, 0.0}, 0.3}}, 2.0);
        FAIL() << "expected TableError";
    } catch (const TableError& e) {
        EXPECT_NE(std::string(e.what()).find("overlap"), std::string::npos);
    }
    EXPECT_THROW(BilliardTable({{{0.0, 0.0}, 0.44}, {{0.9, 0.0}, 0.2}}, 2.0), TableError);  // via translate
}

TEST(BilliardTable, RejectsOpenCorridor) {
    try {
        BilliardTable({{{0.0, 0.0}, 0.1}}, 2.0);
        FAIL() << "expected TableError";
    } catch (const TableError& e) {
        EXPECT_NE(std::string(e.what()).find("corridor"), std::string::npos);
    }
}

TEST(BilliardTable, RejectsBadRadiusAndHorizon) {
    EXPECT_THROW(BilliardTable({{{0.0, 0.0}, 0.5}}, 2.0), TableError);
    EXPECT_THROW(BilliardTable({{{0.0, 0.0}, 0.0}}, 2.0), TableError);
    EXPECT_THROW(BilliardTable({{{0.0, 0.0}, 0.44}, {{0.5, 0.5}, 0.22}}, 0.0), TableError);
    EXPECT_THROW(BilliardTable({}, 2.0), TableError);
}

TEST(BilliardTable, JsonRoundTrip) {
    const auto j = table().to_json();
    const auto t = BilliardTable::from_json(j);
    ASSERT_EQ(t.scatterers().size(), 2u);
    EXPECT_EQ(t.to_json(), j);
    EXPECT_THROW(BilliardTable::from_json({{"scatterers", 3}}), ConfigError);
    EXPECT_THROW(BilliardTable::from_file("/nonexistent/table.json"), IoError);
}

TEST(BilliardSystem, DistanceAndAdvanceForward) {
    const BilliardSystem sys(table());
    BilliardState s{0, 0.44 * std::numbers::pi / 4.0, 0.0};
    sys.advance(s);
    EXPECT_EQ(s.scatterer, 1u);
    EXPECT_GT(sys.diameter(), 0.0);
    EXPECT_TRUE(std::isinf(sys.distance({0, 0, 0}, {1, 0, 0})));
}
