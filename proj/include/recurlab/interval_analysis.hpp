#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "interval_maps.hpp"
#include "stats.hpp"
#include "systems.hpp"

namespace recurlab {

/// Depth-n member of the dynamical partition containing a point.
struct Cylinder {
    double left = 0.0;
    double right = 1.0;
    std::size_t depth = 0;
    std::vector<std::size_t> word;

    double length() const noexcept { return right - left; }
    bool contains(double x) const noexcept { return left < x && x < right; }
};

/// Pulls [0,1] back along an itinerary: the set of points whose first
/// word.size() iterates visit the given branches.
template <IntervalMapModel M>
Cylinder cylinder_of_word(const M& map, const std::vector<std::size_t>& word) {
    Interval j{0.0, 1.0};
    for (std::size_t k = word.size(); k-- > 0;) {
        const std::size_t b = word[k];
        const Interval img = map.branch_image(b);
        const double lo = std::max(j.left, img.left), hi = std::min(j.right, img.right);
        if (!(lo < hi)) return {0.0, 0.0, word.size(), word};
        const double a = map.branch_inverse(b, lo), c = map.branch_inverse(b, hi);
        j = {std::min(a, c), std::max(a, c)};
    }
    return {j.left, j.right, word.size(), word};
}

/// Depth-n cylinder containing x, computed from the itinerary of x.
template <IntervalMapModel M>
Cylinder cylinder(const M& map, double x, std::size_t n) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("cylinder: x outside [0,1]");
    if (n == 0) throw PreconditionError("cylinder: depth must be positive");
    std::vector<std::size_t> word;
    word.reserve(n);
    double y = x;
    for (std::size_t k = 0; k < n; ++k) {
        if (map.distance_to_singular(y) < 1e-14) {
            throw SingularOrbit("cylinder: iterate " + std::to_string(k) + " is singular");
        }
        word.push_back(map.branch_of(y));
        if (k + 1 < n) y = map.eval(y);
    }
    return cylinder_of_word(map, word);
}

/// Birkhoff average (1/n) sum_{k<n} ln|T'(T^k x)| along an orbit.
template <DifferentiableSystem S>
double lyapunov(const S& system, typename S::state_type state, std::size_t n) {
    if (n == 0) throw PreconditionError("lyapunov: n must be >= 1");
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        acc += system.log_expansion(state);
        system.advance(state);
    }
    return acc / static_cast<double>(n);
}

/// Lyapunov average from x; tent and doubling run on the exact digit
/// expansion of x (completed pseudo-randomly beyond its last bit).
inline double lyapunov(const IntervalMap& map, double x, std::size_t n) {
    return with_interval_system(map, [&](const auto& sys) { return lyapunov(sys, sys.start(x), n); });
}

/// ln|(T^n)'(x)| evaluated in binary64; for distortion comparisons at small n.
template <IntervalMapModel M>
double log_derivative_n(const M& map, double x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (map.distance_to_singular(x) < 1e-14) throw SingularOrbit("log_derivative_n: singular iterate");
        acc += std::log(std::abs(map.deriv(x)));
        x = map.eval(x);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Condition validation
// ---------------------------------------------------------------------------

struct ConditionCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SingularExponent {
    double point = 0.0;
    int side = 0;  ///< -1 left, +1 right
    double exponent = 0.0;  ///< fitted a with |T'(x)| ~ |x - point|^-a
};

struct ValidationReport {
    std::string map;
    std::vector<ConditionCheck> checks;
    std::vector<double> branch_image_lengths;  ///< first branches only for countable maps
    double min_image_length = 0.0;
    double min_expansion = 0.0;                ///< measured min |(T^iterate)'|
    ExpansionSpec declared;
    std::vector<double> boundary_eps;
    std::vector<double> boundary_measure;
    std::optional<double> boundary_exponent;   ///< fitted gamma in mu{d(x,S)<eps} ~ eps^gamma
    std::vector<SingularExponent> singular_exponents;
    std::optional<double> tail_exponent;        ///< fitted tau in nu{|T'|>t} ~ t^-tau; none if |T'| bounded

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
    }
    const ConditionCheck* find(const std::string& name) const {
        for (const auto& c : checks) if (c.name == name) return &c;
        return nullptr;
    }
};

namespace detail {

/// mu of the union of (a - eps, a + eps) over the singular points, via merged intervals.
template <IntervalMapModel M>
double boundary_neighbourhood_measure(const M& map, const std::vector<double>& singular, double eps) {
    std::vector<Interval> ivs;
    ivs.reserve(singular.size() + 1);
    double smallest = 1.0;
    for (double a : singular) {
        ivs.push_back({std::max(0.0, a - eps), std::min(1.0, a + eps)});
        if (a > 0.0) smallest = std::min(smallest, a);
    }
    // Countable sets accumulating at 0: everything below the listed points.
    if (!map.branch_count()) ivs.push_back({0.0, std::min(1.0, smallest + eps)});
    std::sort(ivs.begin(), ivs.end(), [](const Interval& a, const Interval& b) { return a.left < b.left; });
    double total = 0.0;
    Interval cur = ivs.front();
    for (std::size_t i = 1; i < ivs.size(); ++i) {
        if (ivs[i].left <= cur.right) {
            cur.right = std::max(cur.right, ivs[i].right);
        } else {
            total += map.cdf(cur.right) - map.cdf(cur.left);
            cur = ivs[i];
        }
    }
    total += map.cdf(cur.right) - map.cdf(cur.left);
    return total;
}

/// Largest x in [a, b] with |T'(x)| > t, assuming |T'| decreases from a to b (bisection).
template <IntervalMapModel M>
double derivative_level_crossing(const M& map, double a, double b, double t) {
    double lo = a, hi = b;  // |T'| > t at lo side
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (std::abs(map.deriv(mid)) > t) lo = mid; else hi = mid;
        if (lo == hi) break;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

struct ValidationGrid {
    std::size_t samples_per_branch = 512;
    std::size_t countable_branches = 64;   ///< branches examined for countable maps
    int eps_min_exponent = 4;              ///< eps = 2^-k, k in [min, max]
    int eps_max_exponent = 16;
    std::size_t singular_cutoff = 1'000'000;
};

/// Measures the piecewise-expansion conditions of a map and reports them.
///
/// Checks: branch monotonicity, declared expansion (on the declared iterate),
/// branch image lengths, boundary-neighbourhood scaling, singular exponents
/// where |T'| diverges, and the tail of |T'| under the invariant measure.
template <IntervalMapModel M>
ValidationReport validate_pe_conditions(const M& map, ValidationGrid grid = {}) {
    ValidationReport rep;
    rep.map = map.name();
    rep.declared = map.expansion();
    const std::size_t branches = map.branch_count().value_or(grid.countable_branches);
    const std::size_t ns = grid.samples_per_branch;

    // Monotonicity: sign-constant derivative and ordered values on each branch.
    bool monotone = true;
    for (std::size_t j = 0; j < branches && monotone; ++j) {
        const Interval dom = map.branch_domain(j);
        const double w = dom.length();
        double prev = map.eval(dom.left + w * 0.5 / static_cast<double>(ns + 1));
        const double sign = std::copysign(1.0, map.deriv(dom.left + 0.5 * w));
        for (std::size_t i = 1; i <= ns; ++i) {
            const double x = dom.left + w * (static_cast<double>(i) + 0.5) / static_cast<double>(ns + 1);
            const double v = map.eval(x);
            if (std::copysign(1.0, map.deriv(x)) != sign || (v - prev) * sign < 0.0) {
                monotone = false;
                break;
            }
            prev = v;
        }
    }
    rep.checks.push_back({"monotone-branches", monotone, ""});

    // Expansion on the declared iterate.
    double min_exp = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < branches; ++j) {
        const Interval dom = map.branch_domain(j);
        for (std::size_t i = 1; i <= ns; ++i) {
            double x = dom.left + dom.length() * static_cast<double>(i) / static_cast<double>(ns + 1);
            double d = 1.0;
            bool ok = true;
            for (int k = 0; k < rep.declared.iterate; ++k) {
                if (map.distance_to_singular(x) < 1e-12) { ok = false; break; }
                d *= std::abs(map.deriv(x));
                x = map.eval(x);
            }
            if (ok) min_exp = std::min(min_exp, d);
        }
    }
    rep.min_expansion = min_exp;
    rep.checks.push_back({"expansion", min_exp >= rep.declared.lambda_min * (1.0 - 1e-9) && min_exp > 1.0,
                          "min |(T^" + std::to_string(rep.declared.iterate) + ")'| = " + std::to_string(min_exp)});

    // Large images (PE2).
    rep.min_image_length = 1.0;
    for (std::size_t j = 0; j < branches; ++j) {
        const double len = map.branch_image(j).length();
        rep.branch_image_lengths.push_back(len);
        rep.min_image_length = std::min(rep.min_image_length, len);
    }
    rep.checks.push_back({"large-images", rep.min_image_length > 0.0,
                          "min branch image length = " + std::to_string(rep.min_image_length)});

    // Boundary neighbourhoods (PE4).
    const auto singular = map.singular_points(grid.singular_cutoff);
    std::vector<double> log_eps, log_mu;
    for (int k = grid.eps_min_exponent; k <= grid.eps_max_exponent; ++k) {
        const double eps = std::ldexp(1.0, -k);
        const double mu = detail::boundary_neighbourhood_measure(map, singular, eps);
        rep.boundary_eps.push_back(eps);
        rep.boundary_measure.push_back(mu);
        log_eps.push_back(std::log(eps));
        log_mu.push_back(std::log(mu));
    }
    if (auto fit = stats::least_squares(log_eps, log_mu)) rep.boundary_exponent = fit->slope;
    rep.checks.push_back({"boundary-scaling", rep.boundary_exponent.value_or(0.0) > 0.0,
                          "gamma = " + std::to_string(rep.boundary_exponent.value_or(0.0))});

    // Singular exponents at finite singular points (one-sided log-log fits).
    // Countable sets: the branch ends 1/k for k <= 5 and 1.
    std::vector<double> finite_points = singular;
    if (!map.branch_count()) {
        finite_points.assign(singular.end() - std::min<std::ptrdiff_t>(6, static_cast<std::ptrdiff_t>(singular.size())),
                             singular.end());
    }
    bool singular_ok = true;
    for (double a : finite_points) {
        for (int side : {-1, +1}) {
            const double room = side < 0 ? a : 1.0 - a;
            if (room <= 0.0) continue;
            const double scale = std::min(room * 0.25, 1e-2);
            std::vector<double> lx, ld;
            for (int k = 0; k < 12; ++k) {
                const double dist = scale * std::pow(10.0, -0.5 * k);
                const double x = a + side * dist;
                if (!(x > 0.0 && x < 1.0)) continue;
                const double d = std::abs(map.deriv(x));
                if (!std::isfinite(d)) continue;
                lx.push_back(std::log(dist));
                ld.push_back(std::log(d));
            }
            if (auto fit = stats::least_squares(lx, ld)) {
                const double alpha = std::max(0.0, -fit->slope);
                rep.singular_exponents.push_back({a, side, alpha});
                if (alpha >= 1.0) singular_ok = false;
            }
        }
    }
    rep.checks.push_back({"singular-exponents", singular_ok, "all fitted exponents < 1"});

    // Tail of |T'| under the invariant measure.
    std::vector<double> blowups;
    for (double a : finite_points) {
        if (map.derivative_diverges_at(a)) blowups.push_back(a);
    }
    if (!map.branch_count() && map.derivative_diverges_at(0.0)) blowups.push_back(0.0);
    if (!blowups.empty()) {
        std::vector<double> lt, lm;
        for (int k = 0; k <= 8; ++k) {
            const double t = 10.0 * std::pow(10.0, 0.25 * k);
            double mass = 0.0;
            for (double a : blowups) {
                for (int side : {-1, +1}) {
                    const double room = side < 0 ? a : 1.0 - a;
                    if (room <= 0.0) continue;
                    const double far = a + side * room;
                    const double edge = detail::derivative_level_crossing(map, a, far, t);
                    mass += std::abs(map.cdf(edge) - map.cdf(a));
                }
            }
            if (mass > 0.0) {
                lt.push_back(std::log(t));
                lm.push_back(std::log(mass));
            }
        }
        if (auto fit = stats::least_squares(lt, lm)) rep.tail_exponent = -fit->slope;
    }
    rep.checks.push_back({"derivative-tail", !rep.tail_exponent || *rep.tail_exponent > 0.0,
                          rep.tail_exponent ? "tau = " + std::to_string(*rep.tail_exponent) : "bounded |T'|"});
    return rep;
}

inline ValidationReport validate_pe_conditions(const IntervalMap& map, ValidationGrid grid = {}) {
    return map.visit([&](const auto& m) { return validate_pe_conditions(m, grid); });
}

} // namespace recurlab
