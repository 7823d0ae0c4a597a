#pragma once

#include <algorithm>
#include <concepts>
#include <cstdio>
#include <type_traits>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace recurlab {

struct Interval {
    double left = 0.0;
    double right = 1.0;

    double length() const noexcept { return right - left; }
    bool contains(double x) const noexcept { return left <= x && x <= right; }
};

enum class DensityKind { analytic, numeric };

/// Declared uniform expansion |(T^iterate)'| >= lambda_min away from the singular set.
struct ExpansionSpec {
    int iterate = 1;
    double lambda_min = 2.0;
};

namespace detail {

inline bool within_ulp(double x, double a) noexcept {
    return x >= std::nextafter(a, -1.0) && x <= std::nextafter(a, 2.0);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Tabulated invariant density
// ---------------------------------------------------------------------------

/// Piecewise-linear density on a uniform grid of [0,1], with its exact
/// (piecewise-quadratic) cumulative distribution.
class NumericDensity {
public:
    NumericDensity() = default;

    explicit NumericDensity(std::vector<double> nodes) : values_(std::move(nodes)) {
        if (values_.size() < 2) {
            throw PreconditionError("NumericDensity needs at least two nodes");
        }
        h_ = 1.0 / static_cast<double>(values_.size() - 1);
        normalize();
    }

    std::size_t cells() const noexcept { return values_.size() - 1; }
    const std::vector<double>& nodes() const noexcept { return values_; }

    double operator()(double x) const noexcept {
        auto [i, t] = locate(x);
        return values_[i] + t * (values_[i + 1] - values_[i]);
    }

    double cdf(double x) const noexcept {
        if (x <= 0.0) return 0.0;
        if (x >= 1.0) return 1.0;
        auto [i, t] = locate(x);
        return cumulative_[i] + h_ * t * (values_[i] + 0.5 * t * (values_[i + 1] - values_[i]));
    }

    double quantile(double u) const noexcept {
        if (u <= 0.0) return 0.0;
        if (u >= 1.0) return 1.0;
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        std::size_t i = static_cast<std::size_t>(std::distance(cumulative_.begin(), it));
        i = std::clamp<std::size_t>(i, 1, cells()) - 1;
        // Solve h*t*(f0 + t*(f1-f0)/2) = u - C_i for t in [0,1].
        const double f0 = values_[i], f1 = values_[i + 1];
        const double target = (u - cumulative_[i]) / h_;
        const double a = 0.5 * (f1 - f0);
        double t;
        if (std::abs(a) < 1e-14 * std::max(1.0, std::abs(f0))) {
            t = f0 > 0.0 ? target / f0 : 0.5;
        } else {
            const double disc = std::max(0.0, f0 * f0 + 4.0 * a * target);
            t = 2.0 * target / (f0 + std::sqrt(disc));
        }
        return std::clamp((static_cast<double>(i) + std::clamp(t, 0.0, 1.0)) * h_, 0.0, 1.0);
    }

private:
    std::pair<std::size_t, double> locate(double x) const noexcept {
        const double s = std::clamp(x, 0.0, 1.0) / h_;
        std::size_t i = std::min(static_cast<std::size_t>(s), cells() - 1);
        return {i, s - static_cast<double>(i)};
    }

    void normalize() {
        for (double& v : values_) v = std::max(v, 0.0);
        cumulative_.assign(values_.size(), 0.0);
        for (std::size_t i = 1; i < values_.size(); ++i) {
            cumulative_[i] = cumulative_[i - 1] + 0.5 * h_ * (values_[i - 1] + values_[i]);
        }
        const double total = cumulative_.back();
        if (!(total > 0.0)) throw PreconditionError("density integrates to zero");
        for (double& v : values_) v /= total;
        for (double& c : cumulative_) c /= total;
    }

    std::vector<double> values_;
    std::vector<double> cumulative_;
    double h_ = 1.0;
};

struct TransferOperatorOptions {
    std::size_t cells = 4096;
    int iterations = 200;
    /// Number of branches summed explicitly for maps with countably many branches.
    std::size_t branch_cutoff = 256;
};

/// Fixed point of the transfer operator
///   (L f)(y) = sum_j f(x_j) / |T'(x_j)|,  x_j = branch_inverse(j, y),
/// found by power iteration on a uniform grid with linear interpolation.
/// Maps with countably many branches contribute the branches beyond the
/// cutoff through `transfer_tail_point(cutoff, y)`: the tail equals the
/// integral of f over [0, tail_point].
template <class Map>
NumericDensity build_invariant_density(const Map& map, TransferOperatorOptions opt = {}) {
    constexpr bool has_tail = requires(const Map& m, double y) { m.transfer_tail_point(std::size_t{}, y); };
    const std::size_t n = opt.cells;
    const double h = 1.0 / static_cast<double>(n);
    struct Preimage {
        std::size_t cell;
        double frac;
        double weight;
    };
    std::vector<std::vector<Preimage>> pre(n + 1);
    std::vector<double> tail_point(n + 1, 0.0);
    const std::size_t branches = map.branch_count().value_or(opt.branch_cutoff);

    for (std::size_t i = 0; i <= n; ++i) {
        const double y = static_cast<double>(i) * h;
        for (std::size_t j = 0; j < branches; ++j) {
            const Interval img = map.branch_image(j);
            if (!img.contains(y)) continue;
            const double x = map.branch_inverse(j, y);
            const double d = std::abs(map.deriv(x));
            if (!std::isfinite(d) || d == 0.0) continue;
            const double s = std::clamp(x, 0.0, 1.0) / h;
            const std::size_t c = std::min(static_cast<std::size_t>(s), n - 1);
            pre[i].push_back({c, s - static_cast<double>(c), 1.0 / d});
        }
        if constexpr (has_tail) {
            tail_point[i] = map.transfer_tail_point(branches, y);
        }
    }

    std::vector<double> f(n + 1, 1.0), g(n + 1, 0.0), cum(n + 1, 0.0);
    for (int it = 0; it < opt.iterations; ++it) {
        if constexpr (has_tail) {
            for (std::size_t i = 1; i <= n; ++i) cum[i] = cum[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
        }
        for (std::size_t i = 0; i <= n; ++i) {
            double acc = 0.0;
            for (const auto& p : pre[i]) {
                acc += p.weight * (f[p.cell] + p.frac * (f[p.cell + 1] - f[p.cell]));
            }
            if constexpr (has_tail) {
                // Integral of f over [0, tail_point].
                const double s = tail_point[i] / h;
                const std::size_t c = std::min(static_cast<std::size_t>(s), n - 1);
                const double t = s - static_cast<double>(c);
                acc += cum[c] + h * t * (f[c] + 0.5 * t * (f[c + 1] - f[c]));
            }
            g[i] = acc;
        }
        double total = 0.0;
        for (std::size_t i = 1; i <= n; ++i) total += 0.5 * h * (g[i - 1] + g[i]);
        for (std::size_t i = 0; i <= n; ++i) f[i] = g[i] / total;
    }
    return NumericDensity(std::move(f));
}

// ---------------------------------------------------------------------------
// Concrete maps
// ---------------------------------------------------------------------------

/// T(x) = 1 - |2x - 1|.
struct TentMap {
    std::string name() const { return "tent"; }
    std::optional<std::size_t> branch_count() const { return 2; }
    std::size_t branch_of(double x) const { return x < 0.5 ? 0 : 1; }
    Interval branch_domain(std::size_t j) const { return j == 0 ? Interval{0.0, 0.5} : Interval{0.5, 1.0}; }
    Interval branch_image(std::size_t) const { return {0.0, 1.0}; }
    double branch_inverse(std::size_t j, double y) const { return j == 0 ? 0.5 * y : 1.0 - 0.5 * y; }
    double eval(double x) const { return x < 0.5 ? 2.0 * x : 2.0 - 2.0 * x; }
    double deriv(double x) const { return x < 0.5 ? 2.0 : -2.0; }
    std::vector<double> singular_points(std::size_t = 0) const { return {0.0, 0.5, 1.0}; }
    double nearest_singular(double x) const { return x < 0.25 ? 0.0 : (x < 0.75 ? 0.5 : 1.0); }
    double distance_to_singular(double x) const { return std::abs(x - nearest_singular(x)); }
    bool continuous_at(double) const { return true; }
    bool derivative_diverges_at(double) const { return false; }
    ExpansionSpec expansion() const { return {1, 2.0}; }
    DensityKind density_kind() const { return DensityKind::analytic; }
    double density(double) const { return 1.0; }
    double cdf(double x) const { return std::clamp(x, 0.0, 1.0); }
    double quantile(double u) const { return u; }
};

/// T(x) = 2x mod 1; T(1) = 1 by left continuity.
struct DoublingMap {
    std::string name() const { return "doubling"; }
    std::optional<std::size_t> branch_count() const { return 2; }
    std::size_t branch_of(double x) const { return x < 0.5 ? 0 : 1; }
    Interval branch_domain(std::size_t j) const { return j == 0 ? Interval{0.0, 0.5} : Interval{0.5, 1.0}; }
    Interval branch_image(std::size_t) const { return {0.0, 1.0}; }
    double branch_inverse(std::size_t j, double y) const { return 0.5 * (y + static_cast<double>(j)); }
    double eval(double x) const { return x < 0.5 ? 2.0 * x : 2.0 * x - 1.0; }
    double deriv(double) const { return 2.0; }
    std::vector<double> singular_points(std::size_t = 0) const { return {0.0, 0.5, 1.0}; }
    double nearest_singular(double x) const { return x < 0.25 ? 0.0 : (x < 0.75 ? 0.5 : 1.0); }
    double distance_to_singular(double x) const { return std::abs(x - nearest_singular(x)); }
    bool continuous_at(double a) const { return a != 0.5; }
    bool derivative_diverges_at(double) const { return false; }
    ExpansionSpec expansion() const { return {1, 2.0}; }
    DensityKind density_kind() const { return DensityKind::analytic; }
    double density(double) const { return 1.0; }
    double cdf(double x) const { return std::clamp(x, 0.0, 1.0); }
    double quantile(double u) const { return u; }
};

/// Gauss map T(x) = 1/x - floor(1/x), branches (1/(k+1), 1/k) indexed by j = k - 1.
///
/// The singular set {0} u {1/k} is countable; `singular_points(cutoff)` lists
/// 1/k for k <= cutoff, while distances are computed exactly for every k.
struct GaussMap {
    static constexpr std::size_t default_cutoff = 1'000'000;

    std::string name() const { return "gauss"; }
    std::optional<std::size_t> branch_count() const { return std::nullopt; }
    std::size_t branch_of(double x) const {
        const double k = std::floor(1.0 / x);
        return k < 1.0 ? 0 : static_cast<std::size_t>(std::min(k, 1e18)) - 1;
    }
    Interval branch_domain(std::size_t j) const {
        const double k = static_cast<double>(j + 1);
        return {1.0 / (k + 1.0), 1.0 / k};
    }
    Interval branch_image(std::size_t) const { return {0.0, 1.0}; }
    double branch_inverse(std::size_t j, double y) const { return 1.0 / (static_cast<double>(j + 1) + y); }
    /// Branches k > cutoff map [0,1] into [0, 1/(cutoff + 1/2 + y)]; the
    /// transfer operator contribution of those branches equals the integral
    /// of the density over that interval (midpoint rule in k).
    double transfer_tail_point(std::size_t cutoff, double y) const {
        return 1.0 / (static_cast<double>(cutoff) + 0.5 + y);
    }
    double eval(double x) const {
        const double inv = 1.0 / x;
        return inv - std::floor(inv);
    }
    double deriv(double x) const { return -1.0 / (x * x); }
    std::vector<double> singular_points(std::size_t cutoff = default_cutoff) const {
        std::vector<double> s;
        s.reserve(cutoff + 1);
        s.push_back(0.0);
        for (std::size_t k = cutoff; k >= 1; --k) s.push_back(1.0 / static_cast<double>(k));
        return s;
    }
    double nearest_singular(double x) const {
        if (x <= 0.0) return 0.0;
        const double k = std::floor(1.0 / x);
        if (k < 1.0) return 1.0;
        if (k > 1e15) return 0.0;
        const double lo = 1.0 / (k + 1.0), hi = 1.0 / k;
        double best = (x - lo < hi - x) ? lo : hi;
        // Rounding in 1/x can misplace k by one near a singular point.
        for (double c : {1.0 / (k + 2.0), k > 1.0 ? 1.0 / (k - 1.0) : 1.0}) {
            if (std::abs(x - c) < std::abs(x - best)) best = c;
        }
        return x < std::abs(x - best) ? 0.0 : best;
    }
    double distance_to_singular(double x) const { return std::abs(x - nearest_singular(x)); }
    bool continuous_at(double a) const { return a == 1.0; }
    bool derivative_diverges_at(double a) const { return a == 0.0; }
    ExpansionSpec expansion() const { return {2, 2.0}; }
    DensityKind density_kind() const { return DensityKind::analytic; }
    double density(double x) const { return 1.0 / ((1.0 + x) * std::numbers::ln2); }
    double cdf(double x) const { return std::log2(1.0 + std::clamp(x, 0.0, 1.0)); }
    double quantile(double u) const { return std::exp2(u) - 1.0; }
};

/// Lorenz-like cusp map T(x) = 1 - |2x - 1|^alpha, alpha in (1/2, 1).
///
/// Two full branches with |T'| >= 2 alpha and |T'| ~ |x - 1/2|^(alpha - 1)
/// at the cusp. The invariant density has no closed form and is tabulated
/// from the transfer operator at construction.
class LorenzMap {
public:
    explicit LorenzMap(double alpha = 0.75, TransferOperatorOptions opt = {}) : alpha_(alpha) {
        if (!(alpha > 0.5 && alpha < 1.0)) {
            throw ConfigError("lorenz: alpha must lie in (1/2, 1)");
        }
        density_ = std::make_shared<const NumericDensity>(build_invariant_density(*this, opt));
    }

    double alpha() const noexcept { return alpha_; }

    std::string name() const { return "lorenz:alpha=" + format_alpha(); }
    std::optional<std::size_t> branch_count() const { return 2; }
    std::size_t branch_of(double x) const { return x < 0.5 ? 0 : 1; }
    Interval branch_domain(std::size_t j) const { return j == 0 ? Interval{0.0, 0.5} : Interval{0.5, 1.0}; }
    Interval branch_image(std::size_t) const { return {0.0, 1.0}; }
    double branch_inverse(std::size_t j, double y) const {
        const double w = std::pow(std::max(0.0, 1.0 - y), 1.0 / alpha_);
        return j == 0 ? 0.5 * (1.0 - w) : 0.5 * (1.0 + w);
    }
    double eval(double x) const { return 1.0 - std::pow(std::abs(2.0 * x - 1.0), alpha_); }
    double deriv(double x) const {
        const double u = 2.0 * x - 1.0;
        const double mag = 2.0 * alpha_ * std::pow(std::abs(u), alpha_ - 1.0);
        return u < 0.0 ? mag : (u > 0.0 ? -mag : std::numeric_limits<double>::infinity());
    }
    std::vector<double> singular_points(std::size_t = 0) const { return {0.0, 0.5, 1.0}; }
    double nearest_singular(double x) const { return x < 0.25 ? 0.0 : (x < 0.75 ? 0.5 : 1.0); }
    double distance_to_singular(double x) const { return std::abs(x - nearest_singular(x)); }
    bool continuous_at(double) const { return true; }
    bool derivative_diverges_at(double a) const { return a == 0.5; }
    ExpansionSpec expansion() const { return {1, 2.0 * alpha_}; }
    DensityKind density_kind() const { return DensityKind::numeric; }
    double density(double x) const { return density_ ? (*density_)(x) : 1.0; }
    double cdf(double x) const { return density_ ? density_->cdf(x) : std::clamp(x, 0.0, 1.0); }
    double quantile(double u) const { return density_ ? density_->quantile(u) : u; }
    const NumericDensity* numeric_density() const noexcept { return density_.get(); }

private:
    std::string format_alpha() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", alpha_);
        return buf;
    }

    double alpha_;
    std::shared_ptr<const NumericDensity> density_;
};

/// Map given by a branch table: on [b_j, b_{j+1}] T is the polynomial
/// sum_i c_{j,i} x^i. Each branch must be strictly monotone with values in [0,1].
class PolynomialMap {
public:
    PolynomialMap(std::string label, std::vector<double> breakpoints, std::vector<std::vector<double>> coefficients,
                  std::optional<double> lambda_min = std::nullopt, TransferOperatorOptions opt = {})
        : label_(std::move(label)), breaks_(std::move(breakpoints)), coeffs_(std::move(coefficients)) {
        validate();
        lambda_min_ = lambda_min.value_or(measured_min_slope());
        density_ = std::make_shared<const NumericDensity>(build_invariant_density(*this, opt));
    }

    /// Reads {"breakpoints": [...], "coefficients": [[c0, c1, ...], ...], "lambda_min": optional}.
    static PolynomialMap from_json(const nlohmann::json& j, std::string label = "custom") {
        try {
            std::optional<double> lm;
            if (j.contains("lambda_min")) lm = j.at("lambda_min").get<double>();
            return PolynomialMap(std::move(label), j.at("breakpoints").get<std::vector<double>>(),
                                 j.at("coefficients").get<std::vector<std::vector<double>>>(), lm);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("custom map table: ") + e.what());
        }
    }

    static PolynomialMap from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open custom map table: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("custom map table " + path + ": " + e.what());
        }
        return from_json(j, "custom:" + path);
    }

    std::string name() const { return label_; }
    std::optional<std::size_t> branch_count() const { return coeffs_.size(); }
    std::size_t branch_of(double x) const {
        auto it = std::upper_bound(breaks_.begin() + 1, breaks_.end() - 1, x);
        return static_cast<std::size_t>(std::distance(breaks_.begin() + 1, it));
    }
    Interval branch_domain(std::size_t j) const { return {breaks_[j], breaks_[j + 1]}; }
    Interval branch_image(std::size_t j) const {
        const double a = poly(j, breaks_[j]), b = poly(j, breaks_[j + 1]);
        return {std::min(a, b), std::max(a, b)};
    }
    double branch_inverse(std::size_t j, double y) const {
        double lo = breaks_[j], hi = breaks_[j + 1];
        const bool increasing = poly(j, hi) > poly(j, lo);
        for (int it = 0; it < 100 && hi - lo > 1e-17; ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((poly(j, mid) < y) == increasing) lo = mid; else hi = mid;
        }
        return 0.5 * (lo + hi);
    }
    double eval(double x) const { return std::clamp(poly(branch_of(x), x), 0.0, 1.0); }
    double deriv(double x) const { return dpoly(branch_of(x), x); }
    std::vector<double> singular_points(std::size_t = 0) const { return breaks_; }
    double nearest_singular(double x) const {
        double best = breaks_.front();
        for (double b : breaks_) if (std::abs(b - x) < std::abs(best - x)) best = b;
        return best;
    }
    double distance_to_singular(double x) const { return std::abs(x - nearest_singular(x)); }
    bool continuous_at(double a) const {
        auto it = std::find(breaks_.begin(), breaks_.end(), a);
        if (it == breaks_.begin() || it == breaks_.end() - 1 || it == breaks_.end()) return true;
        const auto j = static_cast<std::size_t>(std::distance(breaks_.begin(), it));
        return std::abs(poly(j - 1, a) - poly(j, a)) < 1e-12;
    }
    bool derivative_diverges_at(double) const { return false; }
    ExpansionSpec expansion() const { return {1, lambda_min_}; }
    DensityKind density_kind() const { return DensityKind::numeric; }
    double density(double x) const { return (*density_)(x); }
    double cdf(double x) const { return density_->cdf(x); }
    double quantile(double u) const { return density_->quantile(u); }

private:
    double poly(std::size_t j, double x) const {
        double acc = 0.0;
        const auto& c = coeffs_[j];
        for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
        return acc;
    }
    double dpoly(std::size_t j, double x) const {
        double acc = 0.0;
        const auto& c = coeffs_[j];
        for (std::size_t i = c.size(); i-- > 1;) acc = acc * x + static_cast<double>(i) * c[i];
        return acc;
    }

    void validate() const {
        if (breaks_.size() < 2 || breaks_.front() != 0.0 || breaks_.back() != 1.0) {
            throw ConfigError("custom map: breakpoints must start at 0 and end at 1");
        }
        if (coeffs_.size() != breaks_.size() - 1) {
            throw ConfigError("custom map: need one coefficient list per branch");
        }
        for (std::size_t j = 0; j + 1 < breaks_.size(); ++j) {
            if (!(breaks_[j] < breaks_[j + 1])) throw ConfigError("custom map: breakpoints must increase");
            if (coeffs_[j].empty()) throw ConfigError("custom map: empty coefficient list");
            constexpr int samples = 256;
            const double a = breaks_[j], b = breaks_[j + 1];
            const double s0 = dpoly(j, a + 0.5 * (b - a));
            for (int i = 0; i <= samples; ++i) {
                const double x = a + (b - a) * i / samples;
                const double v = poly(j, x);
                if (v < -1e-12 || v > 1.0 + 1e-12) throw ConfigError("custom map: branch leaves [0,1]");
                if (dpoly(j, x) * s0 <= 0.0) throw ConfigError("custom map: branch is not strictly monotone");
            }
        }
    }

    double measured_min_slope() const {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j + 1 < breaks_.size(); ++j) {
            for (int i = 0; i <= 256; ++i) {
                const double x = breaks_[j] + (breaks_[j + 1] - breaks_[j]) * i / 256.0;
                m = std::min(m, std::abs(dpoly(j, x)));
            }
        }
        return m;
    }

    std::string label_;
    std::vector<double> breaks_;
    std::vector<std::vector<double>> coeffs_;
    double lambda_min_ = 1.0;
    std::shared_ptr<const NumericDensity> density_;
};

template <class M>
concept IntervalMapModel = requires(const M& m, double x, std::size_t j) {
    { m.name() } -> std::convertible_to<std::string>;
    { m.branch_count() } -> std::same_as<std::optional<std::size_t>>;
    { m.branch_of(x) } -> std::convertible_to<std::size_t>;
    { m.branch_domain(j) } -> std::same_as<Interval>;
    { m.branch_image(j) } -> std::same_as<Interval>;
    { m.branch_inverse(j, x) } -> std::convertible_to<double>;
    { m.eval(x) } -> std::convertible_to<double>;
    { m.deriv(x) } -> std::convertible_to<double>;
    { m.nearest_singular(x) } -> std::convertible_to<double>;
    { m.distance_to_singular(x) } -> std::convertible_to<double>;
    { m.continuous_at(x) } -> std::convertible_to<bool>;
    { m.derivative_diverges_at(x) } -> std::convertible_to<bool>;
    { m.expansion() } -> std::same_as<ExpansionSpec>;
    { m.density(x) } -> std::convertible_to<double>;
    { m.cdf(x) } -> std::convertible_to<double>;
    { m.quantile(x) } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------
// Checked operations
// ---------------------------------------------------------------------------

/// T(x) with domain and singularity checks. Singular points where T is
/// continuous (tent apex, Lorenz cusp) evaluate to the continuous value.
template <IntervalMapModel M>
double evaluate(const M& map, double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("evaluate: x outside [0,1]");
    const double a = map.nearest_singular(x);
    if (detail::within_ulp(x, a) && !map.continuous_at(a)) {
        throw SingularInput("evaluate: " + map.name() + " is discontinuous at x=" + std::to_string(a));
    }
    return std::clamp(map.eval(x), 0.0, 1.0);
}

/// T'(x). Returns a signed infinity at singular points where |T'| diverges
/// (left-limit sign; right-limit at 0) and throws at interior corners.
template <IntervalMapModel M>
double derivative(const M& map, double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("derivative: x outside [0,1]");
    const double a = map.nearest_singular(x);
    if (detail::within_ulp(x, a)) {
        if (map.derivative_diverges_at(a)) {
            const double side = a > 0.0 ? map.deriv(std::nextafter(a, 0.0) - 1e-9) : map.deriv(1e-9);
            return std::copysign(std::numeric_limits<double>::infinity(), side);
        }
        if (a > 0.0 && a < 1.0) {
            throw SingularInput("derivative: " + map.name() + " has a corner at x=" + std::to_string(a));
        }
    }
    return map.deriv(x);
}

/// Draw from the invariant measure by inverse CDF.
template <IntervalMapModel M>
double sample_invariant(const M& map, SplitMix64& rng) {
    return map.quantile(rng.uniform_open());
}

// ---------------------------------------------------------------------------
// Runtime selection by string id
// ---------------------------------------------------------------------------

/// Value-semantic handle over the supported maps; addressable by id:
/// "tent", "doubling", "gauss", "lorenz:alpha=<a>", "custom:<path>".
class IntervalMap {
public:
    using Variant = std::variant<TentMap, DoublingMap, GaussMap, LorenzMap, PolynomialMap>;

    template <IntervalMapModel M>
        requires(!std::same_as<std::remove_cvref_t<M>, IntervalMap>)
    IntervalMap(M m) : impl_(std::move(m)) {}  // NOLINT(google-explicit-constructor)

    static IntervalMap from_id(const std::string& id) {
        if (id == "tent") return TentMap{};
        if (id == "doubling") return DoublingMap{};
        if (id == "gauss") return GaussMap{};
        if (id == "lorenz") return LorenzMap{};
        if (id.rfind("lorenz:", 0) == 0) {
            const std::string rest = id.substr(7);
            const std::string key = "alpha=";
            if (rest.rfind(key, 0) != 0) throw ConfigError("unknown map id: " + id);
            double alpha = 0.0;
            try {
                std::size_t used = 0;
                alpha = std::stod(rest.substr(key.size()), &used);
                if (used != rest.size() - key.size()) throw ConfigError("bad alpha in map id: " + id);
            } catch (const std::logic_error&) {
                throw ConfigError("bad alpha in map id: " + id);
            }
            return LorenzMap{alpha};
        }
        if (id.rfind("custom:", 0) == 0) return PolynomialMap::from_file(id.substr(7));
        throw ConfigError("unknown map id: " + id);
    }

    const Variant& variant() const noexcept { return impl_; }

    template <class F>
    decltype(auto) visit(F&& f) const {
        return std::visit(std::forward<F>(f), impl_);
    }

    /// True for maps whose orbits are realised on exact binary digit streams.
    bool is_dyadic() const noexcept {
        return std::holds_alternative<TentMap>(impl_) || std::holds_alternative<DoublingMap>(impl_);
    }

    std::string name() const { return visit([](const auto& m) { return m.name(); }); }
    std::optional<std::size_t> branch_count() const { return visit([](const auto& m) { return m.branch_count(); }); }
    std::size_t branch_of(double x) const { return visit([x](const auto& m) { return m.branch_of(x); }); }
    Interval branch_domain(std::size_t j) const { return visit([j](const auto& m) { return m.branch_domain(j); }); }
    Interval branch_image(std::size_t j) const { return visit([j](const auto& m) { return m.branch_image(j); }); }
    double branch_inverse(std::size_t j, double y) const {
        return visit([j, y](const auto& m) { return m.branch_inverse(j, y); });
    }
    double eval(double x) const { return visit([x](const auto& m) { return m.eval(x); }); }
    double deriv(double x) const { return visit([x](const auto& m) { return m.deriv(x); }); }
    std::vector<double> singular_points(std::size_t cutoff = GaussMap::default_cutoff) const {
        return visit([cutoff](const auto& m) { return m.singular_points(cutoff); });
    }
    double nearest_singular(double x) const { return visit([x](const auto& m) { return m.nearest_singular(x); }); }
    double distance_to_singular(double x) const {
        return visit([x](const auto& m) { return m.distance_to_singular(x); });
    }
    bool continuous_at(double a) const { return visit([a](const auto& m) { return m.continuous_at(a); }); }
    bool derivative_diverges_at(double a) const {
        return visit([a](const auto& m) { return m.derivative_diverges_at(a); });
    }
    ExpansionSpec expansion() const { return visit([](const auto& m) { return m.expansion(); }); }
    DensityKind density_kind() const { return visit([](const auto& m) { return m.density_kind(); }); }
    double density(double x) const { return visit([x](const auto& m) { return m.density(x); }); }
    double cdf(double x) const { return visit([x](const auto& m) { return m.cdf(x); }); }
    double quantile(double u) const { return visit([u](const auto& m) { return m.quantile(u); }); }

private:
    Variant impl_;
};

} // namespace recurlab
