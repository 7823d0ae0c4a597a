#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "stats.hpp"
#include "systems.hpp"

namespace recurlab {

/// Keeps the r smallest (distance, time) pairs of a stream, sorted by
/// distance; ties keep the earlier time first.
class RthMinTracker {
public:
    struct Entry {
        double distance;
        std::uint64_t time;
    };

    explicit RthMinTracker(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw PreconditionError("RthMinTracker: capacity must be >= 1");
        entries_.reserve(capacity_);
    }

    /// Returns true when the kept set changed.
    bool feed(double distance, std::uint64_t time) {
        if (entries_.size() == capacity_ && !(distance < entries_.back().distance)) return false;
        const auto pos = std::upper_bound(entries_.begin(), entries_.end(), distance,
                                          [](double d, const Entry& e) { return d < e.distance; });
        if (entries_.size() == capacity_) entries_.pop_back();
        entries_.insert(pos, Entry{distance, time});
        return true;
    }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool full() const noexcept { return entries_.size() == capacity_; }
    std::span<const Entry> entries() const noexcept { return entries_; }

    /// r-th smallest so far, +inf until r values have been fed.
    double rth() const noexcept {
        return full() ? entries_.back().distance : std::numeric_limits<double>::infinity();
    }

private:
    std::size_t capacity_;
    std::vector<Entry> entries_;
};

/// (|ln d| - c ln n) / ln ln n; NaN when undefined (n < 3 or d infinite).
inline double log_law_statistic(double d, std::uint64_t n, double dim_coeff) {
    if (n < 3 || !(d < std::numeric_limits<double>::infinity())) return std::numeric_limits<double>::quiet_NaN();
    const double ln_n = std::log(static_cast<double>(n));
    return (std::abs(std::log(d)) - dim_coeff * ln_n) / std::log(ln_n);
}

struct LogLawCheckpoint {
    std::uint64_t n = 0;
    double d = std::numeric_limits<double>::infinity();
    double lambda = std::numeric_limits<double>::quiet_NaN();
    /// Max of the statistic over (previous checkpoint, n]. The statistic
    /// decreases between tracker updates once n >= 16, so it is evaluated at
    /// update times, at the first step of the interval, and at n.
    double peak_lambda = std::numeric_limits<double>::quiet_NaN();
};

struct LogLawSeries {
    std::size_t r = 1;
    double dim_coeff = 1.0;
    std::vector<LogLawCheckpoint> checkpoints;
};

/// ceil(n_start * growth^i) for i = 0, 1, ... below n_max, then n_max.
inline std::vector<std::uint64_t> geometric_checkpoints(std::uint64_t n_start, std::uint64_t n_max,
                                                        double growth = 1.25) {
    if (n_start < 1 || n_start > n_max) throw PreconditionError("checkpoints: need 1 <= n_start <= n_max");
    if (!(growth > 1.0)) throw PreconditionError("checkpoints: growth must exceed 1");
    std::vector<std::uint64_t> grid;
    for (int i = 0;; ++i) {
        const double v = std::ceil(static_cast<double>(n_start) * std::pow(growth, i));
        if (v >= static_cast<double>(n_max)) break;
        const auto n = static_cast<std::uint64_t>(v);
        if (grid.empty() || n > grid.back()) grid.push_back(n);
    }
    grid.push_back(n_max);
    return grid;
}

namespace detail {

inline void check_grid(std::span<const std::uint64_t> grid, std::uint64_t n_max, std::size_t r) {
    if (r == 0) throw PreconditionError("r must be >= 1");
    if (grid.empty()) throw PreconditionError("checkpoint grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < r + 1 || grid[i] > n_max) throw PreconditionError("checkpoint outside [r+1, n_max]");
        if (i > 0 && grid[i] <= grid[i - 1]) throw PreconditionError("checkpoint grid not strictly increasing");
    }
}

template <class Sys>
std::vector<LogLawSeries> track(const Sys& sys, const typename Sys::point_type& target,
                                typename Sys::state_type orbit, std::uint64_t n_max,
                                std::span<const std::size_t> rs, std::span<const std::uint64_t> grid,
                                double dim_coeff) {
    if (rs.empty()) throw PreconditionError("no r values to track");
    for (std::size_t r : rs) check_grid(grid, n_max, r);
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<LogLawSeries> out;
    std::vector<RthMinTracker> trackers;
    std::vector<double> peaks(rs.size(), nan);
    for (std::size_t r : rs) {
        out.push_back({r, dim_coeff, {}});
        out.back().checkpoints.reserve(grid.size());
        trackers.emplace_back(r);
    }
    const auto raise = [](double& peak, double v) {
        if (!std::isnan(v) && (std::isnan(peak) || v > peak)) peak = v;
    };
    std::size_t next = 0;
    std::uint64_t interval_start = 1;
    for (std::uint64_t k = 1; next < grid.size(); ++k) {
        sys.advance(orbit);
        const double d = sys.distance(target, sys.position(orbit));
        const bool finite = d < std::numeric_limits<double>::infinity();
        const bool at_checkpoint = k == grid[next];
        // Below 16 the statistic is not monotone between updates; at the
        // first step of an interval it is the interval's running maximum.
        const bool always = k < 16 || k == interval_start;
        for (std::size_t i = 0; i < rs.size(); ++i) {
            auto& tr = trackers[i];
            const bool changed = finite && tr.feed(d, k);
            if ((changed || always) && tr.full()) raise(peaks[i], log_law_statistic(tr.rth(), k, dim_coeff));
            if (at_checkpoint) {
                const double lam = log_law_statistic(tr.rth(), k, dim_coeff);
                raise(peaks[i], lam);
                out[i].checkpoints.push_back({k, tr.rth(), lam, peaks[i]});
                peaks[i] = nan;
            }
        }
        if (at_checkpoint) {
            ++next;
            interval_start = k + 1;
        }
    }
    return out;
}

} // namespace detail

/// r-th minimum of d(x, T^k y), k = 1..n, recorded at each checkpoint.
/// `dim_coeff` is 1 for interval maps and 1/2 for billiards.
template <DynamicalSystem Sys>
LogLawSeries track_hitting(const Sys& sys, const typename Sys::point_type& x, typename Sys::state_type y,
                           std::uint64_t n_max, std::size_t r, std::span<const std::uint64_t> grid,
                           double dim_coeff) {
    const std::size_t rs[] = {r};
    return std::move(detail::track(sys, x, std::move(y), n_max, rs, grid, dim_coeff).front());
}

/// One orbit pass serving several r at once; series come back in the order of `rs`.
template <DynamicalSystem Sys>
std::vector<LogLawSeries> track_hitting(const Sys& sys, const typename Sys::point_type& x,
                                        typename Sys::state_type y, std::uint64_t n_max,
                                        std::span<const std::size_t> rs, std::span<const std::uint64_t> grid,
                                        double dim_coeff) {
    return detail::track(sys, x, std::move(y), n_max, rs, grid, dim_coeff);
}

/// Same as track_hitting with y = x.
template <DynamicalSystem Sys>
LogLawSeries track_recurrence(const Sys& sys, const typename Sys::state_type& x, std::uint64_t n_max,
                              std::size_t r, std::span<const std::uint64_t> grid, double dim_coeff) {
    const std::size_t rs[] = {r};
    const typename Sys::point_type target = sys.position(x);
    return std::move(detail::track(sys, target, x, n_max, rs, grid, dim_coeff).front());
}

template <DynamicalSystem Sys>
std::vector<LogLawSeries> track_recurrence(const Sys& sys, const typename Sys::state_type& x, std::uint64_t n_max,
                                           std::span<const std::size_t> rs, std::span<const std::uint64_t> grid,
                                           double dim_coeff) {
    const typename Sys::point_type target = sys.position(x);
    return detail::track(sys, target, x, n_max, rs, grid, dim_coeff);
}

struct LimsupEstimate {
    double value = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t n_min = 0;
    std::vector<double> per_orbit;
};

namespace detail {

inline double series_limsup(const LogLawSeries& series, std::uint64_t n_min) {
    double best = std::numeric_limits<double>::quiet_NaN();
    bool first = true;
    bool any = false;
    for (const auto& c : series.checkpoints) {
        if (c.n < n_min) continue;
        any = true;
        // The first qualifying peak may cover times below n_min.
        const double v = first ? c.lambda : c.peak_lambda;
        first = false;
        if (!std::isnan(v) && (std::isnan(best) || v > best)) best = v;
    }
    if (!any) throw EmptyError("limsup_estimate: no checkpoint at or beyond n_min");
    return best;
}

} // namespace detail

/// Max of the statistic over n >= n_min, taken at the checkpoints and at every
/// tracker update in between. Exact over n when n_min is itself a checkpoint.
inline LimsupEstimate limsup_estimate(const LogLawSeries& series, std::uint64_t n_min) {
    const double v = detail::series_limsup(series, n_min);
    return {v, n_min, {v}};
}

/// Per-orbit estimates in orbit order; `value` is their median.
inline LimsupEstimate limsup_estimate(std::span<const LogLawSeries> orbits, std::uint64_t n_min) {
    if (orbits.empty()) throw EmptyError("limsup_estimate: no orbits");
    LimsupEstimate out{0.0, n_min, {}};
    out.per_orbit.reserve(orbits.size());
    for (const auto& s : orbits) out.per_orbit.push_back(detail::series_limsup(s, n_min));
    out.value = stats::median(out.per_orbit);
    return out;
}

/// First k in [1, n_max] with d(x, T^k x) < rho. An upper bound for the
/// return time of the ball B(x, rho) to itself.
template <DynamicalSystem Sys>
std::optional<std::uint64_t> min_return_time(const Sys& sys, typename Sys::state_type x, double rho,
                                             std::uint64_t n_max) {
    if (!(rho > 0.0)) throw PreconditionError("min_return_time: rho must be positive");
    const typename Sys::point_type target = sys.position(x);
    for (std::uint64_t k = 1; k <= n_max; ++k) {
        sys.advance(x);
        if (sys.distance(target, sys.position(x)) < rho) return k;
    }
    return std::nullopt;
}

struct DiophantinePoint {
    double rho;
    std::optional<std::uint64_t> tau;
};

struct DiophantineProfile {
    std::vector<DiophantinePoint> points;
    /// Least-squares slope of tau against |ln rho| over radii with a witness.
    std::optional<double> slope;
};

/// min_return_time for every radius of a decreasing grid, in one orbit pass.
template <DynamicalSystem Sys>
DiophantineProfile diophantine_profile(const Sys& sys, typename Sys::state_type x,
                                       std::span<const double> rho_grid, std::uint64_t n_max) {
    if (rho_grid.empty()) throw PreconditionError("diophantine_profile: empty radius grid");
    for (std::size_t i = 0; i < rho_grid.size(); ++i) {
        if (!(rho_grid[i] > 0.0)) throw PreconditionError("diophantine_profile: radii must be positive");
        if (i > 0 && !(rho_grid[i] < rho_grid[i - 1])) {
            throw PreconditionError("diophantine_profile: radii must be strictly decreasing");
        }
    }
    DiophantineProfile out;
    for (double rho : rho_grid) out.points.push_back({rho, std::nullopt});
    const typename Sys::point_type target = sys.position(x);
    std::size_t open = 0;
    for (std::uint64_t k = 1; k <= n_max && open < rho_grid.size(); ++k) {
        sys.advance(x);
        const double d = sys.distance(target, sys.position(x));
        while (open < rho_grid.size() && d < rho_grid[open]) out.points[open++].tau = k;
    }
    std::vector<double> xs, ys;
    for (const auto& p : out.points) {
        if (!p.tau) continue;
        xs.push_back(std::abs(std::log(p.rho)));
        ys.push_back(static_cast<double>(*p.tau));
    }
    if (xs.size() >= 2) {
        if (auto fit = stats::least_squares(xs, ys)) out.slope = fit->slope;
    }
    return out;
}

/// Symbolic return time of the cylinder spelled by `word` under a
/// full-branch map: the least k >= 1 with w_{k+1..n} = w_{1..n-k}, or n if
/// none (the word's smallest period, via the prefix function).
template <class Symbol>
std::size_t cylinder_return_time(std::span<const Symbol> word) {
    const std::size_t n = word.size();
    if (n == 0) throw PreconditionError("cylinder_return_time: empty word");
    std::vector<std::size_t> border(n, 0);
    for (std::size_t i = 1; i < n; ++i) {
        std::size_t b = border[i - 1];
        while (b > 0 && word[i] != word[b]) b = border[b - 1];
        if (word[i] == word[b]) ++b;
        border[i] = b;
    }
    return n - border[n - 1];
}

/// First n branch symbols along the orbit of x.
template <DynamicalSystem Sys>
    requires requires(const Sys& s, const typename Sys::state_type& st) {
        { s.symbol(st) } -> std::convertible_to<std::size_t>;
    }
std::vector<std::size_t> itinerary(const Sys& sys, typename Sys::state_type x, std::size_t n) {
    std::vector<std::size_t> word;
    word.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        word.push_back(sys.symbol(x));
        if (i + 1 < n) sys.advance(x);
    }
    return word;
}

} // namespace recurlab
