#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "systems.hpp"

namespace recurlab {

// ---------------------------------------------------------------------------
// Schedules and separation
// ---------------------------------------------------------------------------

/// rho_n = n^-beta (ln n)^-delta, with sigma(rho) modelled as rho^sigma_exponent.
struct RhoSchedule {
    double beta = 1.0;
    double delta = 0.0;
    double sigma_exponent = 1.0;

    void validate() const {
        if (!(beta > 0.0)) throw ConfigError("schedule: beta must be positive");
        if (!(delta >= 0.0)) throw ConfigError("schedule: delta must be non-negative");
        if (!(sigma_exponent > 0.0)) throw ConfigError("schedule: sigma_exponent must be positive");
    }

    /// rho_1 is +inf when delta > 0 (ln 1 = 0).
    double rho(std::uint64_t n) const {
        if (n == 0) throw PreconditionError("schedule: n must be >= 1");
        const double ln_n = std::log(static_cast<double>(n));
        if (n == 1) return delta > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
        return std::exp(-beta * ln_n - delta * std::log(ln_n));
    }

    double sigma_model(std::uint64_t n) const { return std::pow(rho(n), sigma_exponent); }

    /// Exponents (u, u0) bounding n^-u <= rho_n and n^-u <= sigma(rho_n) <= n^-u0
    /// for all n >= n0.
    struct PolyWitness {
        double u;
        double u0;
        std::uint64_t n0;
    };

    PolyWitness poly_witness() const {
        validate();
        const double be = beta * sigma_exponent;
        const double u = be + 1.0, u0 = be / 2.0;
        if (u < beta) throw PreconditionError("schedule: no polynomial witness with u = beta*sigma_exponent + 1");
        // Each bound reads a ln ln n <= b ln n. With x = ln n, ln(x)/x decreases
        // past e, so once ln(x)/x <= b/a there it stays true.
        const auto holds = [&](std::uint64_t n) {
            const double ln_n = std::log(static_cast<double>(n));
            const double lln = std::log(ln_n);
            const double log_rho = -beta * ln_n - delta * lln;
            const double log_sigma = sigma_exponent * log_rho;
            return -u * ln_n <= log_rho && -u * ln_n <= log_sigma && log_sigma <= -u0 * ln_n;
        };
        double x_star = std::numbers::e;
        if (delta > 0.0) {
            const double c = std::min((u - beta) / delta, (u - be) / (delta * sigma_exponent));
            const auto ok = [c](double x) { return std::log(x) / x <= c; };
            if (!ok(x_star)) {
                double lo = x_star, hi = 2.0 * x_star;
                while (!ok(hi)) hi *= 2.0;
                for (int i = 0; i < 100; ++i) {
                    const double mid = 0.5 * (lo + hi);
                    (ok(mid) ? hi : lo) = mid;
                }
                x_star = hi;
            }
        }
        if (x_star > std::log(1e7)) throw PreconditionError("schedule: poly witness threshold beyond 1e7");
        const double last_check = std::max(16.0, std::ceil(std::exp(x_star)) + 1.0);
        std::uint64_t n0 = 3;
        for (std::uint64_t n = 3; n <= static_cast<std::uint64_t>(last_check); ++n) {
            if (!holds(n)) n0 = n + 1;
        }
        return {u, u0, n0};
    }
};

/// s(n) = R ln n and s_hat(n) = eps n, with eps < (1-q)/(2r).
class SepConfig {
public:
    SepConfig(double R, double eps, double q, std::size_t r) : R_(R), eps_(eps), q_(q), r_(r) {
        if (r_ == 0) throw ConfigError("sep: r must be >= 1");
        if (!(R_ > 0.0)) throw ConfigError("sep: R must be positive");
        if (!(q_ > 0.0 && q_ < 1.0)) throw ConfigError("sep: q must lie in (0,1)");
        if (!(eps_ > 0.0 && eps_ < (1.0 - q_) / (2.0 * static_cast<double>(r_)))) {
            throw ConfigError("sep: eps must lie in (0, (1-q)/(2r))");
        }
    }

    /// R = 10, q = 1/2, eps = 0.1 for r <= 2 and (1-q)/(4r) beyond.
    static SepConfig defaults(std::size_t r) {
        const double q = 0.5;
        return SepConfig(10.0, r <= 2 ? 0.1 : (1.0 - q) / (4.0 * static_cast<double>(r)), q, r);
    }

    double R() const noexcept { return R_; }
    double eps() const noexcept { return eps_; }
    double q() const noexcept { return q_; }
    std::size_t r() const noexcept { return r_; }
    double s(std::uint64_t n) const { return R_ * std::log(static_cast<double>(n)); }
    double s_hat(std::uint64_t n) const { return eps_ * static_cast<double>(n); }

private:
    double R_, eps_, q_;
    std::size_t r_;
};

/// Number of gaps k_{j+1} - k_j >= s, j = 0..r-1, with k_0 = 0.
inline std::size_t sep_index(std::span<const std::uint64_t> ks, std::uint64_t n, double s) {
    std::size_t count = 0;
    std::uint64_t prev = 0;
    for (std::size_t j = 0; j < ks.size(); ++j) {
        if (ks[j] <= prev) throw OrderError("sep_index: times must be strictly increasing and >= 1");
        if (static_cast<double>(ks[j] - prev) >= s) ++count;
        prev = ks[j];
    }
    if (!ks.empty() && ks.back() > n) throw OrderError("sep_index: k_r exceeds n");
    return count;
}

/// C(n, k) in 64 bits; throws on overflow.
inline std::uint64_t binomial_coefficient(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 c = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        c = c * (n - k + i) / i;
        if (c > std::numeric_limits<std::uint64_t>::max()) throw DomainError("binomial coefficient overflows 64 bits");
    }
    return static_cast<std::uint64_t>(c);
}

/// #{0 < k_1 < ... < k_r <= n : every gap from k_0 = 0 is >= ceil(s)}.
inline std::uint64_t separated_tuple_count(std::uint64_t n, double s, std::uint64_t r) {
    if (r == 0) return 1;
    const double gd = std::max(std::ceil(s), 1.0);
    if (gd > static_cast<double>(n)) return 0;
    const auto g = static_cast<std::uint64_t>(gd);
    const auto slack = static_cast<long double>(n) - static_cast<long double>(r) * static_cast<long double>(g - 1);
    if (slack < static_cast<long double>(r)) return 0;
    return binomial_coefficient(n - r * (g - 1), r);
}

/// P(Binomial(n, p) >= r), summing whichever tail is shorter in log space.
inline double binomial_oracle(std::uint64_t n, double p, std::uint64_t r) {
    if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("binomial_oracle: p must lie in [0,1]");
    if (r == 0) return 1.0;
    if (r > n || p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    const double dn = static_cast<double>(n);
    const double lp = std::log(p), lq = std::log1p(-p);
    const auto log_pmf = [&](std::uint64_t k) {
        const double dk = static_cast<double>(k);
        return std::lgamma(dn + 1.0) - std::lgamma(dk + 1.0) - std::lgamma(dn - dk + 1.0) + dk * lp + (dn - dk) * lq;
    };
    double sum = 0.0;
    if (static_cast<double>(r) > dn * p) {
        for (std::uint64_t k = r; k <= n; ++k) {
            const double t = std::exp(log_pmf(k));
            sum += t;
            if (t < sum * 1e-18 && static_cast<double>(k) > dn * p) break;
        }
        return std::min(sum, 1.0);
    }
    for (std::uint64_t k = 0; k < r; ++k) sum += std::exp(log_pmf(k));
    return std::clamp(1.0 - sum, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// The series S_r
// ---------------------------------------------------------------------------

enum class SeriesVerdict { divergent, convergent, undecided };

inline std::string to_string(SeriesVerdict v) {
    switch (v) {
    case SeriesVerdict::divergent: return "divergent";
    case SeriesVerdict::convergent: return "convergent";
    case SeriesVerdict::undecided: return "undecided-at-J";
    }
    return "undecided-at-J";
}

struct SeriesResult {
    double partial_sum;
    SeriesVerdict verdict;
};

/// Partial sum of sum_j 2^{rj} sigma(rho_{2^j})^r for j = 1..J with the
/// power-log sigma model, and the analytic verdict for that family.
inline SeriesResult s_r_partial(const RhoSchedule& sched, std::size_t r, std::uint64_t J) {
    sched.validate();
    if (J < 2) throw PreconditionError("s_r_partial: J must be >= 2");
    if (r == 0) throw PreconditionError("s_r_partial: r must be >= 1");
    const double dr = static_cast<double>(r);
    const double be = sched.beta * sched.sigma_exponent;
    const double rate = dr * (1.0 - be) * std::numbers::ln2;
    const double log_power = sched.delta * sched.sigma_exponent * dr;
    // Running log-sum-exp so divergent geometric sums saturate at +inf.
    double log_max = -std::numeric_limits<double>::infinity();
    double scaled = 0.0;
    for (std::uint64_t j = 1; j <= J; ++j) {
        const double dj = static_cast<double>(j);
        const double lt = rate * dj - log_power * std::log(dj * std::numbers::ln2);
        if (lt > log_max) {
            scaled = scaled * std::exp(log_max - lt) + 1.0;
            log_max = lt;
        } else {
            scaled += std::exp(lt - log_max);
        }
    }
    const double sum = std::exp(log_max) * scaled;
    constexpr double tol = 1e-9;
    SeriesVerdict verdict;
    if (std::abs(be - 1.0) <= tol) {
        verdict = log_power <= 1.0 + tol ? SeriesVerdict::divergent : SeriesVerdict::convergent;
    } else {
        verdict = be < 1.0 ? SeriesVerdict::divergent : SeriesVerdict::convergent;
    }
    return {sum, verdict};
}

/// Partial sum for an arbitrary sigma(rho_{2^j}) given by j. The verdict is a
/// heuristic read from the last half of the terms: a geometric trend decides
/// directly; otherwise the fitted power of j is compared with -1, and values
/// within 0.05 of it are left undecided.
inline SeriesResult s_r_partial(const std::function<double(std::uint64_t)>& sigma_at_level, std::size_t r,
                                std::uint64_t J) {
    if (J < 4) throw PreconditionError("s_r_partial: J must be >= 4 for the general form");
    const double dr = static_cast<double>(r);
    std::vector<double> log_terms;
    log_terms.reserve(J);
    double sum = 0.0;
    for (std::uint64_t j = 1; j <= J; ++j) {
        const double sig = sigma_at_level(j);
        if (!(sig > 0.0 && std::isfinite(sig))) {
            throw DomainError("s_r_partial: sigma at level " + std::to_string(j) + " is not a positive finite number");
        }
        const double lt = dr * (static_cast<double>(j) * std::numbers::ln2 + std::log(sig));
        log_terms.push_back(lt);
        sum += std::exp(lt);
    }
    std::vector<double> js, lnjs, tail;
    for (std::uint64_t j = J / 2; j <= J; ++j) {
        js.push_back(static_cast<double>(j));
        lnjs.push_back(std::log(static_cast<double>(j)));
        tail.push_back(log_terms[j - 1]);
    }
    const auto geo = stats::least_squares(js, tail);
    const auto pw = stats::least_squares(lnjs, tail);
    SeriesVerdict v = SeriesVerdict::undecided;
    if (geo && pw) {
        // A power law j^p has geometric slope about p / j; beyond that the trend is exponential.
        const double scale = std::abs(pw->slope) / js.front() + 1e-3;
        if (geo->slope > scale) v = SeriesVerdict::divergent;
        else if (geo->slope < -scale) v = SeriesVerdict::convergent;
        else if (pw->slope > -0.95) v = SeriesVerdict::divergent;
        else if (pw->slope < -1.05) v = SeriesVerdict::convergent;
    }
    return {sum, v};
}

// ---------------------------------------------------------------------------
// Event families
// ---------------------------------------------------------------------------

/// Marks of one orbit at times k = 1, 2, ...; the orbit is in the target of
/// index n at time k iff mark_k <= threshold(n).
using MarkStream = std::function<double()>;

/// Replays recorded marks; +inf once exhausted.
inline MarkStream recorded_marks(std::vector<double> marks) {
    auto data = std::make_shared<std::vector<double>>(std::move(marks));
    return [data, i = std::size_t{0}]() mutable {
        return i < data->size() ? (*data)[i++] : std::numeric_limits<double>::infinity();
    };
}

enum class FamilyKind { dynamical_hitting, dynamical_recurrence, synthetic_iid };

/// Nested shrinking targets E_{rho_n}: thresholds are non-increasing in n, so
/// membership at n implies membership at every smaller n.
class EventFamily {
public:
    using ThresholdFn = std::function<double(std::uint64_t)>;
    using OrbitFn = std::function<MarkStream(std::uint64_t)>;

    EventFamily(FamilyKind kind, ThresholdFn threshold, ThresholdFn sigma, OrbitFn orbit)
        : kind_(kind), threshold_(std::move(threshold)), sigma_(std::move(sigma)), orbit_(std::move(orbit)) {}

    /// Independent uniform marks; the target at index n has probability p(n).
    static EventFamily synthetic_iid(ThresholdFn p) {
        auto orbit = [](std::uint64_t seed) -> MarkStream {
            return [rng = SplitMix64(seed)]() mutable { return rng.uniform(); };
        };
        ThresholdFn thr = [p](std::uint64_t n) { return std::clamp(p(n), 0.0, 1.0); };
        return EventFamily(FamilyKind::synthetic_iid, thr, thr, orbit);
    }

    /// Marks d(target, T^k w) for w drawn from the invariant measure.
    template <MeasuredSystem Sys>
    static EventFamily hitting(Sys sys, typename Sys::point_type target, RhoSchedule sched) {
        sched.validate();
        auto shared = std::make_shared<const Sys>(std::move(sys));
        auto orbit = [shared, target](std::uint64_t seed) -> MarkStream {
            SplitMix64 rng(seed);
            return [shared, target, st = shared->sample(rng)]() mutable {
                shared->advance(st);
                return shared->distance(target, shared->position(st));
            };
        };
        ThresholdFn thr = [sched](std::uint64_t n) { return sched.rho(n); };
        ThresholdFn sig = [shared, target, sched](std::uint64_t n) {
            return shared->ball_measure(target, std::min(sched.rho(n), shared->diameter()));
        };
        return EventFamily(FamilyKind::dynamical_hitting, thr, sig, orbit);
    }

    /// Marks d(w, T^k w). Sigma falls back to the schedule model.
    template <MeasuredSystem Sys>
    static EventFamily recurrence(Sys sys, RhoSchedule sched) {
        sched.validate();
        auto shared = std::make_shared<const Sys>(std::move(sys));
        auto orbit = [shared](std::uint64_t seed) -> MarkStream {
            SplitMix64 rng(seed);
            auto st = shared->sample(rng);
            const typename Sys::point_type start = shared->position(st);
            return [shared, start, st]() mutable {
                shared->advance(st);
                return shared->distance(start, shared->position(st));
            };
        };
        ThresholdFn thr = [sched](std::uint64_t n) { return sched.rho(n); };
        ThresholdFn sig = [sched](std::uint64_t n) { return sched.sigma_model(n); };
        return EventFamily(FamilyKind::dynamical_recurrence, thr, sig, orbit);
    }

    FamilyKind kind() const noexcept { return kind_; }
    double threshold(std::uint64_t n) const { return threshold_(n); }
    double sigma(std::uint64_t n) const { return sigma_(n); }
    bool member(double mark, std::uint64_t n) const { return mark <= threshold_(n); }
    /// Marks of the orbit with the given seed (use split_seed(master, i) for orbit i).
    MarkStream orbit(std::uint64_t seed) const { return orbit_(seed); }

private:
    FamilyKind kind_;
    ThresholdFn threshold_;
    ThresholdFn sigma_;
    OrbitFn orbit_;
};

/// N^n = #{1 <= k <= n : mark_k <= threshold(n)}.
inline std::uint64_t count_hits(const EventFamily& family, MarkStream marks, std::uint64_t n) {
    if (n == 0) throw PreconditionError("count_hits: n must be >= 1");
    const double thr = family.threshold(n);
    std::uint64_t count = 0;
    for (std::uint64_t k = 1; k <= n; ++k) count += marks() <= thr ? 1 : 0;
    return count;
}

inline std::uint64_t count_hits(const EventFamily& family, std::uint64_t orbit_seed, std::uint64_t n) {
    return count_hits(family, family.orbit(orbit_seed), n);
}

struct BlockHits {
    bool in_A = false;
    bool in_D = false;
};

namespace detail {

/// Decides D_m from the marks of times (2^m, 2^{m+1}]: a greedy chain of hits
/// with consecutive gaps (from k_0 = 0) of at least s_hat(2^{m+1}).
class BlockChain {
public:
    BlockChain(std::uint64_t m, double threshold, double min_gap, std::size_t r)
        : lo_(std::uint64_t{1} << m), threshold_(threshold), min_gap_(min_gap), r_(r) {}

    void observe(std::uint64_t k, double mark) {
        if (k <= lo_ || count_ >= r_ || !(mark <= threshold_)) return;
        if (static_cast<double>(k - last_) >= min_gap_) {
            ++count_;
            last_ = k;
        }
    }
    bool satisfied() const noexcept { return count_ >= r_; }

private:
    std::uint64_t lo_;
    double threshold_;
    double min_gap_;
    std::size_t r_;
    std::uint64_t last_ = 0;
    std::size_t count_ = 0;
};

inline void check_level(std::uint64_t m) {
    if (m < 1) throw PreconditionError("dyadic level m must be >= 1");
    if (m > 40) throw PreconditionError("dyadic level m too large");
}

} // namespace detail

/// A_m: at least r hits at radius rho_{2^m} among times <= 2^{m+1}.
/// D_m: r hits in (2^m, 2^{m+1}] at radius rho_{2^{m+1}}, fully separated at
/// scale s_hat(2^{m+1}).
inline BlockHits dyadic_block_hits(const EventFamily& family, MarkStream marks, std::uint64_t m,
                                   const SepConfig& sep) {
    detail::check_level(m);
    const std::uint64_t lo = std::uint64_t{1} << m, hi = lo << 1;
    const double thr_a = family.threshold(lo);
    detail::BlockChain chain(m, family.threshold(hi), sep.s_hat(hi), sep.r());
    std::size_t a_hits = 0;
    for (std::uint64_t k = 1; k <= hi; ++k) {
        const double mark = marks();
        if (mark <= thr_a) ++a_hits;
        chain.observe(k, mark);
    }
    return {a_hits >= sep.r(), chain.satisfied()};
}

inline BlockHits dyadic_block_hits(const EventFamily& family, std::uint64_t orbit_seed, std::uint64_t m,
                                   const SepConfig& sep) {
    return dyadic_block_hits(family, family.orbit(orbit_seed), m, sep);
}

/// Z = sum_{m=1}^{m_max} 1{D_m}, streaming over times 1..2^{m_max+1}. Each
/// block only needs its own marks, so memory is constant.
inline std::uint64_t z_count(const EventFamily& family, MarkStream marks, std::uint64_t m_max,
                             const SepConfig& sep) {
    detail::check_level(m_max);
    std::uint64_t z = 0;
    std::uint64_t k = 1;
    (void)marks();  // time 1 lies in no block (2^m, 2^{m+1}] with m >= 1
    ++k;
    for (std::uint64_t m = 1; m <= m_max; ++m) {
        const std::uint64_t lo = std::uint64_t{1} << m, hi = lo << 1;
        detail::BlockChain chain(m, family.threshold(hi), sep.s_hat(hi), sep.r());
        for (; k <= hi; ++k) chain.observe(k, marks());
        z += chain.satisfied() ? 1 : 0;
    }
    return z;
}

inline std::uint64_t z_count(const EventFamily& family, std::uint64_t orbit_seed, std::uint64_t m_max,
                             const SepConfig& sep) {
    return z_count(family, family.orbit(orbit_seed), m_max, sep);
}

// ---------------------------------------------------------------------------
// Hit counts along dyadic times
// ---------------------------------------------------------------------------

struct HitCountReport {
    struct Row {
        std::uint64_t orbit_id;
        std::uint64_t n;
        std::uint64_t count;
    };
    std::size_t r = 1;
    std::vector<std::uint64_t> levels;  // n = 2^m for m = 1..m_max
    std::vector<Row> per_orbit;         // orbit-major, then by n
    std::vector<double> fraction_ge_r;  // per level
};

/// N^{2^m} for m = 1..m_max in one pass; a mark at time k counts toward every
/// level n >= k whose threshold it meets, and thresholds shrink with n.
inline std::vector<std::uint64_t> dyadic_hit_counts(const EventFamily& family, MarkStream marks,
                                                    std::uint64_t m_max) {
    detail::check_level(m_max);
    std::vector<double> thr(m_max);
    for (std::uint64_t m = 1; m <= m_max; ++m) thr[m - 1] = family.threshold(std::uint64_t{1} << m);
    std::vector<std::uint64_t> counts(m_max, 0);
    std::size_t first = 0;  // smallest level index with 2^{first+1} >= k
    const std::uint64_t last = std::uint64_t{1} << m_max;
    for (std::uint64_t k = 1; k <= last; ++k) {
        while ((std::uint64_t{1} << (first + 1)) < k) ++first;
        const double mark = marks();
        for (std::size_t j = first; j < m_max && mark <= thr[j]; ++j) ++counts[j];
    }
    return counts;
}

inline HitCountReport hit_count_report(const EventFamily& family, std::uint64_t master_seed, std::uint64_t orbits,
                                       std::uint64_t m_max, std::size_t r, unsigned workers) {
    if (orbits == 0) throw PreconditionError("hit_count_report: need at least one orbit");
    std::vector<std::vector<std::uint64_t>> counts(orbits);
    parallel_for(orbits, workers, [&](std::size_t i) {
        counts[i] = dyadic_hit_counts(family, family.orbit(split_seed(master_seed, i)), m_max);
    });
    HitCountReport rep;
    rep.r = r;
    for (std::uint64_t m = 1; m <= m_max; ++m) rep.levels.push_back(std::uint64_t{1} << m);
    rep.fraction_ge_r.assign(m_max, 0.0);
    for (std::uint64_t i = 0; i < orbits; ++i) {
        for (std::size_t j = 0; j < m_max; ++j) {
            rep.per_orbit.push_back({i, rep.levels[j], counts[i][j]});
            if (counts[i][j] >= r) rep.fraction_ge_r[j] += 1.0;
        }
    }
    for (double& f : rep.fraction_ge_r) f /= static_cast<double>(orbits);
    return rep;
}

// ---------------------------------------------------------------------------
// Monte Carlo estimators
// ---------------------------------------------------------------------------

struct MonteCarloEstimate {
    double p_hat = 0.0;
    double se = 0.0;
    std::uint64_t hits = 0;
    std::uint64_t samples = 0;
    /// Fewer than 25 expected hits: the estimate is reported but unreliable.
    bool insufficient_hits = false;
};

struct GmEstimate : MonteCarloEstimate {
    double sigma = 0.0;
    double sigma_r = 0.0;
    double ratio = 0.0;
};

inline constexpr std::uint64_t min_monte_carlo_samples = 10'000;

namespace detail {

inline void finish(MonteCarloEstimate& e) {
    const double M = static_cast<double>(e.samples);
    e.p_hat = static_cast<double>(e.hits) / M;
    e.se = std::sqrt(e.p_hat * (1.0 - e.p_hat) / M);
    e.insufficient_hits = e.p_hat * M < 25.0;
}

/// Sums pred(i) over i < M in fixed-size chunks; integer sums make the
/// result independent of the worker count.
template <class Pred>
std::uint64_t count_successes(std::uint64_t M, unsigned workers, Pred&& pred) {
    constexpr std::uint64_t chunk = 4096;
    const std::uint64_t chunks = (M + chunk - 1) / chunk;
    std::vector<std::uint64_t> partial(chunks, 0);
    parallel_for(chunks, workers, [&](std::size_t c) {
        std::uint64_t hits = 0;
        const std::uint64_t end = std::min<std::uint64_t>(M, (c + 1) * chunk);
        for (std::uint64_t i = c * chunk; i < end; ++i) hits += pred(i) ? 1 : 0;
        partial[c] = hits;
    });
    std::uint64_t total = 0;
    for (auto h : partial) total += h;
    return total;
}

inline void check_samples(std::uint64_t M) {
    if (M < min_monte_carlo_samples) throw PreconditionError("Monte Carlo estimators need M >= 10^4");
}

} // namespace detail

/// P(d(target, T^{k_j} w) <= rho for every j) for w ~ mu, compared with
/// sigma(rho)^r where sigma is the exact ball measure.
template <MeasuredSystem Sys>
GmEstimate estimate_gm1(const Sys& sys, const typename Sys::point_type& target, std::span<const std::uint64_t> tuple,
                        double rho, std::uint64_t M, std::uint64_t seed, unsigned workers = 1) {
    if (tuple.empty()) throw PreconditionError("estimate_gm1: empty tuple");
    if (!(rho > 0.0)) throw PreconditionError("estimate_gm1: rho must be positive");
    detail::check_samples(M);
    for (std::size_t j = 0; j < tuple.size(); ++j) {
        if (tuple[j] < 1 || (j > 0 && tuple[j] <= tuple[j - 1])) {
            throw OrderError("estimate_gm1: tuple must be strictly increasing and >= 1");
        }
    }
    GmEstimate e;
    e.samples = M;
    e.hits = detail::count_successes(M, workers, [&](std::uint64_t i) {
        auto rng = substream(seed, i);
        auto st = sys.sample(rng);
        std::uint64_t k = 0;
        for (std::uint64_t kj : tuple) {
            for (; k < kj; ++k) sys.advance(st);
            if (!(sys.distance(target, sys.position(st)) <= rho)) return false;
        }
        return true;
    });
    detail::finish(e);
    e.sigma = sys.ball_measure(target, rho);
    e.sigma_r = std::pow(e.sigma, static_cast<double>(tuple.size()));
    e.ratio = e.p_hat / e.sigma_r;
    return e;
}

/// Hitting form: mu(B(target, rho) and T^-k B(target, rho)).
template <MeasuredSystem Sys>
MonteCarloEstimate estimate_mov(const Sys& sys, const typename Sys::point_type& target, std::uint64_t k, double rho,
                                std::uint64_t M, std::uint64_t seed, unsigned workers = 1) {
    if (k == 0) throw PreconditionError("estimate_mov: k must be >= 1");
    if (!(rho > 0.0)) throw PreconditionError("estimate_mov: rho must be positive");
    detail::check_samples(M);
    MonteCarloEstimate e;
    e.samples = M;
    e.hits = detail::count_successes(M, workers, [&](std::uint64_t i) {
        auto rng = substream(seed, i);
        auto st = sys.sample(rng);
        if (!(sys.distance(target, sys.position(st)) <= rho)) return false;
        for (std::uint64_t j = 0; j < k; ++j) sys.advance(st);
        return sys.distance(target, sys.position(st)) <= rho;
    });
    detail::finish(e);
    return e;
}

/// Recurrence form: mu{x : d(x, T^k x) < rho}.
template <MeasuredSystem Sys>
MonteCarloEstimate estimate_mov(const Sys& sys, std::uint64_t k, double rho, std::uint64_t M, std::uint64_t seed,
                                unsigned workers = 1) {
    if (k == 0) throw PreconditionError("estimate_mov: k must be >= 1");
    if (!(rho > 0.0)) throw PreconditionError("estimate_mov: rho must be positive");
    detail::check_samples(M);
    MonteCarloEstimate e;
    e.samples = M;
    e.hits = detail::count_successes(M, workers, [&](std::uint64_t i) {
        auto rng = substream(seed, i);
        auto st = sys.sample(rng);
        const typename Sys::point_type start = sys.position(st);
        for (std::uint64_t j = 0; j < k; ++j) sys.advance(st);
        return sys.distance(start, sys.position(st)) < rho;
    });
    detail::finish(e);
    return e;
}

} // namespace recurlab
