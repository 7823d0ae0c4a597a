#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <utility>
#include <numbers>
#include <variant>

#include "errors.hpp"
#include "interval_maps.hpp"
#include "rng.hpp"

namespace recurlab {

/// Minimal interface every orbit generator exposes to the statistics code.
template <class S>
concept DynamicalSystem = requires(const S& sys, typename S::state_type& st, const typename S::point_type& p) {
    typename S::point_type;
    typename S::state_type;
    { sys.position(st) } -> std::convertible_to<typename S::point_type>;
    sys.advance(st);
    { sys.distance(p, p) } -> std::convertible_to<double>;
};

/// A dynamical system with an invariant measure we can sample and integrate over balls.
template <class S>
concept MeasuredSystem = DynamicalSystem<S> && requires(const S& sys, SplitMix64& rng,
                                                        const typename S::point_type& p, double rho) {
    { sys.sample(rng) } -> std::same_as<typename S::state_type>;
    { sys.ball_measure(p, rho) } -> std::convertible_to<double>;
    { sys.diameter() } -> std::convertible_to<double>;
    { sys.label() } -> std::convertible_to<std::string>;
};

/// Orbits that can report ln|T'| along the way.
template <class S>
concept DifferentiableSystem = DynamicalSystem<S> && requires(const S& sys, const typename S::state_type& st) {
    { sys.log_expansion(st) } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------
// Binary digit streams for the dyadic maps
// ---------------------------------------------------------------------------

/// Exact rational p/q in [0,1).
struct Rational {
    std::uint64_t num = 0;
    std::uint64_t den = 1;
};

/// Infinite binary expansion 0.b1 b2 b3 ... consumed one digit per step.
///
/// A 64-digit window holds b_{k+1..k+64}; `buffer_` holds the next digits.
/// Digits come from the RNG, from long division of a rational, or from the
/// exact bits of a double followed by pseudo-random completion.
class DigitStream {
public:
    static DigitStream random(std::uint64_t seed) { return DigitStream(RandomDigits{SplitMix64(seed)}); }

    static DigitStream rational(Rational q) {
        if (q.den == 0 || q.num >= q.den || q.den > (std::uint64_t{1} << 62)) {
            throw DomainError("digit stream: need 0 <= p/q < 1 with q <= 2^62");
        }
        return DigitStream(RationalDigits{q.num, q.den});
    }

    /// The exact binary digits of x followed by pseudo-random digits, i.e. a
    /// real within one ulp of x; the completion is seeded from x's bits.
    /// x = 1 is represented as 0.111...
    static DigitStream from_double(double x) {
        if (!(x >= 0.0 && x <= 1.0)) throw DomainError("digit stream: x outside [0,1]");
        if (x == 1.0) return DigitStream(RationalDigits{1, 1});
        DoubleDigits d;
        d.rng = SplitMix64(SplitMix64::mix(std::bit_cast<std::uint64_t>(x) ^ 0xD1B54A32D192ED03ULL));
        if (x > 0.0) {
            int e = 0;
            const double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
            d.mantissa = static_cast<std::uint64_t>(std::ldexp(m, 53));
            d.last_digit = 53 - e;  // x = mantissa * 2^-last_digit
        }
        return DigitStream(std::move(d));
    }

    /// Value of the current point, optionally with every digit complemented.
    double value(bool complemented = false) const noexcept {
        const std::uint64_t w = complemented ? ~window_ : window_;
        return static_cast<double>(w) * 0x1.0p-64;
    }

    bool leading_digit() const noexcept { return (window_ >> 63) != 0; }

    /// Drops b_{k+1}; returns it.
    bool shift() {
        const bool out = leading_digit();
        window_ = (window_ << 1) | (buffer_ >> 63);
        buffer_ <<= 1;
        if (--buffered_ == 0) {
            buffer_ = next_word();
            buffered_ = 64;
        }
        return out;
    }

private:
    struct RandomDigits {
        SplitMix64 rng;
        std::uint64_t next() { return rng(); }
    };
    struct RationalDigits {
        std::uint64_t num;
        std::uint64_t den;
        std::uint64_t next() {
            if (num == den) return ~std::uint64_t{0};
            std::uint64_t w = 0;
            for (int i = 0; i < 64; ++i) {
                num <<= 1;
                const bool bit = num >= den;
                if (bit) num -= den;
                w = (w << 1) | static_cast<std::uint64_t>(bit);
            }
            return w;
        }
    };
    struct DoubleDigits {
        std::uint64_t mantissa = 0;
        int last_digit = 0;
        int emitted = 0;
        SplitMix64 rng;
        std::uint64_t next() {
            std::uint64_t w = 0;
            std::uint64_t random = 0;
            int random_left = 0;
            for (int i = 0; i < 64; ++i) {
                const int pos = ++emitted;  // digit b_pos has weight 2^-pos
                bool bit;
                if (pos <= last_digit) {
                    const int shift = last_digit - pos;
                    bit = shift < 53 && ((mantissa >> shift) & 1U);
                } else {
                    if (random_left == 0) {
                        random = rng();
                        random_left = 64;
                    }
                    bit = (random >> 63) != 0;
                    random <<= 1;
                    --random_left;
                }
                w = (w << 1) | static_cast<std::uint64_t>(bit);
            }
            return w;
        }
    };
    using Source = std::variant<RandomDigits, RationalDigits, DoubleDigits>;

    explicit DigitStream(Source src) : source_(std::move(src)) {
        window_ = next_word();
        buffer_ = next_word();
        buffered_ = 64;
    }

    std::uint64_t next_word() {
        return std::visit([](auto& s) { return s.next(); }, source_);
    }

    std::uint64_t window_ = 0;
    std::uint64_t buffer_ = 0;
    unsigned buffered_ = 64;
    Source source_;
};

/// Orbit state of a dyadic map: digit stream plus the tent fold parity.
struct DyadicState {
    DigitStream digits;
    bool folded = false;  // tent: T^k x has digits b_{k+j} XOR b_k
};

/// Tent or doubling map iterated exactly on binary digits.
///
/// Doubling: T^k x = 0.b_{k+1} b_{k+2} ...
/// Tent:     T^k x = 0.(b_{k+1}^b_k)(b_{k+2}^b_k) ...
class DyadicSystem {
public:
    using point_type = double;
    using state_type = DyadicState;

    explicit DyadicSystem(bool tent) : tent_(tent) {}

    bool is_tent() const noexcept { return tent_; }
    std::string label() const { return tent_ ? "tent" : "doubling"; }

    state_type start(double x) const { return {DigitStream::from_double(x), false}; }
    state_type start(Rational q) const { return {DigitStream::rational(q), false}; }
    state_type sample(SplitMix64& rng) const { return {DigitStream::random(rng()), false}; }

    double position(const state_type& s) const noexcept { return s.digits.value(tent_ && s.folded); }

    void advance(state_type& s) const {
        const bool out = s.digits.shift();
        if (tent_) s.folded = out;
    }

    /// Branch index of the current point: its leading binary digit (after folding).
    std::size_t symbol(const state_type& s) const noexcept {
        return static_cast<std::size_t>(s.digits.leading_digit() != (tent_ && s.folded));
    }

    double log_expansion(const state_type&) const noexcept { return std::numbers::ln2; }
    double distance(double a, double b) const noexcept { return std::abs(a - b); }
    double diameter() const noexcept { return 1.0; }
    double ball_measure(double x, double rho) const noexcept {
        return std::clamp(x + rho, 0.0, 1.0) - std::clamp(x - rho, 0.0, 1.0);
    }

private:
    bool tent_;
};

/// Interval map iterated in binary64.
template <IntervalMapModel Map>
class MapSystem {
public:
    using point_type = double;
    using state_type = double;

    /// Derivative queries closer than this to the singular set abort the orbit.
    static constexpr double singular_tolerance = 1e-14;

    explicit MapSystem(Map map) : map_(std::move(map)) {}

    const Map& map() const noexcept { return map_; }
    std::string label() const { return map_.name(); }

    state_type start(double x) const {
        if (!(x >= 0.0 && x <= 1.0)) throw DomainError("start: x outside [0,1]");
        return x;
    }
    state_type sample(SplitMix64& rng) const { return map_.quantile(rng.uniform_open()); }

    double position(const state_type& x) const noexcept { return x; }

    /// Aborts only where T itself is undefined. Near-singular iterates are
    /// frequent for Gauss (the points 1/k crowd at 0) and harmless for
    /// distance statistics; `log_expansion` applies the 1e-14 rule.
    void advance(state_type& x) const {
        try {
            x = evaluate(map_, x);
        } catch (const SingularInput&) {
            throw SingularOrbit(map_.name() + ": orbit reached a discontinuity at x=" + std::to_string(x));
        }
    }

    std::size_t symbol(const state_type& x) const { return map_.branch_of(x); }

    double log_expansion(const state_type& x) const {
        if (map_.distance_to_singular(x) < singular_tolerance) {
            throw SingularOrbit(map_.name() + ": orbit reached the singular set at x=" + std::to_string(x));
        }
        return std::log(std::abs(map_.deriv(x)));
    }

    double distance(double a, double b) const noexcept { return std::abs(a - b); }
    double diameter() const noexcept { return 1.0; }
    double ball_measure(double x, double rho) const {
        return map_.cdf(std::clamp(x + rho, 0.0, 1.0)) - map_.cdf(std::clamp(x - rho, 0.0, 1.0));
    }

private:
    Map map_;
};

/// Calls fn with the orbit generator appropriate for `map`: exact digit
/// streams for tent/doubling, binary64 iteration otherwise.
template <class F>
decltype(auto) with_interval_system(const IntervalMap& map, F&& fn) {
    return std::visit(
        [&](const auto& m) -> decltype(auto) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, TentMap>) {
                return fn(DyadicSystem(true));
            } else if constexpr (std::is_same_v<M, DoublingMap>) {
                return fn(DyadicSystem(false));
            } else {
                return fn(MapSystem<M>(m));
            }
        },
        map.variant());
}

} // namespace recurlab
