#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace recurlab::billiard {

inline constexpr double half_pi = std::numbers::pi / 2.0;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Collisions with pi/2 - |phi| below this are treated as tangential.
inline constexpr double grazing_guard = 1e-12;
/// Ray parameters below this are the departure point itself.
inline constexpr double departure_guard = 1e-12;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
    friend double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
    friend double norm(Vec2 a) { return std::hypot(a.x, a.y); }
};

inline Vec2 rotate(Vec2 v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct Scatterer {
    Vec2 center;
    double radius = 0.0;

    double perimeter() const noexcept { return two_pi * radius; }
};

/// Collision coordinates: arc length r (counter-clockwise from the +x
/// direction) on scatterer `scatterer`, and angle phi of the outgoing
/// velocity measured from the outward normal of the scatterer.
struct BilliardState {
    std::size_t scatterer = 0;
    double r = 0.0;
    double phi = 0.0;

    friend bool operator==(const BilliardState&, const BilliardState&) = default;
};

/// Time reversal: same boundary point, velocity reflected across the normal.
inline BilliardState reverse(BilliardState s) noexcept {
    s.phi = -s.phi;
    return s;
}

struct Collision {
    BilliardState state;
    double free_path = 0.0;
};

/// Disjoint circular scatterers on the unit torus with finite horizon.
class BilliardTable {
public:
    /// Validates disjointness (over lattice translates in {-1,0,1}^2) and
    /// blocks every rational corridor direction (p,q) with |p|,|q| <= 5.
    BilliardTable(std::vector<Scatterer> scatterers, double horizon_bound)
        : scatterers_(std::move(scatterers)), horizon_(horizon_bound) {
        if (scatterers_.empty()) throw TableError("table has no scatterers");
        if (!(horizon_ > 0.0)) throw TableError("horizon_bound must be positive");
        for (std::size_t i = 0; i < scatterers_.size(); ++i) {
            const auto& s = scatterers_[i];
            if (!(s.radius > 0.0 && s.radius < 0.5)) {
                throw TableError("scatterer " + std::to_string(i) + ": radius must lie in (0, 1/2)");
            }
            scatterers_[i].center = {wrap(s.center.x), wrap(s.center.y)};
        }
        check_disjoint();
        check_corridors();
        offsets_.resize(scatterers_.size() + 1, 0.0);
        for (std::size_t i = 0; i < scatterers_.size(); ++i) {
            offsets_[i + 1] = offsets_[i] + scatterers_[i].perimeter();
        }
        lattice_reach_ = static_cast<int>(std::ceil(horizon_)) + 1;
    }

    /// D1 = (0,0) radius 0.44, D2 = (1/2,1/2) radius 0.22, horizon 2.
    static BilliardTable default_table() {
        return BilliardTable({{{0.0, 0.0}, 0.44}, {{0.5, 0.5}, 0.22}}, 2.0);
    }

    /// {"scatterers": [{"center": [x, y], "radius": r}, ...], "horizon_bound": h}
    static BilliardTable from_json(const nlohmann::json& j) {
        std::vector<Scatterer> sc;
        double h = 0.0;
        try {
            for (const auto& s : j.at("scatterers")) {
                const auto c = s.at("center").get<std::vector<double>>();
                if (c.size() != 2) throw ConfigError("scatterer center must have two coordinates");
                sc.push_back({{c[0], c[1]}, s.at("radius").get<double>()});
            }
            h = j.at("horizon_bound").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("table config: ") + e.what());
        }
        return BilliardTable(std::move(sc), h);
    }

    static BilliardTable from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open table config: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("table config " + path + ": " + e.what());
        }
        return from_json(j);
    }

    nlohmann::json to_json() const {
        nlohmann::json sc = nlohmann::json::array();
        for (const auto& s : scatterers_) sc.push_back({{"center", {s.center.x, s.center.y}}, {"radius", s.radius}});
        return {{"scatterers", sc}, {"horizon_bound", horizon_}};
    }

    const std::vector<Scatterer>& scatterers() const noexcept { return scatterers_; }
    const Scatterer& scatterer(std::size_t i) const { return scatterers_.at(i); }
    double horizon_bound() const noexcept { return horizon_; }
    double total_perimeter() const noexcept { return offsets_.back(); }
    /// Normalising constant of d mu = c cos(phi) dr dphi.
    double measure_constant() const noexcept { return 1.0 / (2.0 * total_perimeter()); }
    /// Arc-length offset of scatterer i in the concatenated boundary.
    double arc_offset(std::size_t i) const { return offsets_.at(i); }
    int lattice_reach() const noexcept { return lattice_reach_; }

    Vec2 boundary_point(const BilliardState& s) const {
        const auto& sc = scatterers_.at(s.scatterer);
        const double theta = s.r / sc.radius;
        return sc.center + sc.radius * Vec2{std::cos(theta), std::sin(theta)};
    }

    Vec2 normal(const BilliardState& s) const {
        const double theta = s.r / scatterers_.at(s.scatterer).radius;
        return {std::cos(theta), std::sin(theta)};
    }

    Vec2 velocity(const BilliardState& s) const { return rotate(normal(s), s.phi); }

private:
    static double wrap(double v) { return v - std::floor(v); }

    void check_disjoint() const {
        for (std::size_t i = 0; i < scatterers_.size(); ++i) {
            for (std::size_t j = i; j < scatterers_.size(); ++j) {
                for (int m = -1; m <= 1; ++m) {
                    for (int n = -1; n <= 1; ++n) {
                        if (i == j && m == 0 && n == 0) continue;
                        const Vec2 d = scatterers_[j].center + Vec2{double(m), double(n)} - scatterers_[i].center;
                        if (norm(d) <= scatterers_[i].radius + scatterers_[j].radius) {
                            std::ostringstream os;
                            os << "scatterers " << i << " and " << j << " overlap (translate " << m << "," << n << ")";
                            throw TableError(os.str());
                        }
                    }
                }
            }
        }
    }

    /// A corridor in lattice direction (p,q) exists iff the scatterer shadows,
    /// projected on the normal and reduced modulo the line spacing
    /// 1/|(p,q)|, leave a gap.
    void check_corridors() const {
        for (int p = 0; p <= 5; ++p) {
            for (int q = -5; q <= 5; ++q) {
                if (std::gcd(p, q) != 1 || (p == 0 && q != 1)) continue;
                const double len = std::hypot(double(p), double(q));
                const Vec2 nrm{-q / len, p / len};
                const double spacing = 1.0 / len;
                std::vector<std::pair<double, double>> shadows;
                bool covered = false;
                for (const auto& s : scatterers_) {
                    if (2.0 * s.radius >= spacing) { covered = true; break; }
                    double c = std::fmod(dot(s.center, nrm), spacing);
                    if (c < 0.0) c += spacing;
                    const double a = c - s.radius, b = c + s.radius;
                    // Split shadows that wrap around the period.
                    if (a < 0.0) {
                        shadows.push_back({a + spacing, spacing});
                        shadows.push_back({0.0, b});
                    } else if (b > spacing) {
                        shadows.push_back({a, spacing});
                        shadows.push_back({0.0, b - spacing});
                    } else {
                        shadows.push_back({a, b});
                    }
                }
                if (covered) continue;
                std::sort(shadows.begin(), shadows.end());
                double reach = 0.0;
                for (const auto& [a, b] : shadows) {
                    if (a > reach) break;
                    reach = std::max(reach, b);
                }
                if (reach < spacing) {
                    std::ostringstream os;
                    os << "open corridor in direction (" << p << "," << q << ")";
                    throw TableError(os.str());
                }
            }
        }
    }

    std::vector<Scatterer> scatterers_;
    double horizon_;
    std::vector<double> offsets_;
    int lattice_reach_ = 3;
};

/// Smallest t > departure_guard with |origin + t v - center| = radius, or +inf.
/// Stable two-branch quadratic formula.
inline double ray_circle(Vec2 origin, Vec2 v, Vec2 center, double radius) {
    const Vec2 w = origin - center;
    const double b = dot(w, v);
    const double c = dot(w, w) - radius * radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::numeric_limits<double>::infinity();
    const double q = -(b + std::copysign(std::sqrt(disc), b));
    double t1 = q, t2 = q != 0.0 ? c / q : q;
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > departure_guard) return t1;
    if (t2 > departure_guard) return t2;
    return std::numeric_limits<double>::infinity();
}

/// Next collision F(s) and the free-flight length, by unfolding the ray over
/// lattice translates within the horizon bound.
inline Collision collision_map(const BilliardTable& table, const BilliardState& s) {
    if (!(std::abs(s.phi) < half_pi - grazing_guard)) {
        throw GrazingCollision("collision_map: |phi| within grazing guard of pi/2");
    }
    const Vec2 q = table.boundary_point(s);
    const Vec2 v = table.velocity(s);
    const int reach = table.lattice_reach();
    const double horizon = table.horizon_bound();

    double best = std::numeric_limits<double>::infinity();
    std::size_t hit = 0;
    Vec2 hit_center;
    const auto& sc = table.scatterers();
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const double rad = sc[i].radius;
        for (int m = -reach; m <= reach; ++m) {
            for (int n = -reach; n <= reach; ++n) {
                const Vec2 c = sc[i].center + Vec2{double(m), double(n)};
                const Vec2 w = c - q;
                const double along = dot(w, v);
                if (along < -rad || along - rad > best) continue;
                if (std::abs(cross(v, w)) > rad) continue;
                const double t = ray_circle(q, v, c, rad);
                if (t < best) {
                    best = t;
                    hit = i;
                    hit_center = c;
                }
            }
        }
    }
    if (!(best <= horizon)) throw HorizonExceeded("collision_map: no scatterer within the horizon bound");

    const double rad = sc[hit].radius;
    const Vec2 p = q + best * v;
    const Vec2 nrm = (1.0 / rad) * (p - hit_center);
    const Vec2 out = v - (2.0 * dot(v, nrm)) * nrm;
    double theta = std::atan2(nrm.y, nrm.x);
    if (theta < 0.0) theta += two_pi;
    double r = rad * theta;
    if (r >= sc[hit].perimeter()) r -= sc[hit].perimeter();
    double phi = std::atan2(cross(nrm, out), dot(nrm, out));
    phi = std::clamp(phi, -half_pi, half_pi);
    return {{hit, r, phi}, best};
}

/// phi = arcsin(2u - 1): the cos(phi)/2 law on [-pi/2, pi/2].
inline double phi_from_uniform(double u) { return std::asin(2.0 * u - 1.0); }

/// Draws from mu: scatterer proportional to perimeter, r uniform, phi by the
/// arcsine law. Draws inside the grazing guard are redrawn and counted in
/// `grazing_rejects` when given.
inline BilliardState invariant_sample(const BilliardTable& table, SplitMix64& rng,
                                      std::uint64_t* grazing_rejects = nullptr) {
    for (;;) {
        const double arc = rng.uniform() * table.total_perimeter();
        std::size_t i = 0;
        while (i + 1 < table.scatterers().size() && arc >= table.arc_offset(i + 1)) ++i;
        double r = arc - table.arc_offset(i);
        r = std::clamp(r, 0.0, std::nextafter(table.scatterer(i).perimeter(), 0.0));
        const double phi = phi_from_uniform(rng.uniform_open());
        if (std::abs(phi) < half_pi - grazing_guard) return {i, r, phi};
        if (grazing_rejects) ++*grazing_rejects;
    }
}

/// Phase metric: Euclidean in (r, phi) with r periodic; +inf across scatterers.
inline double phase_distance(const BilliardTable& table, const BilliardState& a, const BilliardState& b) {
    if (a.scatterer != b.scatterer) return std::numeric_limits<double>::infinity();
    const double per = table.scatterer(a.scatterer).perimeter();
    double dr = std::fmod(std::abs(a.r - b.r), per);
    dr = std::min(dr, per - dr);
    return std::hypot(dr, a.phi - b.phi);
}

/// mu(B(x, rho)) = c * int int_{dr^2+dphi^2 <= rho^2} cos(phi) dr dphi.
///
/// The r-extent at angular offset u is 2 sqrt(rho^2 - u^2); with
/// u = rho sin(t) the remaining integral is smooth and handled by
/// 30-point Gauss-Legendre.
inline double ball_measure(const BilliardTable& table, const BilliardState& x, double rho) {
    if (rho < 0.0) throw PreconditionError("ball_measure: rho must be non-negative");
    if (rho == 0.0) return 0.0;
    if (std::abs(x.phi) + rho >= half_pi) throw BoundaryBall("ball_measure: ball meets |phi| = pi/2");
    if (2.0 * rho >= table.scatterer(x.scatterer).perimeter()) {
        throw PreconditionError("ball_measure: ball wraps around the scatterer");
    }
    const auto integrand = [&](double t) {
        const double c = std::cos(t);
        return 2.0 * rho * rho * c * c * std::cos(x.phi + rho * std::sin(t));
    };
    const double integral = boost::math::quadrature::gauss<double, 30>::integrate(integrand, -half_pi, half_pi);
    return table.measure_constant() * integral;
}

/// Signed homogeneity strip index: 0 in the bulk, else k >= k0 with
/// (k+1)^-2 < pi/2 - |phi| <= k^-2.
inline long homogeneity_index(const BilliardState& s, long k0) {
    const double gap = half_pi - std::abs(s.phi);
    if (!(gap > 0.0)) throw BoundaryState("homogeneity_index: state on |phi| = pi/2");
    const auto kd = static_cast<double>(k0);
    if (gap >= 1.0 / (kd * kd)) return 0;
    long k = static_cast<long>(std::floor(1.0 / std::sqrt(gap)));
    k = std::max(k, k0);
    const auto inv_sq = [](long j) { return 1.0 / (static_cast<double>(j) * static_cast<double>(j)); };
    while (inv_sq(k) < gap && k > k0) --k;
    while (inv_sq(k + 1) >= gap) ++k;
    return s.phi < 0.0 ? -k : k;
}

/// Finite-difference expansion |dF/dr| of the collision map at s, in the
/// phase metric, by central differences with step h along the boundary.
inline double boundary_expansion(const BilliardTable& table, const BilliardState& s, double h = 1e-9) {
    BilliardState plus = s, minus = s;
    const double per = table.scatterer(s.scatterer).perimeter();
    plus.r = std::fmod(s.r + h, per);
    minus.r = std::fmod(s.r - h + per, per);
    const auto fp = collision_map(table, plus).state;
    const auto fm = collision_map(table, minus).state;
    if (fp.scatterer != fm.scatterer) return std::numeric_limits<double>::infinity();
    return phase_distance(table, fp, fm) / (2.0 * h);
}

/// Orbit generator over the collision map for the statistics layer.
class BilliardSystem {
public:
    using point_type = BilliardState;
    using state_type = BilliardState;

    explicit BilliardSystem(BilliardTable table) : table_(std::move(table)) {}

    const BilliardTable& table() const noexcept { return table_; }
    std::string label() const { return "billiard"; }

    state_type start(const BilliardState& s) const { return s; }
    state_type sample(SplitMix64& rng) const { return invariant_sample(table_, rng); }
    const BilliardState& position(const state_type& s) const noexcept { return s; }
    void advance(state_type& s) const { s = collision_map(table_, s).state; }
    double distance(const BilliardState& a, const BilliardState& b) const { return phase_distance(table_, a, b); }
    double ball_measure(const BilliardState& x, double rho) const { return billiard::ball_measure(table_, x, rho); }
    /// Largest finite phase distance.
    double diameter() const {
        double per = 0.0;
        for (const auto& s : table_.scatterers()) per = std::max(per, s.perimeter());
        return std::hypot(0.5 * per, std::numbers::pi);
    }

private:
    BilliardTable table_;
};

} // namespace recurlab::billiard
