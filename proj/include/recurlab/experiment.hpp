#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "billiard.hpp"
#include "borel_cantelli.hpp"
#include "errors.hpp"
#include "interval_maps.hpp"
#include "parallel.hpp"
#include "recurrence.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "systems.hpp"

namespace recurlab {

inline constexpr const char* library_version = "0.1.0";

enum class Mode { hitting, recurrence, bc_check, mixing_check, s_r_scan, diophantine };

inline const std::map<std::string, Mode>& mode_names() {
    static const std::map<std::string, Mode> names{
        {"hitting", Mode::hitting},           {"recurrence", Mode::recurrence},
        {"bc-check", Mode::bc_check},         {"mixing-check", Mode::mixing_check},
        {"s-r-scan", Mode::s_r_scan},         {"diophantine", Mode::diophantine},
    };
    return names;
}

inline std::string to_string(Mode m) {
    for (const auto& [name, mode] : mode_names()) {
        if (mode == m) return name;
    }
    return "?";
}

struct SepSettings {
    double R = 10.0;
    double eps = 0.1;
    double q = 0.5;
    friend bool operator==(const SepSettings&, const SepSettings&) = default;
};

/// Parsed run configuration. Optional fields left unset take per-system or
/// per-mode defaults when the run starts.
struct ExperimentConfig {
    std::string system;
    Mode mode = Mode::recurrence;
    std::vector<std::size_t> r_values{1};
    std::uint64_t n_max = 1000;
    std::uint64_t orbits = 1;
    std::optional<double> beta;
    double delta = 0.0;
    std::optional<double> sigma_exponent;
    std::optional<SepSettings> sep;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    int workers = 0;  // 0 = auto

    std::optional<std::uint64_t> n_min;
    std::optional<double> target;  // interval maps only
    std::string family = "hitting";
    std::optional<double> rho;
    std::optional<double> mov_rho;
    std::vector<std::vector<std::uint64_t>> tuples;
    std::vector<std::uint64_t> k_values;
    std::vector<double> deltas;
    std::uint64_t J = 1000;
    std::vector<double> rho_grid;
    std::size_t depth = 16;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

    static ExperimentConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        static const std::set<std::string> known{
            "system", "mode", "r_values", "n_max", "orbits", "schedule", "sep", "seed", "output_dir", "workers",
            "n_min", "target", "family", "rho", "mov_rho", "tuples", "k_values", "deltas", "J", "rho_grid", "depth"};
        for (const auto& [key, _] : j.items()) {
            if (!known.contains(key)) throw ConfigError("unknown config key: " + key);
        }
        ExperimentConfig c;
        try {
            c.system = j.at("system").get<std::string>();
            const auto mode = j.at("mode").get<std::string>();
            const auto it = mode_names().find(mode);
            if (it == mode_names().end()) throw ConfigError("unknown mode: " + mode);
            c.mode = it->second;
            if (j.contains("r_values")) c.r_values = j.at("r_values").get<std::vector<std::size_t>>();
            c.n_max = j.at("n_max").get<std::uint64_t>();
            c.orbits = j.at("orbits").get<std::uint64_t>();
            if (j.contains("schedule")) {
                const auto& s = j.at("schedule");
                if (s.contains("beta")) c.beta = s.at("beta").get<double>();
                if (s.contains("delta")) c.delta = s.at("delta").get<double>();
                if (s.contains("sigma_exponent")) c.sigma_exponent = s.at("sigma_exponent").get<double>();
            }
            if (j.contains("sep")) {
                const auto& s = j.at("sep");
                c.sep = SepSettings{s.at("R").get<double>(), s.at("eps").get<double>(), s.at("q").get<double>()};
            }
            c.seed = j.at("seed").get<std::uint64_t>();
            if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
            if (j.contains("workers")) {
                const auto& w = j.at("workers");
                if (w.is_string()) {
                    if (w.get<std::string>() != "auto") throw ConfigError("workers must be a positive integer or \"auto\"");
                    c.workers = 0;
                } else {
                    c.workers = w.get<int>();
                    if (c.workers < 1) throw ConfigError("workers must be a positive integer or \"auto\"");
                }
            }
            if (j.contains("n_min")) c.n_min = j.at("n_min").get<std::uint64_t>();
            if (j.contains("target")) c.target = j.at("target").get<double>();
            if (j.contains("family")) c.family = j.at("family").get<std::string>();
            if (j.contains("rho")) c.rho = j.at("rho").get<double>();
            if (j.contains("mov_rho")) c.mov_rho = j.at("mov_rho").get<double>();
            if (j.contains("tuples")) c.tuples = j.at("tuples").get<std::vector<std::vector<std::uint64_t>>>();
            if (j.contains("k_values")) c.k_values = j.at("k_values").get<std::vector<std::uint64_t>>();
            if (j.contains("deltas")) c.deltas = j.at("deltas").get<std::vector<double>>();
            if (j.contains("J")) c.J = j.at("J").get<std::uint64_t>();
            if (j.contains("rho_grid")) c.rho_grid = j.at("rho_grid").get<std::vector<double>>();
            if (j.contains("depth")) c.depth = j.at("depth").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        c.validate();
        return c;
    }

    static ExperimentConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + path + ": " + e.what());
        }
        return from_json(j);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["system"] = system;
        j["mode"] = to_string(mode);
        j["r_values"] = r_values;
        j["n_max"] = n_max;
        j["orbits"] = orbits;
        nlohmann::json sched{{"delta", delta}};
        if (beta) sched["beta"] = *beta;
        if (sigma_exponent) sched["sigma_exponent"] = *sigma_exponent;
        j["schedule"] = sched;
        if (sep) j["sep"] = {{"R", sep->R}, {"eps", sep->eps}, {"q", sep->q}};
        j["seed"] = seed;
        j["output_dir"] = output_dir;
        if (workers > 0) j["workers"] = workers;
        else j["workers"] = "auto";
        if (n_min) j["n_min"] = *n_min;
        if (target) j["target"] = *target;
        j["family"] = family;
        if (rho) j["rho"] = *rho;
        if (mov_rho) j["mov_rho"] = *mov_rho;
        if (!tuples.empty()) j["tuples"] = tuples;
        if (!k_values.empty()) j["k_values"] = k_values;
        if (!deltas.empty()) j["deltas"] = deltas;
        j["J"] = J;
        if (!rho_grid.empty()) j["rho_grid"] = rho_grid;
        j["depth"] = depth;
        return j;
    }

    void validate() const {
        if (system.empty()) throw ConfigError("system must be non-empty");
        if (n_max < 1000) throw ConfigError("n_max must be >= 1000");
        if (orbits < 1) throw ConfigError("orbits must be >= 1");
        if (r_values.empty()) throw ConfigError("r_values must be non-empty");
        for (auto r : r_values) {
            if (r < 1) throw ConfigError("r values must be >= 1");
        }
        if (beta && !(*beta > 0.0)) throw ConfigError("schedule.beta must be positive");
        if (!(delta >= 0.0)) throw ConfigError("schedule.delta must be non-negative");
        if (sigma_exponent && !(*sigma_exponent > 0.0)) throw ConfigError("schedule.sigma_exponent must be positive");
        if (sep) {
            for (auto r : r_values) SepConfig(sep->R, sep->eps, sep->q, r);
        }
        if (n_min && (*n_min < 1 || *n_min > n_max)) throw ConfigError("n_min must lie in [1, n_max]");
        if (family != "hitting" && family != "recurrence" && family != "synthetic") {
            throw ConfigError("family must be hitting, recurrence or synthetic");
        }
        if (rho && !(*rho > 0.0)) throw ConfigError("rho must be positive");
        if (mov_rho && !(*mov_rho > 0.0)) throw ConfigError("mov_rho must be positive");
        if (mode == Mode::mixing_check && orbits < min_monte_carlo_samples) {
            throw ConfigError("mixing-check uses orbits as the sample count and needs orbits >= 10000");
        }
        for (const auto& t : tuples) {
            if (t.empty()) throw ConfigError("tuples must be non-empty");
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (t[i] < 1 || (i > 0 && t[i] <= t[i - 1])) throw ConfigError("tuples must be strictly increasing, >= 1");
            }
        }
        for (auto k : k_values) {
            if (k < 1) throw ConfigError("k_values must be >= 1");
        }
        for (double d : deltas) {
            if (!(d >= 0.0)) throw ConfigError("deltas must be non-negative");
        }
        if (J < 2) throw ConfigError("J must be >= 2");
        for (std::size_t i = 0; i < rho_grid.size(); ++i) {
            if (!(rho_grid[i] > 0.0) || (i > 0 && !(rho_grid[i] < rho_grid[i - 1]))) {
                throw ConfigError("rho_grid must be positive and strictly decreasing");
            }
        }
        if (depth < 1 || depth > 62) throw ConfigError("depth must lie in [1, 62]");
    }
};

struct RunManifest {
    nlohmann::json config;
    std::string version;
    double wall_time_s = 0.0;
    std::map<std::string, std::string> checksums;

    nlohmann::json to_json() const {
        return {{"config", config}, {"version", version}, {"wall_time_s", wall_time_s}, {"files", checksums}};
    }
};

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

/// %.17g, which round-trips every double.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInput("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Accumulates output files and writes them in one place.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void add(const std::string& name, std::string body) { files_.emplace_back(name, std::move(body)); }

    std::map<std::string, std::string> write() const {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
        std::map<std::string, std::string> sums;
        for (const auto& [name, body] : files_) {
            write_text(dir_ / name, body);
            sums[name] = hex64(fnv1a64(body));
        }
        return sums;
    }

    static void write_text(const std::filesystem::path& path, const std::string& body) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << body;
        if (!out) throw IoError("write failed: " + path.string());
    }

private:
    std::filesystem::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

/// A system id resolves to an interval map or a billiard table.
/// "billiard" is the default table; other ids ending in ".json" are table files.
using SystemSpec = std::variant<IntervalMap, billiard::BilliardTable>;

inline SystemSpec resolve_system(const std::string& id) {
    if (id == "billiard") return billiard::BilliardTable::default_table();
    if (id.size() > 5 && id.ends_with(".json")) return billiard::BilliardTable::from_file(id);
    try {
        return IntervalMap::from_id(id);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("system ") + id + ": " + e.what());
    }
}

namespace detail {

inline std::string join_tuple(const std::vector<std::uint64_t>& t) {
    std::string s;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(t[i]);
    }
    return s;
}

inline nlohmann::json finite_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

/// Per-run derived settings.
struct RunContext {
    const ExperimentConfig& cfg;
    unsigned workers;
    bool is_billiard;
    std::string label;
    double dim_coeff;
    RhoSchedule schedule;
};

template <MeasuredSystem Sys>
typename Sys::point_type draw_target(const Sys& sys, std::uint64_t seed, std::optional<double> rho) {
    SplitMix64 rng(split_seed(seed, std::numeric_limits<std::uint64_t>::max()));
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const auto st = sys.sample(rng);
        typename Sys::point_type p = sys.position(st);
        if (!rho) return p;
        try {
            (void)sys.ball_measure(p, *rho);
            return p;
        } catch (const BoundaryBall&) {
        }
    }
    throw PreconditionError("could not draw a target whose ball avoids the boundary");
}

template <MeasuredSystem Sys>
typename Sys::point_type pick_target(const Sys& sys, const RunContext& ctx, std::optional<double> rho) {
    if constexpr (std::is_same_v<typename Sys::point_type, double>) {
        if (ctx.cfg.target) {
            if (!(*ctx.cfg.target >= 0.0 && *ctx.cfg.target <= 1.0)) throw ConfigError("target must lie in [0,1]");
            return *ctx.cfg.target;
        }
    } else if (ctx.cfg.target) {
        throw ConfigError("target is only supported for interval maps");
    }
    return draw_target(sys, ctx.cfg.seed, rho);
}

template <MeasuredSystem Sys>
void run_loglaw(const Sys& sys, const RunContext& ctx, bool hitting, OutputSet& out, nlohmann::json& summary) {
    const auto& cfg = ctx.cfg;
    const std::size_t r_max = *std::max_element(cfg.r_values.begin(), cfg.r_values.end());
    const std::uint64_t n_min = std::max<std::uint64_t>(cfg.n_min.value_or(std::min<std::uint64_t>(1000, cfg.n_max)), r_max + 1);
    if (n_min > cfg.n_max) throw ConfigError("n_min exceeds n_max");
    const auto grid = geometric_checkpoints(n_min, cfg.n_max);

    std::optional<typename Sys::point_type> target;
    if (hitting) target = pick_target(sys, ctx, std::nullopt);

    struct OrbitResult {
        std::vector<LogLawSeries> series;
        std::string error;
    };
    std::vector<OrbitResult> results(cfg.orbits);
    parallel_for(cfg.orbits, ctx.workers, [&](std::size_t i) {
        auto rng = substream(cfg.seed, i);
        try {
            auto st = sys.sample(rng);
            results[i].series = hitting ? track_hitting(sys, *target, std::move(st), cfg.n_max, cfg.r_values, grid, ctx.dim_coeff)
                                        : track_recurrence(sys, st, cfg.n_max, cfg.r_values, grid, ctx.dim_coeff);
        } catch (const SingularOrbit& e) {
            results[i].error = e.what();
        } catch (const GrazingCollision& e) {
            results[i].error = e.what();
        } catch (const HorizonExceeded& e) {
            results[i].error = e.what();
        }
    });

    std::string csv = "r,orbit_id,n,d_rth,lambda\n";
    nlohmann::json per_r = nlohmann::json::object();
    nlohmann::json failures = nlohmann::json::array();
    for (std::size_t ri = 0; ri < cfg.r_values.size(); ++ri) {
        const std::size_t r = cfg.r_values[ri];
        std::vector<double> limsups, ratios;
        std::vector<nlohmann::json> per_orbit;
        for (std::uint64_t i = 0; i < cfg.orbits; ++i) {
            const auto& res = results[i];
            if (!res.error.empty()) {
                if (ri == 0) failures.push_back({{"orbit_id", i}, {"error", res.error}});
                continue;
            }
            const auto& s = res.series[ri];
            for (const auto& c : s.checkpoints) {
                csv += std::to_string(r) + ',' + std::to_string(i) + ',' + std::to_string(c.n) + ',' + format_real(c.d) +
                       ',' + format_real(c.lambda) + '\n';
            }
            const double ls = limsup_estimate(s, n_min).value;
            const auto& last = s.checkpoints.back();
            const double ratio = std::abs(std::log(last.d)) / std::log(static_cast<double>(last.n));
            limsups.push_back(ls);
            ratios.push_back(ratio);
            per_orbit.push_back({{"orbit_id", i}, {"lambda_max", finite_or_null(ls)}, {"log_ratio", finite_or_null(ratio)}});
        }
        nlohmann::json entry{{"orbits_completed", limsups.size()}, {"per_orbit", per_orbit}};
        entry["median_lambda_max"] = limsups.empty() ? nlohmann::json(nullptr) : finite_or_null(stats::median(limsups));
        entry["median_log_ratio"] = ratios.empty() ? nlohmann::json(nullptr) : finite_or_null(stats::median(ratios));
        per_r[std::to_string(r)] = entry;
    }
    out.add("loglaw.csv", std::move(csv));
    summary["n_min"] = n_min;
    summary["dim_coeff"] = ctx.dim_coeff;
    summary["per_r"] = per_r;
    summary["failed_orbits"] = failures;
    const auto& first = per_r[std::to_string(cfg.r_values.front())];
    summary["median_lambda_max"] = first["median_lambda_max"];
    if constexpr (std::is_same_v<typename Sys::point_type, double>) {
        if (target) summary["target"] = *target;
    }
}

template <MeasuredSystem Sys>
EventFamily make_family(const Sys& sys, const RunContext& ctx) {
    if (ctx.cfg.family == "synthetic") {
        const auto sched = ctx.schedule;
        return EventFamily::synthetic_iid([sched](std::uint64_t n) { return sched.sigma_model(n); });
    }
    if (ctx.cfg.family == "recurrence") return EventFamily::recurrence(sys, ctx.schedule);
    return EventFamily::hitting(sys, pick_target(sys, ctx, std::nullopt), ctx.schedule);
}

inline SepConfig sep_for(const ExperimentConfig& cfg, std::size_t r) {
    return cfg.sep ? SepConfig(cfg.sep->R, cfg.sep->eps, cfg.sep->q, r) : SepConfig::defaults(r);
}

template <MeasuredSystem Sys>
void run_bc_check(const Sys& sys, const RunContext& ctx, OutputSet& out, nlohmann::json& summary) {
    const auto& cfg = ctx.cfg;
    const auto family = make_family(sys, ctx);
    const auto m_max = static_cast<std::uint64_t>(std::floor(std::log2(static_cast<double>(cfg.n_max))));
    const std::uint64_t m_z = std::max<std::uint64_t>(1, m_max - 1);

    std::vector<std::vector<std::uint64_t>> counts(cfg.orbits);
    std::vector<std::vector<std::uint64_t>> z(cfg.orbits, std::vector<std::uint64_t>(cfg.r_values.size(), 0));
    std::vector<SepConfig> seps;
    for (auto r : cfg.r_values) seps.push_back(sep_for(cfg, r));
    parallel_for(cfg.orbits, ctx.workers, [&](std::size_t i) {
        const auto seed = split_seed(cfg.seed, i);
        counts[i] = dyadic_hit_counts(family, family.orbit(seed), m_max);
        for (std::size_t ri = 0; ri < cfg.r_values.size(); ++ri) z[i][ri] = z_count(family, family.orbit(seed), m_z, seps[ri]);
    });

    std::string counts_csv = "orbit_id,n,count\n";
    for (std::uint64_t i = 0; i < cfg.orbits; ++i) {
        for (std::uint64_t m = 1; m <= m_max; ++m) {
            counts_csv += std::to_string(i) + ',' + std::to_string(std::uint64_t{1} << m) + ',' +
                          std::to_string(counts[i][m - 1]) + '\n';
        }
    }
    std::string hr_csv = "r,m,n,fraction_ge_r\n";
    std::string z_csv = "r,orbit_id,z\n";
    nlohmann::json per_r = nlohmann::json::object();
    for (std::size_t ri = 0; ri < cfg.r_values.size(); ++ri) {
        const std::size_t r = cfg.r_values[ri];
        std::vector<double> fractions;
        for (std::uint64_t m = 1; m <= m_max; ++m) {
            double f = 0.0;
            for (std::uint64_t i = 0; i < cfg.orbits; ++i) f += counts[i][m - 1] >= r ? 1.0 : 0.0;
            f /= static_cast<double>(cfg.orbits);
            fractions.push_back(f);
            hr_csv += std::to_string(r) + ',' + std::to_string(m) + ',' + std::to_string(std::uint64_t{1} << m) + ',' +
                      format_real(f) + '\n';
        }
        std::vector<double> zs;
        for (std::uint64_t i = 0; i < cfg.orbits; ++i) {
            z_csv += std::to_string(r) + ',' + std::to_string(i) + ',' + std::to_string(z[i][ri]) + '\n';
            zs.push_back(static_cast<double>(z[i][ri]));
        }
        // Trend over the second half of the dyadic levels.
        std::vector<double> ms, fs;
        for (std::size_t j = fractions.size() / 2; j < fractions.size(); ++j) {
            ms.push_back(static_cast<double>(j + 1));
            fs.push_back(fractions[j]);
        }
        const auto fit = stats::least_squares(ms, fs);
        const auto series = s_r_partial(ctx.schedule, r, cfg.J);
        per_r[std::to_string(r)] = {
            {"s_r_partial", finite_or_null(series.partial_sum)},
            {"s_r_classification", to_string(series.verdict)},
            {"final_fraction_ge_r", fractions.back()},
            {"fraction_trend_slope", fit ? finite_or_null(fit->slope) : nlohmann::json(nullptr)},
            {"mean_z", stats::mean(zs)},
            {"z_levels", m_z},
        };
    }
    out.add("hr_proxy.csv", std::move(hr_csv));
    out.add("hit_counts.csv", std::move(counts_csv));
    out.add("z_counts.csv", std::move(z_csv));
    summary["family"] = cfg.family;
    summary["m_max"] = m_max;
    summary["per_r"] = per_r;
}

template <MeasuredSystem Sys>
void run_mixing_check(const Sys& sys, const RunContext& ctx, OutputSet& out, nlohmann::json& summary) {
    const auto& cfg = ctx.cfg;
    const double rho = cfg.rho.value_or(0.02);
    const double mov_rho = cfg.mov_rho.value_or(1e-3);
    const auto target = pick_target(sys, ctx, rho);
    auto tuples = cfg.tuples;
    if (tuples.empty()) tuples = {{25, 50}, {1, 2}};
    auto ks = cfg.k_values;
    if (ks.empty()) {
        for (std::uint64_t k = 1; k <= 10; ++k) ks.push_back(k);
    }

    std::string gm_csv = "system,tuple,rho,M,p_hat,se,sigma_r,ratio\n";
    nlohmann::json gm = nlohmann::json::array();
    for (std::size_t t = 0; t < tuples.size(); ++t) {
        const auto e = estimate_gm1(sys, target, std::span<const std::uint64_t>(tuples[t]), rho, cfg.orbits,
                                    split_seed(cfg.seed, t), ctx.workers);
        gm_csv += ctx.label + ',' + join_tuple(tuples[t]) + ',' + format_real(rho) + ',' + std::to_string(cfg.orbits) +
                  ',' + format_real(e.p_hat) + ',' + format_real(e.se) + ',' + format_real(e.sigma_r) + ',' +
                  format_real(e.ratio) + '\n';
        gm.push_back({{"tuple", tuples[t]}, {"p_hat", e.p_hat}, {"se", e.se}, {"ratio", finite_or_null(e.ratio)},
                      {"insufficient_hits", e.insufficient_hits}});
    }
    std::string mov_csv = "system,k,rho,M,p_hat,se\n";
    nlohmann::json mov = nlohmann::json::array();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const auto e = estimate_mov(sys, ks[i], mov_rho, cfg.orbits, split_seed(cfg.seed ^ 0x6d6f76ULL, i), ctx.workers);
        mov_csv += ctx.label + ',' + std::to_string(ks[i]) + ',' + format_real(mov_rho) + ',' +
                   std::to_string(cfg.orbits) + ',' + format_real(e.p_hat) + ',' + format_real(e.se) + '\n';
        mov.push_back({{"k", ks[i]}, {"p_hat", e.p_hat}, {"se", e.se}});
    }
    out.add("gm_estimates.csv", std::move(gm_csv));
    out.add("mov_estimates.csv", std::move(mov_csv));
    summary["rho"] = rho;
    summary["mov_rho"] = mov_rho;
    summary["gm1"] = gm;
    summary["mov"] = mov;
}

inline void run_s_r_scan(const RunContext& ctx, OutputSet& out, nlohmann::json& summary) {
    const auto& cfg = ctx.cfg;
    auto deltas = cfg.deltas;
    if (deltas.empty()) {
        for (int k = 2; k <= 14; ++k) deltas.push_back(k / 10.0);
    }
    std::string csv = "beta,delta,sigma_exponent,r,J,partial_sum,classification\n";
    nlohmann::json rows = nlohmann::json::array();
    for (auto r : cfg.r_values) {
        for (double d : deltas) {
            RhoSchedule s = ctx.schedule;
            s.delta = d;
            const auto res = s_r_partial(s, r, cfg.J);
            csv += format_real(s.beta) + ',' + format_real(d) + ',' + format_real(s.sigma_exponent) + ',' +
                   std::to_string(r) + ',' + std::to_string(cfg.J) + ',' + format_real(res.partial_sum) + ',' +
                   to_string(res.verdict) + '\n';
            rows.push_back({{"r", r}, {"delta", d}, {"classification", to_string(res.verdict)}});
        }
    }
    out.add("s_r.csv", std::move(csv));
    summary["scan"] = rows;
}

template <MeasuredSystem Sys>
void run_diophantine(const Sys& sys, const RunContext& ctx, OutputSet& out, nlohmann::json& summary) {
    const auto& cfg = ctx.cfg;
    auto grid = cfg.rho_grid;
    if (grid.empty()) {
        for (int k = 2; k <= 16; ++k) grid.push_back(std::ldexp(1.0, -k));
    }
    constexpr bool symbolic = requires(const Sys& s, const typename Sys::state_type& st) { s.symbol(st); };
    bool full_branch = false;
    if constexpr (std::is_same_v<Sys, DyadicSystem>) full_branch = true;

    struct PointResult {
        DiophantineProfile profile;
        std::optional<std::size_t> cylinder_tau;
        std::string error;
    };
    std::vector<PointResult> results(cfg.orbits);
    parallel_for(cfg.orbits, ctx.workers, [&](std::size_t i) {
        auto rng = substream(cfg.seed, i);
        try {
            auto st = sys.sample(rng);
            if constexpr (symbolic) {
                if (full_branch) {
                    const auto word = itinerary(sys, st, cfg.depth);
                    results[i].cylinder_tau = cylinder_return_time(std::span<const std::size_t>(word));
                }
            }
            results[i].profile = diophantine_profile(sys, std::move(st), grid, cfg.n_max);
        } catch (const SingularOrbit& e) {
            results[i].error = e.what();
        } catch (const GrazingCollision& e) {
            results[i].error = e.what();
        } catch (const HorizonExceeded& e) {
            results[i].error = e.what();
        }
    });

    std::string csv = "orbit_id,rho,tau\n";
    std::string fit_csv = "orbit_id,slope,cylinder_tau\n";
    std::vector<double> slopes, cyl;
    std::size_t positive = 0, completed = 0;
    for (std::uint64_t i = 0; i < cfg.orbits; ++i) {
        const auto& res = results[i];
        if (!res.error.empty()) continue;
        ++completed;
        for (const auto& p : res.profile.points) {
            csv += std::to_string(i) + ',' + format_real(p.rho) + ',' + (p.tau ? std::to_string(*p.tau) : "") + '\n';
        }
        fit_csv += std::to_string(i) + ',' + (res.profile.slope ? format_real(*res.profile.slope) : "") + ',' +
                   (res.cylinder_tau ? std::to_string(*res.cylinder_tau) : "") + '\n';
        if (res.profile.slope) {
            slopes.push_back(*res.profile.slope);
            if (*res.profile.slope > 0.0) ++positive;
        }
        if (res.cylinder_tau) cyl.push_back(static_cast<double>(*res.cylinder_tau) / static_cast<double>(cfg.depth));
    }
    out.add("diophantine.csv", std::move(csv));
    out.add("diophantine_fit.csv", std::move(fit_csv));
    summary["points_completed"] = completed;
    summary["fraction_positive_slope"] = completed ? static_cast<double>(positive) / static_cast<double>(completed) : 0.0;
    summary["median_slope"] = slopes.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::median(slopes));
    summary["depth"] = cfg.depth;
    summary["median_cylinder_ratio"] = cyl.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::median(cyl));
}

template <MeasuredSystem Sys>
void dispatch(const Sys& sys, const RunContext& ctx, OutputSet& out, nlohmann::json& summary) {
    switch (ctx.cfg.mode) {
    case Mode::hitting: run_loglaw(sys, ctx, true, out, summary); break;
    case Mode::recurrence: run_loglaw(sys, ctx, false, out, summary); break;
    case Mode::bc_check: run_bc_check(sys, ctx, out, summary); break;
    case Mode::mixing_check: run_mixing_check(sys, ctx, out, summary); break;
    case Mode::s_r_scan: run_s_r_scan(ctx, out, summary); break;
    case Mode::diophantine: run_diophantine(sys, ctx, out, summary); break;
    }
}

} // namespace detail

/// Runs one experiment and writes its CSVs, summary.json and manifest.json
/// into cfg.output_dir. Only this thread touches the filesystem.
inline RunManifest run(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    const SystemSpec spec = resolve_system(cfg.system);
    const bool is_billiard = std::holds_alternative<billiard::BilliardTable>(spec);

    RhoSchedule schedule;
    schedule.beta = cfg.beta.value_or(is_billiard ? 0.5 : 1.0);
    schedule.delta = cfg.delta;
    schedule.sigma_exponent = cfg.sigma_exponent.value_or(is_billiard ? 2.0 : 1.0);
    schedule.validate();

    detail::RunContext ctx{cfg, resolve_workers(cfg.workers), is_billiard, "", is_billiard ? 0.5 : 1.0, schedule};
    OutputSet out(cfg.output_dir);
    nlohmann::json summary;

    if (is_billiard) {
        const billiard::BilliardSystem sys(std::get<billiard::BilliardTable>(spec));
        ctx.label = sys.label();
        detail::dispatch(sys, ctx, out, summary);
    } else {
        with_interval_system(std::get<IntervalMap>(spec), [&](const auto& sys) {
            ctx.label = sys.label();
            detail::dispatch(sys, ctx, out, summary);
        });
    }
    summary["mode"] = to_string(cfg.mode);
    summary["map"] = ctx.label;
    summary["seed"] = cfg.seed;
    summary["n_max"] = cfg.n_max;
    summary["orbits"] = cfg.orbits;
    summary["r"] = cfg.r_values;
    summary["schedule"] = {{"beta", schedule.beta}, {"delta", schedule.delta}, {"sigma_exponent", schedule.sigma_exponent}};
    out.add("summary.json", summary.dump(2) + "\n");

    RunManifest manifest;
    manifest.config = cfg.to_json();
    manifest.version = library_version;
    manifest.checksums = out.write();
    manifest.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    OutputSet::write_text(std::filesystem::path(cfg.output_dir) / "manifest.json", manifest.to_json().dump(2) + "\n");
    return manifest;
}

/// Converts run_dir/loglaw.csv to long-format run_dir/plot.csv with columns
/// series, x = ln ln n, y = lambda.
inline std::filesystem::path emit_plot_data(const std::filesystem::path& run_dir) {
    const auto src = run_dir / "loglaw.csv";
    if (!std::filesystem::exists(src)) throw MissingInput("missing " + src.string());
    std::istringstream in(read_file(src));
    const auto dst = run_dir / "plot.csv";
    std::string body = "series,x,y\n";
    std::string line;
    if (std::getline(in, line)) {
        if (line != "r,orbit_id,n,d_rth,lambda") throw IoError("unexpected loglaw.csv header: " + line);
        std::size_t row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            std::vector<std::string> cols;
            std::stringstream ls(line);
            std::string cell;
            while (std::getline(ls, cell, ',')) cols.push_back(cell);
            if (cols.size() != 5) throw IoError("loglaw.csv row " + std::to_string(row) + " has " + std::to_string(cols.size()) + " columns");
            double n = 0.0;
            try {
                n = std::stod(cols[2]);
            } catch (const std::logic_error&) {
                throw IoError("loglaw.csv row " + std::to_string(row) + ": bad n");
            }
            body += "r=" + cols[0] + "/orbit=" + cols[1] + ',' + format_real(std::log(std::log(n))) + ',' + cols[4] + '\n';
        }
    }
    OutputSet::write_text(dst, body);
    return dst;
}

} // namespace recurlab
