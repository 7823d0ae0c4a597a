#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "recurlab/experiment.hpp"

using namespace recurlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("recurlab_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write(const fs::path& p, const std::string& body) {
    std::ofstream out(p);
    out << body;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

nlohmann::json small_json(const std::string& system, const std::string& mode, const fs::path& out) {
    return {{"system", system}, {"mode", mode}, {"r_values", {1, 2}}, {"n_max", 4000},
            {"orbits", 6},      {"seed", 77},   {"output_dir", out.string()}};
}

ExperimentConfig small(const std::string& system, const std::string& mode, const fs::path& out) {
    return ExperimentConfig::from_json(small_json(system, mode, out));
}

struct Cli {
    int code;
    std::string out;
};

Cli cli(const std::string& args) {
    const std::string cmd = std::string(RECURLAB_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    std::string out;
    char buf[256];
    while (pipe && fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pipe ? pclose(pipe) : -1;
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

class ExperimentTest : public ::testing::Test {
protected:
    void SetUp() override { unsetenv("RECURLAB_WORKERS"); }
};

} // namespace

TEST_F(ExperimentTest, ConfigParsesAndRoundTrips) {
    const nlohmann::json j = {{"system", "lorenz:alpha=0.75"},
                              {"mode", "bc-check"},
                              {"r_values", {1, 2, 3}},
                              {"n_max", 100000},
                              {"orbits", 12},
                              {"schedule", {{"beta", 1.0}, {"delta", 0.4}}},
                              {"sep", {{"R", 8.0}, {"eps", 0.05}, {"q", 0.5}}},
                              {"seed", 5},
                              {"output_dir", "out/x"},
                              {"workers", "auto"},
                              {"family", "recurrence"}};
    const auto c = ExperimentConfig::from_json(j);
    EXPECT_EQ(c.mode, Mode::bc_check);
    EXPECT_EQ(c.r_values, (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(c.beta, 1.0);
    EXPECT_DOUBLE_EQ(c.delta, 0.4);
    ASSERT_TRUE(c.sep);
    EXPECT_DOUBLE_EQ(c.sep->eps, 0.05);
    EXPECT_EQ(c.workers, 0u);
    EXPECT_EQ(ExperimentConfig::from_json(c.to_json()), c);
}

TEST_F(ExperimentTest, ConfigRejectsInvalidInput) {
    const nlohmann::json base = {{"system", "tent"}, {"mode", "recurrence"}, {"r_values", {1}},
                                 {"n_max", 1000},    {"orbits", 2},          {"seed", 1}};
    EXPECT_NO_THROW(ExperimentConfig::from_json(base));
    const auto broken = [&](const std::string& key, nlohmann::json value) {
        auto j = base;
        j[key] = std::move(value);
        return j;
    };
    EXPECT_THROW(ExperimentConfig::from_json(broken("n_max", 999)), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("orbits", 0)), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("mode", "sideways")), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("workers", 0)), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("workers", "many")), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("colour", "red")), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("r_values", nlohmann::json::array())), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("sep", {{"R", 10}, {"eps", 0.4}, {"q", 0.5}})), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("n_max", "lots")), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(broken("mode", "mixing-check")), ConfigError);  // orbits < 10^4
    EXPECT_THROW(ExperimentConfig::from_json(broken("rho_grid", {0.1, 0.2})), ConfigError);
    auto missing = base;
    missing.erase("seed");
    EXPECT_THROW(ExperimentConfig::from_json(missing), ConfigError);

    const auto dir = scratch("bad_config");
    write(dir / "broken.json", "{ not json");
    EXPECT_THROW(ExperimentConfig::from_file((dir / "broken.json").string()), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_file((dir / "absent.json").string()), IoError);
}

TEST_F(ExperimentTest, RecurrenceRunWritesOutputs) {
    const auto dir = scratch("recurrence");
    const auto cfg = small("tent", "recurrence", dir);
    const auto manifest = run(cfg);
    for (const char* f : {"loglaw.csv", "summary.json", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;

    const auto csv = read_file(dir / "loglaw.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "r,orbit_id,n,d_rth,lambda");
    const auto grid = geometric_checkpoints(1000, 4000);
    EXPECT_EQ(line_count(csv), 1 + 2 * 6 * grid.size());

    const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
    EXPECT_EQ(summary["map"], "tent");
    EXPECT_TRUE(summary["per_r"].contains("1"));
    EXPECT_TRUE(summary["per_r"].contains("2"));
    EXPECT_TRUE(summary["per_r"]["2"]["median_lambda_max"].is_number());
    EXPECT_EQ(summary["per_r"]["1"]["orbits_completed"], 6);

    const auto saved = nlohmann::json::parse(read_file(dir / "manifest.json"));
    EXPECT_EQ(ExperimentConfig::from_json(saved["config"]), cfg);
    EXPECT_EQ(saved["version"], library_version);
    EXPECT_EQ(saved["files"]["loglaw.csv"], hex64(fnv1a64(csv)));
    EXPECT_EQ(manifest.checksums.at("loglaw.csv"), hex64(fnv1a64(csv)));
}

TEST_F(ExperimentTest, EveryModeRuns) {
    struct Case {
        std::string system, mode;
        std::vector<std::string> files;
        nlohmann::json extra;
    };
    const std::vector<Case> cases{
        {"billiard", "hitting", {"loglaw.csv"}, {}},
        {"gauss", "bc-check", {"hr_proxy.csv", "hit_counts.csv", "z_counts.csv"}, {{"family", "synthetic"}}},
        {"doubling", "bc-check", {"hr_proxy.csv", "hit_counts.csv", "z_counts.csv"}, {{"family", "recurrence"}}},
        {"tent", "mixing-check", {"gm_estimates.csv", "mov_estimates.csv"},
         {{"orbits", 10000}, {"tuples", {{5, 10}, {3}}}, {"k_values", {1, 2}}}},
        {"billiard", "mixing-check", {"gm_estimates.csv", "mov_estimates.csv"},
         {{"orbits", 10000}, {"tuples", {{2}}}, {"k_values", {1}}, {"rho", 0.1}, {"mov_rho", 0.1}}},
        {"tent", "s-r-scan", {"s_r.csv"}, {{"deltas", {0.2, 0.5, 0.8}}, {"J", 100}}},
        {"tent", "diophantine", {"diophantine.csv", "diophantine_fit.csv"}, {{"rho_grid", {1e-1, 1e-2, 1e-3}}}},
    };
    for (const auto& c : cases) {
        const auto dir = scratch("mode_" + c.mode + "_" + c.system);
        auto j = small_json(c.system, c.mode, dir);
        for (auto& [k, v] : c.extra.items()) j[k] = v;
        const auto cfg = ExperimentConfig::from_json(j);
        ASSERT_NO_THROW(run(cfg)) << c.system << ' ' << c.mode;
        for (const auto& f : c.files) {
            ASSERT_TRUE(fs::exists(dir / f)) << f;
            EXPECT_GE(line_count(read_file(dir / f)), 2u) << f;
        }
        const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
        EXPECT_EQ(summary["mode"], c.mode);
    }
}

TEST_F(ExperimentTest, SeriesScanColumns) {
    const auto dir = scratch("scan");
    auto j = small("tent", "s-r-scan", dir).to_json();
    j["deltas"] = {0.4, 0.6};
    j["J"] = 50;
    run(ExperimentConfig::from_json(j));
    const auto csv = read_file(dir / "s_r.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "beta,delta,sigma_exponent,r,J,partial_sum,classification");
    EXPECT_NE(csv.find(",2,50,"), std::string::npos);
    EXPECT_NE(csv.find("convergent"), std::string::npos);
    EXPECT_NE(csv.find("divergent"), std::string::npos);
}

TEST_F(ExperimentTest, TableFileAsSystem) {
    const auto dir = scratch("table_system");
    write(dir / "table.json", billiard::BilliardTable::default_table().to_json().dump());
    auto cfg = small((dir / "table.json").string(), "recurrence", dir / "out");
    cfg.n_max = 2000;
    run(cfg);
    EXPECT_EQ(nlohmann::json::parse(read_file(dir / "out" / "summary.json"))["dim_coeff"], 0.5);
    write(dir / "bad.json", R"({"scatterers": [{"center": [0, 0], "radius": 0.3}, {"center": [0.5, 0], "radius": 0.3}], "horizon_bound": 2})");
    cfg.system = (dir / "bad.json").string();
    EXPECT_THROW(run(cfg), TableError);
}

TEST_F(ExperimentTest, DeterministicAcrossWorkerCounts) {
    struct Case {
        std::string system, mode;
        nlohmann::json extra;
    };
    const std::vector<Case> cases{
        {"gauss", "recurrence", {}},
        {"billiard", "hitting", {}},
        {"tent", "bc-check", {{"family", "hitting"}}},
        {"lorenz:alpha=0.7", "mixing-check", {{"orbits", 20000}, {"tuples", {{4, 8}}}, {"k_values", {1, 3}}}},
        {"tent", "diophantine", {{"orbits", 17}}},
    };
    for (const auto& c : cases) {
        std::map<std::string, std::string> first;
        for (unsigned w : {1u, 4u}) {
            const auto dir = scratch("det_" + c.mode + "_" + std::to_string(w));
            auto j = small_json(c.system, c.mode, dir);
            for (auto& [k, v] : c.extra.items()) j[k] = v;
            j["workers"] = w;
            run(ExperimentConfig::from_json(j));
            std::map<std::string, std::string> bodies;
            for (const auto& e : fs::directory_iterator(dir)) {
                if (e.path().extension() == ".csv") bodies[e.path().filename().string()] = read_file(e.path());
            }
            ASSERT_FALSE(bodies.empty());
            if (w == 1) first = bodies;
            else EXPECT_EQ(bodies, first) << c.system << ' ' << c.mode;
        }
    }
}

TEST_F(ExperimentTest, RerunIsByteIdentical) {
    const auto dir = scratch("rerun");
    const auto cfg = small("gauss", "recurrence", dir);
    const auto a = run(cfg);
    const auto first = read_file(dir / "loglaw.csv");
    const auto b = run(cfg);
    EXPECT_EQ(read_file(dir / "loglaw.csv"), first);
    EXPECT_EQ(a.checksums, b.checksums);
}

TEST_F(ExperimentTest, WorkersEnvironmentOverride) {
    setenv("RECURLAB_WORKERS", "3", 1);
    EXPECT_EQ(resolve_workers(1), 3u);
    unsetenv("RECURLAB_WORKERS");
    EXPECT_EQ(resolve_workers(2), 2u);
    EXPECT_GE(resolve_workers(0), 1u);
}

TEST_F(ExperimentTest, PlotData) {
    const auto dir = scratch("plot");
    run(small("tent", "recurrence", dir));
    const auto path = emit_plot_data(dir);
    const auto plot = read_file(path);
    EXPECT_EQ(plot.substr(0, plot.find('\n')), "series,x,y");
    EXPECT_EQ(line_count(plot), line_count(read_file(dir / "loglaw.csv")));
    EXPECT_NE(plot.find("r=2/orbit=5,"), std::string::npos);

    const auto empty = scratch("plot_empty");
    write(empty / "loglaw.csv", "");
    EXPECT_EQ(read_file(emit_plot_data(empty)), "series,x,y\n");
    write(empty / "loglaw.csv", "r,orbit_id,n,d_rth,lambda\n");
    EXPECT_EQ(read_file(emit_plot_data(empty)), "series,x,y\n");

    EXPECT_THROW(emit_plot_data(scratch("plot_missing")), MissingInput);
}

TEST_F(ExperimentTest, CliExitCodes) {
    const auto dir = scratch("cli");
    write(dir / "overlap.json", R"({"scatterers": [{"center": [0, 0], "radius": 0.3}, {"center": [0.5, 0], "radius": 0.3}], "horizon_bound": 2})");
    const auto overlap = cli("validate-table " + (dir / "overlap.json").string());
    EXPECT_EQ(overlap.code, 3);
    write(dir / "good.json", billiard::BilliardTable::default_table().to_json().dump());
    EXPECT_EQ(cli("validate-table " + (dir / "good.json").string()).code, 0);

    write(dir / "bad_config.json", R"({"system": "tent", "mode": "recurrence", "n_max": 10, "orbits": 1, "seed": 1})");
    EXPECT_EQ(cli("run " + (dir / "bad_config.json").string()).code, 2);
    EXPECT_EQ(cli("run " + (dir / "absent.json").string()).code, 4);
    EXPECT_EQ(cli("plot " + (dir / "nowhere").string()).code, 4);
    EXPECT_EQ(cli("frobnicate").code, 2);

    const auto cfg_path = dir / "ok.json";
    auto cfg = small("tent", "recurrence", dir / "run").to_json();
    write(cfg_path, cfg.dump());
    EXPECT_EQ(cli("run " + cfg_path.string()).code, 0);
    EXPECT_EQ(cli("plot " + (dir / "run").string()).code, 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "plot.csv"));
}

TEST_F(ExperimentTest, CliOracles) {
    EXPECT_EQ(cli("oracle sep --ks 10,30,41 --n 100 --s 9.21").out, "3\n");
    EXPECT_EQ(cli("oracle sep --ks 5,30,41 --n 100 --s 9.21").out, "2\n");
    EXPECT_EQ(cli("oracle sep --ks 30,10 --n 100 --s 1").code, 1);
    EXPECT_EQ(cli("oracle count --n 10 --s 3 --r 2").out, "15\n");
    EXPECT_NEAR(std::stod(cli("oracle binom --n 10 --p 0.1 --r 2").out), 0.263901, 1e-6);
    EXPECT_EQ(cli("oracle sr --beta 1 --delta 0 --r 1 --J 1000").out, "1000 divergent\n");
    EXPECT_NE(cli("oracle sr --beta 1 --delta 0.6 --r 2 --J 100").out.find("convergent"), std::string::npos);
}

TEST(FormatReal, SeventeenDigitsRoundTrip) {
    EXPECT_EQ(format_real(0.98), "0.97999999999999998");
    EXPECT_EQ(format_real(1000.0), "1000");
    EXPECT_EQ(format_real(std::numeric_limits<double>::infinity()), "inf");
    EXPECT_EQ(format_real(std::nan("")), "nan");
    SplitMix64 rng(12);
    for (int i = 0; i < 10000; ++i) {
        const double v = std::ldexp(rng.uniform(), static_cast<int>(rng() % 200) - 100);
        EXPECT_EQ(std::stod(format_real(v)), v);
    }
}
