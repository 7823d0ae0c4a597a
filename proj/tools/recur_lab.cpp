// recur-lab: command-line front end for the recurlab experiments.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recurlab/recurlab.hpp"

namespace {

enum Exit : int { ok = 0, failure = 1, config = 2, table = 3, io = 4 };

std::vector<std::uint64_t> parse_times(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(cell, &used);
            if (used != cell.size() || v < 0) throw std::invalid_argument(cell);
            out.push_back(static_cast<std::uint64_t>(v));
        } catch (const std::logic_error&) {
            throw recurlab::ConfigError("bad time list entry: '" + cell + "'");
        }
    }
    return out;
}

template <class F>
int guarded(F&& body) {
    try {
        body();
        return ok;
    } catch (const recurlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config;
    } catch (const recurlab::TableError& e) {
        std::cerr << "table error: " << e.what() << '\n';
        return table;
    } catch (const recurlab::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recurrence and shrinking-target experiments for interval maps and Sinai billiards"};
    app.require_subcommand(1);
    int code = ok;

    auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
    std::string config_path;
    run->add_option("config", config_path, "config file")->required();
    run->callback([&] {
        code = guarded([&] {
            const auto cfg = recurlab::ExperimentConfig::from_file(config_path);
            const auto manifest = recurlab::run(cfg);
            std::cout << "wrote " << manifest.checksums.size() << " files to " << cfg.output_dir << " in "
                      << manifest.wall_time_s << " s\n";
        });
    });

    auto* validate = app.add_subcommand("validate-table", "check a billiard table for overlaps and open corridors");
    std::string table_path;
    validate->add_option("table", table_path, "table JSON")->required();
    validate->callback([&] {
        code = guarded([&] {
            const auto t = recurlab::billiard::BilliardTable::from_file(table_path);
            std::cout << "ok: " << t.scatterers().size() << " scatterers, total perimeter "
                      << t.total_perimeter() << ", horizon bound " << t.horizon_bound() << '\n';
        });
    });

    auto* plot = app.add_subcommand("plot", "write plot.csv (series, ln ln n, lambda) from a run directory");
    std::string run_dir;
    plot->add_option("run_dir", run_dir, "run output directory")->required();
    plot->callback([&] {
        code = guarded([&] { std::cout << recurlab::emit_plot_data(run_dir).string() << '\n'; });
    });

    auto* oracle = app.add_subcommand("oracle", "deterministic reference computations");
    oracle->require_subcommand(1);

    auto* sep = oracle->add_subcommand("sep", "separation index of a time tuple");
    std::string ks;
    std::uint64_t sep_n = 0;
    double sep_s = 0.0;
    sep->add_option("--ks", ks, "comma-separated increasing times")->required();
    sep->add_option("--n", sep_n, "horizon n")->required();
    sep->add_option("--s", sep_s, "gap threshold")->required();
    sep->callback([&] {
        code = guarded([&] { std::cout << recurlab::sep_index(parse_times(ks), sep_n, sep_s) << '\n'; });
    });

    auto* count = oracle->add_subcommand("count", "number of fully separated r-tuples in [1, n]");
    std::uint64_t count_n = 0, count_r = 0;
    double count_s = 0.0;
    count->add_option("--n", count_n, "horizon n")->required();
    count->add_option("--s", count_s, "gap threshold")->required();
    count->add_option("--r", count_r, "tuple length")->required();
    count->callback([&] {
        code = guarded([&] { std::cout << recurlab::separated_tuple_count(count_n, count_s, count_r) << '\n'; });
    });

    auto* binom = oracle->add_subcommand("binom", "P(Binomial(n, p) >= r)");
    std::uint64_t binom_n = 0, binom_r = 0;
    double binom_p = 0.0;
    binom->add_option("--n", binom_n, "trials")->required();
    binom->add_option("--p", binom_p, "success probability")->required();
    binom->add_option("--r", binom_r, "threshold")->required();
    binom->callback([&] {
        code = guarded([&] {
            std::cout << recurlab::format_real(recurlab::binomial_oracle(binom_n, binom_p, binom_r)) << '\n';
        });
    });

    auto* sr = oracle->add_subcommand("sr", "partial sum and verdict of the dyadic series S_r");
    recurlab::RhoSchedule sched;
    std::size_t sr_r = 1;
    std::uint64_t sr_J = 1000;
    sr->add_option("--beta", sched.beta, "schedule exponent")->required();
    sr->add_option("--delta", sched.delta, "log exponent")->required();
    sr->add_option("--sigma-exponent", sched.sigma_exponent, "ball measure exponent")->default_val(1.0);
    sr->add_option("--r", sr_r, "multiplicity")->required();
    sr->add_option("--J", sr_J, "number of dyadic levels")->default_val(1000);
    sr->callback([&] {
        code = guarded([&] {
            const auto res = recurlab::s_r_partial(sched, sr_r, sr_J);
            std::cout << recurlab::format_real(res.partial_sum) << ' ' << recurlab::to_string(res.verdict) << '\n';
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : config;
    }
    return code;
}
