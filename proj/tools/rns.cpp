#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rns/allocation.hpp"
#include "rns/config.hpp"
#include "rns/errors.hpp"
#include "rns/harness.hpp"
#include "rns/json_io.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

std::vector<std::string> split_names(const std::string& list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_run(const std::string& config_path, const std::string& procedures, std::optional<std::int64_t> reps,
            std::optional<std::uint64_t> seed, const std::string& out_dir) {
    auto config = rns::load_config(config_path);
    if (!procedures.empty()) {
        config.procedures.clear();
        for (const auto& name : split_names(procedures)) {
            try {
                config.procedures.push_back(rns::ProcedureKind::parse(name));
            } catch (const std::invalid_argument& e) {
                throw rns::ConfigError(e.what());
            }
        }
        if (config.procedures.empty()) throw rns::ConfigError("--procedures lists no procedure");
    }
    if (reps) {
        if (*reps < 1) throw rns::ConfigError("--macroreps must be at least 1");
        config.macro_reps = *reps;
    }
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.output_dir = out_dir;
    // re-validate after overrides
    config = rns::parse_config(rns::config_to_json(config));

    const auto result = rns::run_experiment(config);
    rns::emit_outputs(result, config.output_dir);
    for (const auto& pr : result.procedures)
        std::cout << pr.kind.name() << " final PCS " << pr.curve.final_pcs() << '\n';
    std::cout << "wrote " << config.output_dir << " in " << result.wall_seconds << " s\n";
    return 0;
}

int cmd_probe(const std::string& config_path) {
    const auto config = rns::load_config(config_path);
    const auto simulator = rns::make_simulator(config.benchmark);
    const auto report = rns::run_convergence_probe(config, *simulator);
    std::optional<rns::MleRateReport> mle;
    if (config.probe.mle)
        mle = rns::run_mle_rate_probe(simulator->input_distribution(), *config.probe.mle, config.estimator, config.seed);
    std::cout << rns::probe_report_to_json(report, mle).dump(2) << '\n';
    return 0;
}

int cmd_oracle(const std::string& instance_path) {
    std::ifstream in(instance_path);
    if (!in) throw rns::ConfigError("cannot open instance file " + instance_path);
    rns::Json j;
    try {
        in >> j;
    } catch (const rns::Json::parse_error& e) {
        throw rns::ConfigError(instance_path + ": " + e.what());
    }
    double tol = 1e-8;
    if (j.contains("tol")) tol = j.at("tol").get<double>();
    rns::Json problem = j.contains("problem") ? j.at("problem") : j;
    if (problem.is_object()) problem.erase("tol");
    const auto est = rns::problem_from_json(problem);
    rns::OracleResult result = [&] {
        try {
            return rns::oracle_optimal_allocation(est, tol);
        } catch (const std::invalid_argument& e) {
            throw rns::ConfigError(e.what());
        }
    }();
    const auto approx = rns::solve_approx_allocation(est);
    rns::Json out = {{"best", rns::best_design(est)},
                     {"alpha", rns::matrix_to_json(result.policy.alpha())},
                     {"objective", result.objective},
                     {"polished", result.polished},
                     {"residuals", rns::residuals_to_json(rns::balance_residuals(est, result.policy))},
                     {"approx_alpha", rns::matrix_to_json(approx.alpha())},
                     {"approx_objective", rns::pfs_decay_rate(est, approx)}};
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fixed-budget ranking and selection with streaming input data"};
    app.require_subcommand(1);

    std::string config_path, procedures, out_dir, instance_path;
    std::optional<std::int64_t> reps;
    std::optional<std::uint64_t> seed;

    auto* run = app.add_subcommand("run", "run a macro-replicated experiment");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--procedures", procedures, "comma-separated procedure names");
    run->add_option("--macroreps", reps, "number of macro-replications");
    run->add_option("--seed", seed, "base seed");
    run->add_option("--out", out_dir, "output directory");

    auto* probe = app.add_subcommand("probe", "convergence-rate probe of one long run");
    probe->add_option("--config", config_path, "experiment config (JSON)")->required();

    auto* oracle = app.add_subcommand("oracle", "optimal allocation of a small problem instance");
    oracle->add_option("--instance", instance_path, "problem instance (JSON with mu, sigma, w)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*run) return cmd_run(config_path, procedures, reps, seed, out_dir);
        if (*probe) return cmd_probe(config_path);
        if (*oracle) return cmd_oracle(instance_path);
    } catch (const rns::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const rns::Json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return 0;
}
