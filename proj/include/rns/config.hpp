#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rns/benchmarks.hpp"
#include "rns/input_model.hpp"
#include "rns/json_io.hpp"
#include "rns/procedures.hpp"

namespace rns {

enum class BenchmarkName { Quadratic, Portfolio };

// Weights are kept as given (not normalized) so that the config echo parses back unchanged.
struct BenchmarkConfig {
    BenchmarkName name = BenchmarkName::Quadratic;
    QuadraticConfig quadratic = QuadraticConfig::defaults();
    PortfolioConfig portfolio = PortfolioConfig::defaults();
};

struct MleProbeConfig {
    std::int64_t batch = 10;  // data points per stage
    std::int64_t t_min = 100;
    std::int64_t t_max = 100000;
    int points = 25;  // log-spaced stages at which the MLE is evaluated
    int streams = 20;  // independent data streams averaged at each point

    bool operator==(const MleProbeConfig&) const = default;
};

struct ProbeConfig {
    std::string procedure = "iu-ocba-approx";
    std::int64_t fit_from = 0;  // smallest budget entering the slope fit
    std::optional<MleProbeConfig> mle;

    bool operator==(const ProbeConfig&) const = default;
};

struct ExperimentConfig {
    BenchmarkConfig benchmark;
    std::vector<ProcedureKind> procedures;
    ScheduleSpec schedule;
    std::int64_t macro_reps = 200;
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 500;
    std::string output_dir = "out";
    unsigned workers = 0;  // 0 means one per hardware thread
    bool write_trajectories = true;
    bool share_input_track = true;
    EstimatorSettings estimator;
    ProbeConfig probe;
};

// Throws ConfigError with a message naming the offending field.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);
// Fully explicit form; parse_config(config_to_json(c)) reproduces c.
Json config_to_json(const ExperimentConfig& config);

std::unique_ptr<Simulator> make_simulator(const BenchmarkConfig& benchmark);

}  // namespace rns
