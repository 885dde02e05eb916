#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rns/benchmarks.hpp"
#include "rns/config.hpp"
#include "rns/procedures.hpp"

namespace rns {

struct PcsPoint {
    std::int64_t budget = 0;
    double pcs = 0.0;
    double ci_halfwidth = 0.0;
};

struct PcsCurve {
    std::vector<PcsPoint> points;
    double final_pcs() const { return points.empty() ? 0.0 : points.back().pcs; }
};

// 1.96 sqrt(p(1-p)/reps)
double binomial_halfwidth(double pcs, std::int64_t reps);

// Mean residual norms across replications at one budget.
struct ResidualPoint {
    std::int64_t budget = 0;
    double input = 0.0;
    double total = 0.0;
    double local = 0.0;
    std::optional<double> true_input;
    std::optional<double> true_total;
    std::optional<double> true_local;
};

// What the harness keeps from one trajectory after writing it out.
struct RunSummary {
    std::vector<std::int64_t> budgets;
    std::vector<std::size_t> selected;
    std::vector<double> input, total, local;
    std::vector<double> true_input, true_total, true_local;  // empty without ground truth

    static RunSummary from(const Trajectory& trajectory);
};

// Selected design at `budget`: the latest checkpoint at or below it.
std::optional<std::size_t> selection_at(const RunSummary& run, std::int64_t budget);

PcsCurve pcs_curve(std::span<const RunSummary> runs, std::size_t true_best);
std::vector<ResidualPoint> residual_curve(std::span<const RunSummary> runs);

struct ProcedureResult {
    ProcedureKind kind;
    std::vector<RunSummary> runs;  // indexed by macro-replication
    PcsCurve curve;
    std::vector<ResidualPoint> residuals;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::size_t true_best = 0;
    std::vector<ProcedureResult> procedures;
    double wall_seconds = 0.0;
};

// Macro-replications in parallel; replication r uses ReplicationSeeds::for_replication(seed, r)
// for every procedure. With write_trajectories, each run lands in
// <output_dir>/trajectories/<procedure>/rep_<r>.jsonl.
ExperimentResult run_experiment(const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config, const Simulator& simulator);

// pcs_<procedure>.csv, residuals_<procedure>.csv, summary.json and plot.gp in dir.
void emit_outputs(const ExperimentResult& result, const std::string& dir);

struct SlopeFit {
    std::string quantity;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t points = 0;
};

// Least-squares fit of log(y) on log(x); nonpositive y are skipped.
SlopeFit fit_log_log(const std::string& quantity, std::span<const double> x, std::span<const double> y);
// Median of pairwise slopes.
double theil_sen_slope(std::span<const double> x, std::span<const double> y);

struct ProbeReport {
    std::string procedure;
    Trajectory trajectory;
    std::vector<SlopeFit> fits;
};

// One long run of an IU procedure at the configured schedule; fits the decay of the allocation
// error (approx) or the true-parameter input and total residuals (balance), and of w-hat error,
// against budget. Throws InsufficientCheckpoints when fewer than 10 checkpoints lie in the fit window.
ProbeReport run_convergence_probe(const ExperimentConfig& config);
ProbeReport run_convergence_probe(const ExperimentConfig& config, const Simulator& simulator);

struct MleRateReport {
    std::vector<double> stages;
    std::vector<double> mean_error;  // mean over streams of max_j |w-hat_j - w^c_j|
    SlopeFit fit;
};

// Streaming known-component weight MLE on `truth`, evaluated at log-spaced stages.
MleRateReport run_mle_rate_probe(const MixtureModel& truth, const MleProbeConfig& probe,
                                 const EstimatorSettings& settings, std::uint64_t seed);

Json probe_report_to_json(const ProbeReport& report, const std::optional<MleRateReport>& mle);

}  // namespace rns
