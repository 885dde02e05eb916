#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rns/allocation.hpp"
#include "rns/benchmarks.hpp"
#include "rns/grid.hpp"
#include "rns/input_model.hpp"
#include "rns/rng.hpp"

namespace rns {

// Running count, mean and sum of squared deviations for one design-input pair.
struct PairStats {
    std::int64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    // Sample variance with divisor N-1; zero while N < 2.
    double variance() const noexcept { return count >= 2 ? m2 / static_cast<double>(count - 1) : 0.0; }
    double stddev() const;

    bool operator==(const PairStats&) const = default;
};

// Welford's one-pass update.
PairStats update_stats(PairStats stats, double x);

using StatsGrid = Grid<PairStats>;

enum class ScheduleKind { Constant, Random };

// How stage sizes are generated. Random stages draw Z uniformly from `multipliers` once per
// stage and use m(t) = m * Z, n(t) = n * Z.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::Constant;
    std::int64_t n0 = 100;
    std::int64_t m0 = 50;  // data arriving before the initial simulations
    std::int64_t m = 50;
    std::int64_t n = 50;
    std::vector<std::int64_t> multipliers = {1, 2, 3, 4, 5};
    std::int64_t total_budget = 20000;

    bool operator==(const ScheduleSpec&) const = default;
};

// Concrete stage sizes for one run. batches[0] and budgets[0] belong to stage 1.
struct StageSchedule {
    std::int64_t n0 = 0;
    std::int64_t initial_batch = 0;
    std::vector<std::int64_t> batches;
    std::vector<std::int64_t> budgets;
    std::int64_t total_budget = 0;

    // Throws std::invalid_argument when n0 < 2, n < K*D*n0, or the stages cannot spend the budget.
    void validate(std::size_t designs, std::size_t components) const;
    // Stage at which the given post-initialization replication (1-based) runs.
    std::size_t stage_of(std::int64_t replication) const;
};

// Draws stages until their budgets cover n - K*D*n0.
StageSchedule materialize_schedule(const ScheduleSpec& spec, std::size_t designs, std::size_t components,
                                   RngStream& rng);

enum class ProcedureBase { Equal, EqualOcbaApprox, EqualOcbaBalance, IuOcbaApprox, IuOcbaBalance };

struct ProcedureKind {
    ProcedureBase base = ProcedureBase::IuOcbaApprox;
    bool components_known = true;

    // "equal", "equal-ocba-approx", ..., with a "-uc" suffix when components are estimated.
    std::string name() const;
    static ProcedureKind parse(const std::string& name);

    bool operator==(const ProcedureKind&) const = default;
};

struct RunState {
    StatsGrid stats;
    std::optional<MixtureModel> model;
    InputDataset dataset;
    std::int64_t replications = 0;  // post-initialization replications
    std::size_t stage = 0;
    std::size_t equal_cursor = 0;  // next pair (flat index) for round-robin
    bool truncated = false;  // a stage was cut short by the total budget

    CountGrid counts() const;
    std::int64_t total_count() const;
    std::size_t designs() const noexcept { return stats.rows(); }
    std::size_t components() const noexcept { return stats.cols(); }
};

// Plug-in (mu-hat, sigma-hat, w-hat) of a state with a model.
ProblemEstimate plug_in_estimate(const RunState& state);

// n0 replications of every pair. With a model whose components are estimated, pair (i,j)
// simulates under component j of that model.
RunState init_state(const Simulator& simulator, std::int64_t n0, RngStream& rng,
                    const MixtureModel* simulate_under = nullptr);

// One allocation decision for the current state.
PairIndex select_pair(const RunState& state, const ProcedureKind& kind);

struct StageOptions {
    // Precomputed model after ingesting this batch; skips re-estimation when set.
    const MixtureModel* precomputed_model = nullptr;
    // No replication runs once the total count reaches this value.
    std::optional<std::int64_t> budget_cap;
    // Called after every replication.
    std::function<void(const RunState&)> on_replication;
};

// Ingests the batch, re-estimates the input model once, then runs n_t single-replication
// decisions. Stops early and sets `truncated` when the budget cap is reached.
void run_stage(RunState& state, std::span<const double> batch, std::int64_t n_t, const ProcedureKind& kind,
               const Simulator& simulator, RngStream& rng, StreamingEstimator& estimator,
               const StageOptions& options = {});

struct Checkpoint {
    std::int64_t budget_used = 0;  // total replications including initialization
    std::size_t stage = 0;
    std::size_t selected_design = 0;
    Matrix alpha;  // N / sum N
    std::vector<double> weights;  // w-hat
    BalanceResiduals residuals;  // plug-in parameters
    std::optional<BalanceResiduals> true_residuals;  // true mu, sigma and w^c
    std::optional<double> w_error;  // max_j |w-hat_j - w^c_j|
    std::optional<double> alpha_error;  // max |alpha - alpha*| with alpha* from the true parameters
};

struct Trajectory {
    std::string procedure;
    std::uint64_t replication = 0;
    bool truncated = false;
    std::vector<Checkpoint> checkpoints;
    StatsGrid final_stats;

    std::size_t selected_design() const;
};

// Input data and fitted models for one macro-replication: models[0] follows the initial batch,
// models[t] follows stage t. Shared by all procedures with the same component mode.
struct InputTrack {
    bool components_known = true;
    std::vector<std::vector<double>> batches;
    std::vector<MixtureModel> models;
};

StreamingEstimator make_estimator(const Simulator& simulator, bool components_known,
                                  const EstimatorSettings& settings);

InputTrack build_input_track(const Simulator& simulator, const StageSchedule& schedule, bool components_known,
                             const EstimatorSettings& settings, std::uint64_t input_seed);

struct RunOptions {
    std::int64_t checkpoint_every = 500;
    EstimatorSettings estimator;
    const InputTrack* track = nullptr;
    std::uint64_t replication = 0;
};

// Full streaming loop until the total budget is spent. Checkpoints are taken after
// initialization, whenever the total count is a multiple of checkpoint_every, and at the end.
Trajectory run_procedure(const Simulator& simulator, const StageSchedule& schedule, const ProcedureKind& kind,
                         const ReplicationSeeds& seeds, const RunOptions& options = {});

// One JSON object per checkpoint, one line each.
void write_trajectory_jsonl(const Trajectory& trajectory, std::ostream& out);

}  // namespace rns
