#include "rns/procedures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "rns/errors.hpp"
#include "rns/json_io.hpp"

namespace rns {

double PairStats::stddev() const { return std::sqrt(variance()); }

PairStats update_stats(PairStats stats, double x) {
    stats.count += 1;
    const double delta = x - stats.mean;
    stats.mean += delta / static_cast<double>(stats.count);
    stats.m2 += delta * (x - stats.mean);
    if (stats.m2 < 0.0) stats.m2 = 0.0;
    return stats;
}

void StageSchedule::validate(std::size_t designs, std::size_t components) const {
    if (n0 < 2) throw std::invalid_argument("n0 must be at least 2");
    if (initial_batch < 0) throw std::invalid_argument("initial batch size must be nonnegative");
    if (batches.size() != budgets.size()) throw std::invalid_argument("one data batch per stage budget");
    const auto init = static_cast<std::int64_t>(designs * components) * n0;
    if (total_budget < init) throw std::invalid_argument("total budget is below K*D*n0");
    std::int64_t covered = 0;
    for (std::size_t t = 0; t < budgets.size(); ++t) {
        if (budgets[t] < 0 || batches[t] < 0) throw std::invalid_argument("stage sizes must be nonnegative");
        covered += budgets[t];
    }
    if (covered < total_budget - init) throw std::invalid_argument("stage budgets do not cover the total budget");
}

std::size_t StageSchedule::stage_of(std::int64_t replication) const {
    if (replication < 1) throw std::invalid_argument("replications are numbered from 1");
    std::int64_t cumulative = 0;
    for (std::size_t t = 0; t < budgets.size(); ++t) {
        cumulative += budgets[t];
        if (replication <= cumulative) return t + 1;
    }
    throw std::out_of_range("replication lies beyond the schedule");
}

StageSchedule materialize_schedule(const ScheduleSpec& spec, std::size_t designs, std::size_t components,
                                   RngStream& rng) {
    StageSchedule out;
    out.n0 = spec.n0;
    out.initial_batch = spec.m0;
    out.total_budget = spec.total_budget;
    if (spec.n0 < 2) throw std::invalid_argument("n0 must be at least 2");
    if (spec.m < 0 || spec.n < 0 || spec.m0 < 0) throw std::invalid_argument("stage sizes must be nonnegative");
    if (spec.kind == ScheduleKind::Random) {
        if (spec.multipliers.empty()) throw std::invalid_argument("random schedule needs multipliers");
        for (auto z : spec.multipliers)
            if (z < 0) throw std::invalid_argument("multipliers must be nonnegative");
    }
    const auto init = static_cast<std::int64_t>(designs * components) * spec.n0;
    const std::int64_t remaining = spec.total_budget - init;
    if (remaining < 0) throw std::invalid_argument("total budget is below K*D*n0");
    std::int64_t covered = 0;
    while (covered < remaining) {
        std::int64_t z = 1;
        if (spec.kind == ScheduleKind::Random)
            z = spec.multipliers[static_cast<std::size_t>(rng.uniform_int(0, spec.multipliers.size() - 1))];
        const std::int64_t n_t = spec.n * z;
        out.batches.push_back(spec.m * z);
        out.budgets.push_back(n_t);
        covered += n_t;
        if (spec.kind == ScheduleKind::Constant && n_t == 0)
            throw std::invalid_argument("constant schedule with n(t) = 0 never spends the budget");
        if (out.budgets.size() > 100000000) throw std::invalid_argument("schedule does not spend the budget");
    }
    return out;
}

namespace {

struct NamedBase {
    const char* name;
    ProcedureBase base;
};

constexpr NamedBase kBases[] = {
    {"equal", ProcedureBase::Equal},
    {"equal-ocba-approx", ProcedureBase::EqualOcbaApprox},
    {"equal-ocba-balance", ProcedureBase::EqualOcbaBalance},
    {"iu-ocba-approx", ProcedureBase::IuOcbaApprox},
    {"iu-ocba-balance", ProcedureBase::IuOcbaBalance},
};

}  // namespace

std::string ProcedureKind::name() const {
    for (const auto& b : kBases)
        if (b.base == base) return std::string(b.name) + (components_known ? "" : "-uc");
    return "unknown";
}

ProcedureKind ProcedureKind::parse(const std::string& name) {
    std::string stem = name;
    std::transform(stem.begin(), stem.end(), stem.begin(), [](unsigned char c) { return std::tolower(c); });
    bool known = true;
    if (stem.size() > 3 && stem.compare(stem.size() - 3, 3, "-uc") == 0) {
        known = false;
        stem.resize(stem.size() - 3);
    }
    for (const auto& b : kBases)
        if (stem == b.name) return {b.base, known};
    throw std::invalid_argument("unknown procedure: " + name);
}

CountGrid RunState::counts() const {
    CountGrid out(stats.rows(), stats.cols());
    for (std::size_t k = 0; k < stats.size(); ++k) out.flat()[k] = stats.flat()[k].count;
    return out;
}

std::int64_t RunState::total_count() const {
    std::int64_t total = 0;
    for (const auto& s : stats.flat()) total += s.count;
    return total;
}

ProblemEstimate plug_in_estimate(const RunState& state) {
    if (!state.model) throw std::logic_error("state has no input model");
    Matrix mu(state.designs(), state.components()), sigma(state.designs(), state.components());
    for (std::size_t k = 0; k < state.stats.size(); ++k) {
        mu.flat()[k] = state.stats.flat()[k].mean;
        sigma.flat()[k] = state.stats.flat()[k].stddev();
    }
    return ProblemEstimate(std::move(mu), std::move(sigma), state.model->weights());
}

namespace {

std::span<const double> override_for(const MixtureModel* model, std::size_t j) {
    if (!model) return {};
    return model->component(j).params();
}

}  // namespace

RunState init_state(const Simulator& simulator, std::int64_t n0, RngStream& rng, const MixtureModel* simulate_under) {
    if (n0 < 2) throw std::invalid_argument("n0 must be at least 2");
    const std::size_t k = simulator.num_designs();
    const std::size_t d = simulator.num_components();
    if (simulate_under && simulate_under->size() != d)
        throw std::invalid_argument("model component count does not match the simulator");
    RunState state;
    state.stats = StatsGrid(k, d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const auto theta = override_for(simulate_under, j);
            for (std::int64_t r = 0; r < n0; ++r) state.stats(i, j) = update_stats(state.stats(i, j), simulator.simulate(i, j, theta, rng));
        }
    return state;
}

PairIndex select_pair(const RunState& state, const ProcedureKind& kind) {
    const std::size_t k = state.designs();
    const std::size_t d = state.components();
    switch (kind.base) {
        case ProcedureBase::Equal: {
            const std::size_t flat = state.equal_cursor % (k * d);
            return {flat / d, flat % d};
        }
        case ProcedureBase::EqualOcbaApprox:
        case ProcedureBase::EqualOcbaBalance: {
            std::size_t column = 0;
            std::int64_t fewest = std::numeric_limits<std::int64_t>::max();
            for (std::size_t j = 0; j < d; ++j) {
                std::int64_t c = 0;
                for (std::size_t i = 0; i < k; ++i) c += state.stats(i, j).count;
                if (c < fewest) {
                    fewest = c;
                    column = j;
                }
            }
            const auto est = plug_in_estimate(state).column(column);
            CountGrid counts(k, 1);
            for (std::size_t i = 0; i < k; ++i) counts(i, 0) = state.stats(i, column).count;
            const auto pick = kind.base == ProcedureBase::EqualOcbaApprox
                                  ? most_starved_pair(solve_approx_allocation(est), counts)
                                  : balance_select_pair(est, counts);
            return {pick.design, column};
        }
        case ProcedureBase::IuOcbaApprox: {
            const auto est = plug_in_estimate(state);
            return most_starved_pair(solve_approx_allocation(est), state.counts());
        }
        case ProcedureBase::IuOcbaBalance:
            return balance_select_pair(plug_in_estimate(state), state.counts());
    }
    throw std::logic_error("unknown procedure");
}

void run_stage(RunState& state, std::span<const double> batch, std::int64_t n_t, const ProcedureKind& kind,
               const Simulator& simulator, RngStream& rng, StreamingEstimator& estimator,
               const StageOptions& options) {
    if (n_t < 0) throw std::invalid_argument("stage budget must be nonnegative");
    state.stage += 1;
    state.dataset.ingest(batch);
    if (options.precomputed_model)
        state.model = *options.precomputed_model;
    else
        state.model = estimator.ingest(batch);
    const MixtureModel* simulate_under = kind.components_known ? nullptr : &*state.model;
    std::int64_t total = state.total_count();
    for (std::int64_t r = 0; r < n_t; ++r) {
        if (options.budget_cap && total >= *options.budget_cap) {
            state.truncated = true;
            break;
        }
        const auto pair = select_pair(state, kind);
        if (kind.base == ProcedureBase::Equal) state.equal_cursor += 1;
        const double x = simulator.simulate(pair.design, pair.component, override_for(simulate_under, pair.component), rng);
        auto& cell = state.stats(pair.design, pair.component);
        cell = update_stats(cell, x);
        state.replications += 1;
        total += 1;
        if (options.on_replication) options.on_replication(state);
    }
}

std::size_t Trajectory::selected_design() const {
    if (checkpoints.empty()) throw std::logic_error("trajectory has no checkpoints");
    return checkpoints.back().selected_design;
}

StreamingEstimator make_estimator(const Simulator& simulator, bool components_known,
                                  const EstimatorSettings& settings) {
    if (components_known)
        return StreamingEstimator::known_components(simulator.input_distribution().components(), settings);
    return StreamingEstimator::unknown_components(simulator.num_components(), settings);
}

InputTrack build_input_track(const Simulator& simulator, const StageSchedule& schedule, bool components_known,
                             const EstimatorSettings& settings, std::uint64_t input_seed) {
    InputTrack track;
    track.components_known = components_known;
    RngStream rng(input_seed);
    auto estimator = make_estimator(simulator, components_known, settings);
    const auto& truth = simulator.input_distribution();
    track.batches.push_back(sample_input_data(truth, static_cast<std::size_t>(schedule.initial_batch), rng));
    track.models.push_back(estimator.ingest(track.batches.back()));
    for (auto m : schedule.batches) {
        track.batches.push_back(sample_input_data(truth, static_cast<std::size_t>(m), rng));
        track.models.push_back(estimator.ingest(track.batches.back()));
    }
    return track;
}

namespace {

class CheckpointRecorder {
public:
    explicit CheckpointRecorder(const Simulator& simulator) : truth_(simulator.true_estimate()) {
        if (truth_) {
            true_weights_ = truth_->w();
            alpha_star_ = solve_approx_allocation(*truth_).alpha();
        }
    }

    void record(const RunState& state, Trajectory& out) const {
        Checkpoint cp;
        cp.budget_used = state.total_count();
        if (!out.checkpoints.empty() && out.checkpoints.back().budget_used == cp.budget_used) return;
        cp.stage = state.stage;
        const auto est = plug_in_estimate(state);
        cp.selected_design = best_design(est);
        const auto policy = AllocationPolicy::from_counts(state.counts());
        cp.alpha = policy.alpha();
        cp.weights = state.model->weights();
        cp.residuals = balance_residuals(est, policy);
        if (truth_) {
            cp.true_residuals = balance_residuals(*truth_, policy);
            double we = 0.0;
            for (std::size_t j = 0; j < cp.weights.size(); ++j)
                we = std::max(we, std::abs(cp.weights[j] - true_weights_[j]));
            cp.w_error = we;
            double ae = 0.0;
            for (std::size_t k = 0; k < cp.alpha.size(); ++k)
                ae = std::max(ae, std::abs(cp.alpha.flat()[k] - alpha_star_.flat()[k]));
            cp.alpha_error = ae;
        }
        out.checkpoints.push_back(std::move(cp));
    }

private:
    std::optional<ProblemEstimate> truth_;
    std::vector<double> true_weights_;
    Matrix alpha_star_;
};

}  // namespace

Trajectory run_procedure(const Simulator& simulator, const StageSchedule& schedule, const ProcedureKind& kind,
                         const ReplicationSeeds& seeds, const RunOptions& options) {
    const std::size_t k = simulator.num_designs();
    const std::size_t d = simulator.num_components();
    schedule.validate(k, d);
    if (options.checkpoint_every < 1) throw std::invalid_argument("checkpoint cadence must be positive");
    const InputTrack* track = options.track;
    if (track) {
        if (track->components_known != kind.components_known)
            throw std::invalid_argument("input track was built for the other component mode");
        if (track->models.size() < 1 || track->batches.size() != track->models.size())
            throw std::invalid_argument("malformed input track");
    }

    Trajectory out;
    out.procedure = kind.name();
    out.replication = options.replication;

    RngStream input_rng(seeds.input);
    RngStream sim_rng(seeds.simulation);
    auto estimator = make_estimator(simulator, kind.components_known, options.estimator);
    const auto& truth = simulator.input_distribution();
    const CheckpointRecorder recorder(simulator);

    std::vector<double> batch;
    MixtureModel model0 = [&] {
        if (track) return track->models[0];
        batch = sample_input_data(truth, static_cast<std::size_t>(schedule.initial_batch), input_rng);
        return estimator.ingest(batch);
    }();
    RunState state = init_state(simulator, schedule.n0, sim_rng, kind.components_known ? nullptr : &model0);
    state.dataset.ingest(track ? std::span<const double>(track->batches[0]) : std::span<const double>(batch));
    state.model = std::move(model0);
    recorder.record(state, out);

    StageOptions stage_options;
    stage_options.budget_cap = schedule.total_budget;
    stage_options.on_replication = [&](const RunState& s) {
        if (s.total_count() % options.checkpoint_every == 0) recorder.record(s, out);
    };
    for (std::size_t t = 0; t < schedule.budgets.size() && state.total_count() < schedule.total_budget; ++t) {
        std::span<const double> stage_batch;
        if (track) {
            if (t + 1 >= track->batches.size()) throw std::invalid_argument("input track is shorter than the schedule");
            stage_batch = track->batches[t + 1];
            stage_options.precomputed_model = &track->models[t + 1];
        } else {
            batch = sample_input_data(truth, static_cast<std::size_t>(schedule.batches[t]), input_rng);
            stage_batch = batch;
        }
        run_stage(state, stage_batch, schedule.budgets[t], kind, simulator, sim_rng, estimator, stage_options);
    }
    recorder.record(state, out);
    out.truncated = state.truncated;
    out.final_stats = std::move(state.stats);
    return out;
}

void write_trajectory_jsonl(const Trajectory& trajectory, std::ostream& out) {
    for (const auto& cp : trajectory.checkpoints) {
        Json j;
        j["procedure"] = trajectory.procedure;
        j["replication"] = trajectory.replication;
        j["budget_used"] = cp.budget_used;
        j["stage"] = cp.stage;
        j["selected_design"] = cp.selected_design;
        j["alpha"] = matrix_to_json(cp.alpha);
        j["weights"] = cp.weights;
        j["residuals"] = residuals_to_json(cp.residuals);
        j["true_residuals"] = cp.true_residuals ? residuals_to_json(*cp.true_residuals) : Json(nullptr);
        j["w_error"] = cp.w_error ? Json(*cp.w_error) : Json(nullptr);
        j["alpha_error"] = cp.alpha_error ? Json(*cp.alpha_error) : Json(nullptr);
        out << j.dump() << '\n';
    }
}

}  // namespace rns
