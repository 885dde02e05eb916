#include "rns/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "rns/errors.hpp"

namespace rns {

namespace fs = std::filesystem;

double binomial_halfwidth(double pcs, std::int64_t reps) {
    if (reps < 1) throw std::invalid_argument("need at least one replication");
    return 1.96 * std::sqrt(pcs * (1.0 - pcs) / static_cast<double>(reps));
}

RunSummary RunSummary::from(const Trajectory& trajectory) {
    RunSummary s;
    for (const auto& cp : trajectory.checkpoints) {
        s.budgets.push_back(cp.budget_used);
        s.selected.push_back(cp.selected_design);
        s.input.push_back(cp.residuals.input_norm());
        s.total.push_back(cp.residuals.total_norm());
        s.local.push_back(cp.residuals.local_norm());
        if (cp.true_residuals) {
            s.true_input.push_back(cp.true_residuals->input_norm());
            s.true_total.push_back(cp.true_residuals->total_norm());
            s.true_local.push_back(cp.true_residuals->local_norm());
        }
    }
    return s;
}

std::optional<std::size_t> selection_at(const RunSummary& run, std::int64_t budget) {
    const auto it = std::upper_bound(run.budgets.begin(), run.budgets.end(), budget);
    if (it == run.budgets.begin()) return std::nullopt;
    return run.selected[static_cast<std::size_t>(it - run.budgets.begin()) - 1];
}

namespace {

std::vector<std::int64_t> common_budgets(std::span<const RunSummary> runs) {
    std::set<std::int64_t> all;
    for (const auto& r : runs) all.insert(r.budgets.begin(), r.budgets.end());
    return {all.begin(), all.end()};
}

std::optional<std::size_t> index_at(const RunSummary& run, std::int64_t budget) {
    const auto it = std::upper_bound(run.budgets.begin(), run.budgets.end(), budget);
    if (it == run.budgets.begin()) return std::nullopt;
    return static_cast<std::size_t>(it - run.budgets.begin()) - 1;
}

}  // namespace

PcsCurve pcs_curve(std::span<const RunSummary> runs, std::size_t true_best) {
    PcsCurve curve;
    const auto reps = static_cast<std::int64_t>(runs.size());
    if (reps == 0) return curve;
    for (auto budget : common_budgets(runs)) {
        std::int64_t correct = 0;
        for (const auto& r : runs) {
            const auto sel = selection_at(r, budget);
            if (sel && *sel == true_best) ++correct;
        }
        const double p = static_cast<double>(correct) / static_cast<double>(reps);
        curve.points.push_back({budget, p, binomial_halfwidth(p, reps)});
    }
    return curve;
}

std::vector<ResidualPoint> residual_curve(std::span<const RunSummary> runs) {
    std::vector<ResidualPoint> out;
    for (auto budget : common_budgets(runs)) {
        ResidualPoint p;
        p.budget = budget;
        double n = 0.0, ti = 0.0, tt = 0.0, tl = 0.0, nt = 0.0;
        for (const auto& r : runs) {
            const auto k = index_at(r, budget);
            if (!k) continue;
            p.input += r.input[*k];
            p.total += r.total[*k];
            p.local += r.local[*k];
            n += 1.0;
            if (!r.true_input.empty()) {
                ti += r.true_input[*k];
                tt += r.true_total[*k];
                tl += r.true_local[*k];
                nt += 1.0;
            }
        }
        if (n > 0.0) {
            p.input /= n;
            p.total /= n;
            p.local /= n;
        }
        if (nt > 0.0) {
            p.true_input = ti / nt;
            p.true_total = tt / nt;
            p.true_local = tl / nt;
        }
        out.push_back(p);
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    const auto simulator = make_simulator(config.benchmark);
    return run_experiment(config, *simulator);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Simulator& simulator) {
    const auto started = std::chrono::steady_clock::now();
    if (config.procedures.empty()) throw ConfigError("no procedures to run");
    if (config.macro_reps < 1) throw ConfigError("macro_reps must be at least 1");
    const auto best = simulator.true_best();
    if (!best) throw ConfigError("benchmark has no known best design, so PCS is undefined");

    ExperimentResult result;
    result.config = config;
    result.true_best = *best;
    const auto reps = static_cast<std::size_t>(config.macro_reps);
    const std::size_t procs = config.procedures.size();
    for (const auto& kind : config.procedures) result.procedures.push_back({kind, std::vector<RunSummary>(reps), {}, {}});

    const fs::path traj_dir = fs::path(config.output_dir) / "trajectories";
    if (config.write_trajectories)
        for (const auto& kind : config.procedures) fs::create_directories(traj_dir / kind.name());

    RunOptions base_options;
    base_options.checkpoint_every = config.checkpoint_every;
    base_options.estimator = config.estimator;

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex io_mutex;
    std::string failure;

    auto work = [&] {
        while (!failed.load()) {
            const std::size_t rep = next.fetch_add(1);
            if (rep >= reps) return;
            const auto seeds = ReplicationSeeds::for_replication(config.seed, rep);
            try {
                RngStream schedule_rng(seeds.schedule);
                const auto schedule = materialize_schedule(config.schedule, simulator.num_designs(),
                                                           simulator.num_components(), schedule_rng);
                std::optional<InputTrack> known_track, uc_track;
                for (std::size_t p = 0; p < procs; ++p) {
                    const auto& kind = config.procedures[p];
                    RunOptions options = base_options;
                    options.replication = rep;
                    if (config.share_input_track) {
                        auto& track = kind.components_known ? known_track : uc_track;
                        if (!track)
                            track = build_input_track(simulator, schedule, kind.components_known, config.estimator,
                                                      seeds.input);
                        options.track = &*track;
                    }
                    const auto trajectory = run_procedure(simulator, schedule, kind, seeds, options);
                    result.procedures[p].runs[rep] = RunSummary::from(trajectory);
                    if (config.write_trajectories) {
                        char name[32];
                        std::snprintf(name, sizeof name, "rep_%05zu.jsonl", rep);
                        std::lock_guard lock(io_mutex);
                        std::ofstream out(traj_dir / kind.name() / name);
                        write_trajectory_jsonl(trajectory, out);
                        if (!out) throw std::runtime_error("cannot write trajectory file");
                    }
                }
            } catch (const std::exception& e) {
                std::lock_guard lock(io_mutex);
                if (!failed.exchange(true))
                    failure = "macro-replication " + std::to_string(rep) + " (base seed " + std::to_string(config.seed) +
                              ") failed: " + e.what();
                return;
            }
        }
    };

    unsigned workers = config.workers;
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, reps));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failed) throw Error(failure);

    for (auto& pr : result.procedures) {
        pr.curve = pcs_curve(pr.runs, result.true_best);
        pr.residuals = residual_curve(pr.runs);
    }
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

}  // namespace

void emit_outputs(const ExperimentResult& result, const std::string& dir) {
    fs::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
        return out;
    };
    Json final_pcs = Json::object();
    for (const auto& pr : result.procedures) {
        const auto name = pr.kind.name();
        {
            auto out = open("pcs_" + name + ".csv");
            out << "budget,pcs,ci_halfwidth\n";
            for (const auto& p : pr.curve.points) out << p.budget << ',' << fmt(p.pcs) << ',' << fmt(p.ci_halfwidth) << '\n';
        }
        {
            auto out = open("residuals_" + name + ".csv");
            out << "budget,input,total,local,true_input,true_total,true_local\n";
            for (const auto& p : pr.residuals)
                out << p.budget << ',' << fmt(p.input) << ',' << fmt(p.total) << ',' << fmt(p.local) << ','
                    << fmt(p.true_input) << ',' << fmt(p.true_total) << ',' << fmt(p.true_local) << '\n';
        }
        final_pcs[name] = pr.curve.final_pcs();
    }
    {
        Json summary = {{"config", config_to_json(result.config)},
                        {"true_best", result.true_best},
                        {"final_pcs", std::move(final_pcs)},
                        {"wall_clock_seconds", result.wall_seconds}};
        auto out = open("summary.json");
        out << summary.dump(2) << '\n';
    }
    {
        auto out = open("plot.gp");
        out << "set datafile separator ','\n"
               "set key bottom right\n"
               "set xlabel 'total simulation budget'\n"
               "set ylabel 'PCS'\n"
               "set yrange [0:1]\n"
               "set terminal pngcairo size 900,600\n"
               "set output 'pcs.png'\n"
               "plot";
        for (std::size_t p = 0; p < result.procedures.size(); ++p) {
            const auto name = result.procedures[p].kind.name();
            out << (p ? ", \\\n    " : " ") << "'pcs_" << name << ".csv' using 1:2 every ::1 with lines title '" << name
                << "'";
        }
        out << '\n';
    }
}

SlopeFit fit_log_log(const std::string& quantity, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("slope fit needs paired samples");
    std::vector<double> lx, ly;
    for (std::size_t k = 0; k < x.size(); ++k)
        if (x[k] > 0.0 && y[k] > 0.0 && std::isfinite(y[k])) {
            lx.push_back(std::log(x[k]));
            ly.push_back(std::log(y[k]));
        }
    SlopeFit fit;
    fit.quantity = quantity;
    fit.points = lx.size();
    if (lx.size() < 2) return fit;
    const double n = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
        sxx += (lx[k] - mx) * (lx[k] - mx);
        sxy += (lx[k] - mx) * (ly[k] - my);
        syy += (ly[k] - my) * (ly[k] - my);
    }
    if (sxx <= 0.0) return fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
    return fit;
}

double theil_sen_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("slope fit needs paired samples");
    std::vector<double> slopes;
    for (std::size_t a = 0; a < x.size(); ++a)
        for (std::size_t b = a + 1; b < x.size(); ++b)
            if (x[b] != x[a]) slopes.push_back((y[b] - y[a]) / (x[b] - x[a]));
    if (slopes.empty()) throw std::invalid_argument("slope fit needs two distinct abscissae");
    const std::size_t mid = slopes.size() / 2;
    std::nth_element(slopes.begin(), slopes.begin() + static_cast<std::ptrdiff_t>(mid), slopes.end());
    double median = slopes[mid];
    if (slopes.size() % 2 == 0) {
        const double lower = *std::max_element(slopes.begin(), slopes.begin() + static_cast<std::ptrdiff_t>(mid));
        median = 0.5 * (median + lower);
    }
    return median;
}

ProbeReport run_convergence_probe(const ExperimentConfig& config) {
    const auto simulator = make_simulator(config.benchmark);
    return run_convergence_probe(config, *simulator);
}

ProbeReport run_convergence_probe(const ExperimentConfig& config, const Simulator& simulator) {
    const auto kind = ProcedureKind::parse(config.probe.procedure);
    if (kind.base != ProcedureBase::IuOcbaApprox && kind.base != ProcedureBase::IuOcbaBalance)
        throw ConfigError("the convergence probe runs an IU procedure");
    if (config.schedule.kind != ScheduleKind::Constant)
        throw ConfigError("the convergence probe needs a constant (linear) schedule");
    const auto seeds = ReplicationSeeds::for_replication(config.seed, 0);
    RngStream schedule_rng(seeds.schedule);
    const auto schedule =
        materialize_schedule(config.schedule, simulator.num_designs(), simulator.num_components(), schedule_rng);
    RunOptions options;
    options.checkpoint_every = config.checkpoint_every;
    options.estimator = config.estimator;

    ProbeReport report;
    report.procedure = kind.name();
    report.trajectory = run_procedure(simulator, schedule, kind, seeds, options);

    std::vector<double> budget, alpha_err, input, total, w_err;
    for (const auto& cp : report.trajectory.checkpoints) {
        if (cp.budget_used < config.probe.fit_from) continue;
        budget.push_back(static_cast<double>(cp.budget_used));
        alpha_err.push_back(cp.alpha_error.value_or(std::nan("")));
        input.push_back(cp.true_residuals ? cp.true_residuals->input_norm() : std::nan(""));
        total.push_back(cp.true_residuals ? cp.true_residuals->total_norm() : std::nan(""));
        w_err.push_back(cp.w_error.value_or(std::nan("")));
    }
    if (budget.size() < 10)
        throw InsufficientCheckpoints("only " + std::to_string(budget.size()) +
                                      " checkpoints in the fit window; at least 10 are needed");
    if (!simulator.true_estimate()) throw ConfigError("the convergence probe needs a benchmark with known truth");
    if (kind.base == ProcedureBase::IuOcbaApprox) {
        report.fits.push_back(fit_log_log("alpha_error", budget, alpha_err));
    } else {
        report.fits.push_back(fit_log_log("input_residual", budget, input));
        report.fits.push_back(fit_log_log("total_residual", budget, total));
    }
    report.fits.push_back(fit_log_log("w_error", budget, w_err));
    return report;
}

MleRateReport run_mle_rate_probe(const MixtureModel& truth, const MleProbeConfig& probe,
                                 const EstimatorSettings& settings, std::uint64_t seed) {
    if (probe.points < 2 || probe.t_min < 1 || probe.t_max <= probe.t_min || probe.streams < 1 || probe.batch < 1)
        throw std::invalid_argument("invalid MLE probe settings");
    std::vector<std::int64_t> checkpoints;
    const double lo = std::log(static_cast<double>(probe.t_min));
    const double hi = std::log(static_cast<double>(probe.t_max));
    for (int k = 0; k < probe.points; ++k) {
        const auto t = static_cast<std::int64_t>(std::llround(std::exp(lo + (hi - lo) * k / (probe.points - 1))));
        if (checkpoints.empty() || t > checkpoints.back()) checkpoints.push_back(t);
    }
    MleRateReport report;
    report.mean_error.assign(checkpoints.size(), 0.0);
    for (auto t : checkpoints) report.stages.push_back(static_cast<double>(t));

    for (int s = 0; s < probe.streams; ++s) {
        RngStream rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
        ComponentDensities densities(truth.components());
        std::vector<double> w = MixtureModel::uniform(truth.components()).weights();
        std::int64_t stage = 0;
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            const std::int64_t arriving = (checkpoints[c] - stage) * probe.batch;
            densities.append(sample_input_data(truth, static_cast<std::size_t>(arriving), rng));
            stage = checkpoints[c];
            const auto fit = estimate_weights_mle(densities, settings.em_tol, settings.em_max_iter, w);
            w = fit.weights;
            double err = 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) err = std::max(err, std::abs(w[j] - truth.weights()[j]));
            report.mean_error[c] += err / probe.streams;
        }
    }
    report.fit = fit_log_log("w_error", report.stages, report.mean_error);
    return report;
}

Json probe_report_to_json(const ProbeReport& report, const std::optional<MleRateReport>& mle) {
    Json fits = Json::array();
    for (const auto& f : report.fits)
        fits.push_back({{"quantity", f.quantity},
                        {"slope", f.slope},
                        {"intercept", f.intercept},
                        {"r_squared", f.r_squared},
                        {"points", f.points}});
    Json out = {{"procedure", report.procedure},
                {"checkpoints", report.trajectory.checkpoints.size()},
                {"final_budget", report.trajectory.checkpoints.empty() ? 0 : report.trajectory.checkpoints.back().budget_used},
                {"fits", std::move(fits)}};
    if (mle) {
        out["mle"] = {{"stages", mle->stages},
                      {"mean_error", mle->mean_error},
                      {"slope", mle->fit.slope},
                      {"r_squared", mle->fit.r_squared}};
    }
    return out;
}

}  // namespace rns
