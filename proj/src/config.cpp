#include "rns/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "rns/errors.hpp"

namespace rns {

namespace {

// Field access that rejects unknown keys, so typos in configs surface as errors.
class Fields {
public:
    Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const Json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError(where_ + "." + key + " is required");
        return j_.at(key);
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return as<T>(key);
    }

    template <typename T>
    T as(const std::string& key) {
        const Json& v = at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError("");
                }
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError(where_ + "." + key + " has the wrong type");
        }
    }

    std::vector<double> doubles(const std::string& key, std::vector<double> fallback) {
        if (!has(key)) return fallback;
        const Json& v = at(key);
        if (!v.is_array()) throw ConfigError(where_ + "." + key + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) throw ConfigError(where_ + "." + key + " must be an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown field " + where_ + "." + key);
    }

    const std::string& where() const { return where_; }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

BenchmarkConfig parse_benchmark(const Json& j) {
    BenchmarkConfig out;
    Fields f(j, "benchmark");
    const auto name = f.as<std::string>("name");
    if (name == "quadratic") {
        out.name = BenchmarkName::Quadratic;
        auto& q = out.quadratic;
        q.eta = f.doubles("eta", q.eta);
        q.weights = f.doubles("weights", q.weights);
        q.theta = f.doubles("theta", f.has("eta") ? q.eta : q.theta);
        q.sigma_zeta = f.get("sigma_zeta", q.sigma_zeta);
        q.designs = f.doubles("designs", q.designs);
    } else if (name == "portfolio") {
        out.name = BenchmarkName::Portfolio;
        auto& p = out.portfolio;
        p.sigma = f.get("sigma", p.sigma);
        p.horizon = f.get("horizon", p.horizon);
        p.rate = f.get("rate", p.rate);
        p.rho = f.get("rho", p.rho);
        p.s0 = f.get("s0", p.s0);
        p.component_means = f.doubles("component_means", p.component_means);
        p.component_stddev = f.get("component_stddev", p.component_stddev);
        p.weights = f.doubles("weights", p.weights);
        p.designs = f.doubles("designs", p.designs);
    } else {
        throw ConfigError("benchmark.name must be \"quadratic\" or \"portfolio\"");
    }
    f.finish();
    try {
        make_simulator(out);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("benchmark: ") + e.what());
    }
    return out;
}

ScheduleSpec parse_schedule(const Json& j) {
    ScheduleSpec s;
    Fields f(j, "schedule");
    const auto kind = f.get<std::string>("kind", "constant");
    s.n0 = f.get<std::int64_t>("n0", s.n0);
    s.m0 = f.get<std::int64_t>("m0", s.m0);
    if (kind == "constant" || kind == "linear") {
        s.kind = ScheduleKind::Constant;
        s.m = f.get<std::int64_t>("m", s.m);
        s.n = f.get<std::int64_t>("n", s.n);
    } else if (kind == "random") {
        s.kind = ScheduleKind::Random;
        s.m = f.get<std::int64_t>("base_m", s.m);
        s.n = f.get<std::int64_t>("base_n", s.n);
        if (f.has("multipliers")) {
            const Json& v = f.at("multipliers");
            if (!v.is_array() || v.empty()) throw ConfigError("schedule.multipliers must be a nonempty array");
            s.multipliers.clear();
            for (const auto& z : v) {
                if (!z.is_number_integer() || z.get<std::int64_t>() < 0)
                    throw ConfigError("schedule.multipliers must hold nonnegative integers");
                s.multipliers.push_back(z.get<std::int64_t>());
            }
        }
    } else {
        throw ConfigError("schedule.kind must be \"constant\" or \"random\"");
    }
    f.finish();
    if (s.n0 < 2) throw ConfigError("schedule.n0 must be at least 2");
    if (s.m0 < 0 || s.m < 0 || s.n < 0) throw ConfigError("schedule sizes must be nonnegative");
    if (s.kind == ScheduleKind::Constant && s.n == 0) throw ConfigError("schedule.n must be positive");
    return s;
}

EstimatorSettings parse_estimator(const Json& j) {
    EstimatorSettings e;
    Fields f(j, "input_model");
    e.em_tol = f.get("em_tol", e.em_tol);
    e.em_max_iter = f.get("em_max_iter", e.em_max_iter);
    e.gmm_tol = f.get("gmm_tol", e.gmm_tol);
    e.gmm_max_iter = f.get("gmm_max_iter", e.gmm_max_iter);
    if (f.has("stddev_known")) e.gmm_stddev = f.as<double>("stddev_known");
    f.finish();
    if (!(e.em_tol > 0.0) || !(e.gmm_tol > 0.0)) throw ConfigError("input_model tolerances must be positive");
    if (e.em_max_iter < 1 || e.gmm_max_iter < 1) throw ConfigError("input_model iteration caps must be positive");
    if (e.gmm_stddev && !(*e.gmm_stddev > 0.0)) throw ConfigError("input_model.stddev_known must be positive");
    return e;
}

ProbeConfig parse_probe(const Json& j) {
    ProbeConfig p;
    Fields f(j, "probe");
    p.procedure = f.get<std::string>("procedure", p.procedure);
    p.fit_from = f.get<std::int64_t>("fit_from", p.fit_from);
    if (f.has("mle")) {
        MleProbeConfig m;
        Fields g(f.at("mle"), "probe.mle");
        m.batch = g.get<std::int64_t>("batch", m.batch);
        m.t_min = g.get<std::int64_t>("t_min", m.t_min);
        m.t_max = g.get<std::int64_t>("t_max", m.t_max);
        m.points = g.get<int>("points", m.points);
        m.streams = g.get<int>("streams", m.streams);
        g.finish();
        if (m.batch < 1 || m.t_min < 1 || m.t_max <= m.t_min || m.points < 2 || m.streams < 1)
            throw ConfigError("probe.mle needs batch >= 1, 1 <= t_min < t_max, points >= 2, streams >= 1");
        p.mle = m;
    }
    f.finish();
    try {
        ProcedureKind::parse(p.procedure);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("probe.procedure: ") + e.what());
    }
    return p;
}

}  // namespace

std::unique_ptr<Simulator> make_simulator(const BenchmarkConfig& benchmark) {
    switch (benchmark.name) {
        case BenchmarkName::Quadratic:
            return std::make_unique<QuadraticProblem>(benchmark.quadratic);
        case BenchmarkName::Portfolio:
            return std::make_unique<PortfolioProblem>(benchmark.portfolio);
    }
    throw std::logic_error("unknown benchmark");
}

ExperimentConfig parse_config(const Json& j) {
    ExperimentConfig c;
    Fields f(j, "config");
    c.benchmark = parse_benchmark(f.at("benchmark"));
    if (f.has("procedures")) {
        const Json& v = f.at("procedures");
        if (!v.is_array()) throw ConfigError("config.procedures must be an array of names");
        for (const auto& p : v) {
            if (!p.is_string()) throw ConfigError("config.procedures must be an array of names");
            try {
                c.procedures.push_back(ProcedureKind::parse(p.get<std::string>()));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
    } else {
        for (auto base : {ProcedureBase::Equal, ProcedureBase::EqualOcbaApprox, ProcedureBase::EqualOcbaBalance,
                          ProcedureBase::IuOcbaApprox, ProcedureBase::IuOcbaBalance})
            c.procedures.push_back({base, true});
    }
    if (c.procedures.empty()) throw ConfigError("config.procedures must not be empty");
    if (f.has("schedule")) c.schedule = parse_schedule(f.at("schedule"));
    c.schedule.total_budget = f.get<std::int64_t>("total_budget", c.schedule.total_budget);
    c.macro_reps = f.get<std::int64_t>("macro_reps", c.macro_reps);
    c.seed = f.get<std::uint64_t>("seed", c.seed);
    c.checkpoint_every = f.get<std::int64_t>("checkpoint_every", c.checkpoint_every);
    c.output_dir = f.get<std::string>("output_dir", c.output_dir);
    c.workers = f.get<unsigned>("workers", c.workers);
    c.write_trajectories = f.get<bool>("write_trajectories", c.write_trajectories);
    c.share_input_track = f.get<bool>("share_input_track", c.share_input_track);
    if (f.has("input_model")) c.estimator = parse_estimator(f.at("input_model"));
    if (f.has("probe")) c.probe = parse_probe(f.at("probe"));
    f.finish();

    if (c.macro_reps < 1) throw ConfigError("config.macro_reps must be at least 1");
    if (c.checkpoint_every < 1) throw ConfigError("config.checkpoint_every must be positive");
    const auto sim = make_simulator(c.benchmark);
    const auto init = static_cast<std::int64_t>(sim->num_designs() * sim->num_components()) * c.schedule.n0;
    if (c.schedule.total_budget < init) throw ConfigError("config.total_budget is below K*D*n0");
    for (const auto& p : c.procedures)
        if (!p.components_known && c.schedule.m0 < 1)
            throw ConfigError("procedure " + p.name() + " needs schedule.m0 >= 1 to fit components before simulating");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(j);
}

Json config_to_json(const ExperimentConfig& c) {
    Json bench;
    if (c.benchmark.name == BenchmarkName::Quadratic) {
        const auto& q = c.benchmark.quadratic;
        bench = {{"name", "quadratic"}, {"eta", q.eta},         {"weights", q.weights},
                 {"theta", q.theta},    {"sigma_zeta", q.sigma_zeta}, {"designs", q.designs}};
    } else {
        const auto& p = c.benchmark.portfolio;
        bench = {{"name", "portfolio"},
                 {"sigma", p.sigma},
                 {"horizon", p.horizon},
                 {"rate", p.rate},
                 {"rho", p.rho},
                 {"s0", p.s0},
                 {"component_means", p.component_means},
                 {"component_stddev", p.component_stddev},
                 {"weights", p.weights},
                 {"designs", p.designs}};
    }
    Json procs = Json::array();
    for (const auto& p : c.procedures) procs.push_back(p.name());
    Json schedule;
    const auto& s = c.schedule;
    if (s.kind == ScheduleKind::Constant)
        schedule = {{"kind", "constant"}, {"n0", s.n0}, {"m0", s.m0}, {"m", s.m}, {"n", s.n}};
    else
        schedule = {{"kind", "random"}, {"n0", s.n0},         {"m0", s.m0},
                    {"base_m", s.m},    {"base_n", s.n},      {"multipliers", s.multipliers}};
    Json estimator = {{"em_tol", c.estimator.em_tol},
                      {"em_max_iter", c.estimator.em_max_iter},
                      {"gmm_tol", c.estimator.gmm_tol},
                      {"gmm_max_iter", c.estimator.gmm_max_iter},
                      {"stddev_known", c.estimator.gmm_stddev ? Json(*c.estimator.gmm_stddev) : Json(nullptr)}};
    Json probe = {{"procedure", c.probe.procedure}, {"fit_from", c.probe.fit_from}};
    if (c.probe.mle) {
        const auto& m = *c.probe.mle;
        probe["mle"] = {{"batch", m.batch},   {"t_min", m.t_min},     {"t_max", m.t_max},
                        {"points", m.points}, {"streams", m.streams}};
    }
    return {{"benchmark", std::move(bench)},
            {"procedures", std::move(procs)},
            {"schedule", std::move(schedule)},
            {"total_budget", s.total_budget},
            {"macro_reps", c.macro_reps},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"output_dir", c.output_dir},
            {"workers", c.workers},
            {"write_trajectories", c.write_trajectories},
            {"share_input_track", c.share_input_track},
            {"input_model", std::move(estimator)},
            {"probe", std::move(probe)}};
}

}  // namespace rns
