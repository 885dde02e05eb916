#include "rns/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "rns/errors.hpp"

namespace rns {

namespace {

std::vector<double> normalize(std::vector<double> w, std::size_t expected) {
    if (w.size() != expected) throw std::invalid_argument("weight vector length must match component count");
    double total = 0.0;
    for (double x : w) {
        if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("weights must be nonnegative");
        total += x;
    }
    if (!(total > 0.0)) throw std::invalid_argument("weights must have positive total");
    for (auto& x : w) x /= total;
    return w;
}

std::size_t pick_component(const std::vector<double>& weights, double u) {
    double cumulative = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        cumulative += weights[j];
        if (u < cumulative) return j;
    }
    // u landed in the rounding slack above the last cumulative sum
    for (std::size_t j = weights.size(); j-- > 0;)
        if (weights[j] > 0.0) return j;
    return 0;
}

double draw_component(const Component& c, RngStream& rng) {
    switch (c.family()) {
        case Family::Normal:
            return rng.normal(c.mean(), c.stddev());
    }
    throw std::logic_error("unknown component family");
}

}  // namespace

std::optional<ProblemEstimate> Simulator::true_estimate() const {
    const std::size_t k = num_designs();
    const std::size_t d = num_components();
    Matrix mu(k, d), sigma(k, d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const auto m = true_pair_mean(i, j);
            const auto s = true_pair_stddev(i, j);
            if (!m || !s) return std::nullopt;
            mu(i, j) = *m;
            sigma(i, j) = *s;
        }
    return ProblemEstimate(std::move(mu), std::move(sigma), input_distribution().weights());
}

QuadraticConfig QuadraticConfig::defaults() {
    QuadraticConfig c;
    for (int j = 1; j <= 5; ++j) {
        c.eta.push_back(j - 1);
        c.weights.push_back(j + 5);
    }
    c.theta = c.eta;
    c.sigma_zeta = 1.0;
    for (int i = 1; i <= 10; ++i) c.designs.push_back(0.5 * (i - 1));
    return c;
}

namespace {

MixtureModel quadratic_input(QuadraticConfig& c) {
    const std::size_t d = c.eta.size();
    if (d == 0) throw std::invalid_argument("quadratic problem needs at least one component");
    if (c.designs.empty()) throw std::invalid_argument("quadratic problem needs at least one design");
    if (c.theta.empty()) c.theta = c.eta;
    if (c.theta.size() != d) throw std::invalid_argument("theta length must match eta");
    if (!(c.sigma_zeta >= 0.0)) throw std::invalid_argument("sigma_zeta must be nonnegative");
    c.weights = normalize(c.weights, d);
    // a noise-free problem still needs a valid component for data generation
    const double sd = std::max(c.sigma_zeta, 1e-12);
    std::vector<Component> comps;
    for (std::size_t j = 0; j < d; ++j) comps.push_back(Component::normal(c.theta[j], sd));
    return MixtureModel(std::move(comps), c.weights);
}

}  // namespace

QuadraticProblem::QuadraticProblem(QuadraticConfig config)
    : config_(std::move(config)), input_(quadratic_input(config_)) {}

double QuadraticProblem::simulate(std::size_t i, std::size_t j, std::span<const double> theta_override,
                                  RngStream& rng) const {
    const double x = config_.designs.at(i);
    const double eta = config_.eta.at(j);
    double zeta;
    if (theta_override.empty()) {
        zeta = config_.sigma_zeta > 0.0 ? rng.normal(config_.theta[j], config_.sigma_zeta) : config_.theta[j];
    } else {
        if (theta_override.size() < 2) throw SimulatorFailure("quadratic override needs (mean, stddev)");
        zeta = rng.normal(theta_override[0], theta_override[1]);
    }
    const double out = -((x - eta) * (x - eta) + zeta);
    if (!std::isfinite(out)) throw SimulatorFailure("quadratic output is not finite");
    return out;
}

std::optional<double> QuadraticProblem::true_pair_mean(std::size_t i, std::size_t j) const {
    const double dx = config_.designs.at(i) - config_.eta.at(j);
    return -(dx * dx + config_.theta.at(j));
}

std::optional<double> QuadraticProblem::true_pair_stddev(std::size_t i, std::size_t j) const {
    (void)config_.designs.at(i);
    (void)config_.eta.at(j);
    return config_.sigma_zeta;
}

std::optional<std::size_t> QuadraticProblem::true_best() const { return quadratic_true_best(*this); }

std::size_t quadratic_true_best(const QuadraticProblem& problem) {
    const auto& c = problem.config();
    std::vector<double> objective(c.designs.size(), 0.0);
    for (std::size_t i = 0; i < c.designs.size(); ++i)
        for (std::size_t j = 0; j < c.eta.size(); ++j) {
            const double dx = c.designs[i] - c.eta[j];
            objective[i] += c.weights[j] * dx * dx;
        }
    const double lowest = *std::min_element(objective.begin(), objective.end());
    const double slack = 1e-12 * std::max(1.0, std::abs(lowest));
    for (std::size_t i = 0; i < objective.size(); ++i)
        if (objective[i] <= lowest + slack) return i;
    return 0;
}

PortfolioConfig PortfolioConfig::defaults() {
    PortfolioConfig c;
    for (int j = 1; j <= 8; ++j) {
        c.component_means.push_back(0.2 * j);
        c.weights.push_back(j + 4);
    }
    for (int i = 0; i <= 10; ++i) c.designs.push_back(0.1 * i);
    return c;
}

namespace {

MixtureModel portfolio_input(PortfolioConfig& c) {
    const std::size_t d = c.component_means.size();
    if (d == 0) throw std::invalid_argument("portfolio problem needs at least one component");
    if (c.designs.empty()) throw std::invalid_argument("portfolio problem needs at least one design");
    if (!(c.sigma >= 0.0) || !(c.horizon > 0.0) || !(c.s0 > 0.0))
        throw std::invalid_argument("portfolio parameters out of range");
    c.weights = normalize(c.weights, d);
    std::vector<Component> comps;
    for (double m : c.component_means) comps.push_back(Component::normal(m, c.component_stddev));
    return MixtureModel(std::move(comps), c.weights);
}

}  // namespace

PortfolioProblem::PortfolioProblem(PortfolioConfig config)
    : config_(std::move(config)), input_(portfolio_input(config_)) {}

double PortfolioProblem::output(std::size_t i, double y, double z) const {
    const auto& c = config_;
    const double x = c.designs.at(i);
    const double t = c.horizon;
    const double s2 = c.sigma * c.sigma;
    return x * c.s0 * std::exp((y - s2 / 2.0) * t + c.sigma * z) + (1.0 - x) * c.s0 * std::exp(c.rate * t) -
           c.rho * x * x * c.s0 * c.s0 * std::exp(2.0 * y * t) * std::expm1(s2 * t);
}

double PortfolioProblem::simulate(std::size_t i, std::size_t j, std::span<const double> theta_override,
                                  RngStream& rng) const {
    double mean = config_.component_means.at(j);
    double sd = config_.component_stddev;
    if (!theta_override.empty()) {
        if (theta_override.size() < 2) throw SimulatorFailure("portfolio override needs (mean, stddev)");
        mean = theta_override[0];
        sd = theta_override[1];
    }
    const double y = rng.normal(mean, sd);
    const double z = rng.normal(0.0, std::sqrt(config_.horizon));
    const double out = output(i, y, z);
    if (!std::isfinite(out)) throw SimulatorFailure("portfolio output is not finite");
    return out;
}

namespace {

struct PortfolioMoments {
    double mean;
    double variance;
};

// With U = (y - sigma^2/2)T + sigma z and V = 2yT jointly normal, X = x S0 e^U + c - k e^V.
PortfolioMoments portfolio_moments(const PortfolioConfig& c, double x, double theta, double s) {
    const double t = c.horizon;
    const double s2 = c.sigma * c.sigma;
    const double mu_u = (theta - s2 / 2.0) * t;
    const double var_u = s * s * t * t + s2 * t;
    const double mu_v = 2.0 * theta * t;
    const double var_v = 4.0 * s * s * t * t;
    const double cov_uv = 2.0 * s * s * t * t;
    const double a = x * c.s0;
    const double k = c.rho * x * x * c.s0 * c.s0 * std::expm1(s2 * t);
    const double konst = (1.0 - x) * c.s0 * std::exp(c.rate * t);
    const double ea = std::exp(mu_u + var_u / 2.0);
    const double eb = std::exp(mu_v + var_v / 2.0);
    const double var_a = std::exp(2.0 * mu_u + var_u) * std::expm1(var_u);
    const double var_b = std::exp(2.0 * mu_v + var_v) * std::expm1(var_v);
    const double cov_ab = ea * eb * std::expm1(cov_uv);
    return {a * ea + konst - k * eb, a * a * var_a + k * k * var_b - 2.0 * a * k * cov_ab};
}

}  // namespace

std::optional<double> PortfolioProblem::true_pair_mean(std::size_t i, std::size_t j) const {
    return portfolio_moments(config_, config_.designs.at(i), config_.component_means.at(j), config_.component_stddev)
        .mean;
}

std::optional<double> PortfolioProblem::true_pair_stddev(std::size_t i, std::size_t j) const {
    const auto m =
        portfolio_moments(config_, config_.designs.at(i), config_.component_means.at(j), config_.component_stddev);
    return std::sqrt(std::max(m.variance, 0.0));
}

std::optional<std::size_t> PortfolioProblem::true_best() const {
    const auto est = true_estimate();
    return best_design(*est);
}

LabeledSample sample_input_data_labeled(const MixtureModel& model, std::size_t m, RngStream& rng) {
    LabeledSample out;
    out.values.reserve(m);
    out.labels.reserve(m);
    for (std::size_t s = 0; s < m; ++s) {
        const std::size_t j = pick_component(model.weights(), rng.uniform());
        out.labels.push_back(j);
        out.values.push_back(draw_component(model.component(j), rng));
    }
    return out;
}

std::vector<double> sample_input_data(const MixtureModel& model, std::size_t m, RngStream& rng) {
    return sample_input_data_labeled(model, m, rng).values;
}

}  // namespace rns
