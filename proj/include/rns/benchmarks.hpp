#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rns/allocation.hpp"
#include "rns/input_model.hpp"
#include "rns/rng.hpp"

namespace rns {

// A stochastic simulation model over K designs and D input components. Implementations
// must be stateless given the rng so that identical rng states reproduce identical outputs.
class Simulator {
public:
    virtual ~Simulator() = default;

    virtual std::size_t num_designs() const = 0;
    virtual std::size_t num_components() const = 0;

    // One output for design i with the input drawn from component j. A nonempty
    // theta_override replaces that component's parameters (same layout as Component::params).
    virtual double simulate(std::size_t i, std::size_t j, std::span<const double> theta_override,
                            RngStream& rng) const = 0;

    // The true input distribution that generates the streamed data.
    virtual const MixtureModel& input_distribution() const = 0;

    virtual std::optional<double> true_pair_mean(std::size_t, std::size_t) const { return std::nullopt; }
    virtual std::optional<double> true_pair_stddev(std::size_t, std::size_t) const { return std::nullopt; }
    virtual std::optional<std::size_t> true_best() const { return std::nullopt; }

    // True (mu, sigma, w^c) when every pair moment is known.
    std::optional<ProblemEstimate> true_estimate() const;
};

struct QuadraticConfig {
    std::vector<double> eta;        // eta_j
    std::vector<double> weights;    // w^c, normalized on construction
    std::vector<double> theta;      // mean of the input noise in component j
    double sigma_zeta = 1.0;        // stddev of the input noise
    std::vector<double> designs;    // x_i

    // D=5, eta_j = j-1, w_j proportional to j+5, theta = eta, sigma_zeta = 1, x_i = 0.5(i-1) for i=1..10.
    static QuadraticConfig defaults();
};

// Emits -[(x_i - eta_j)^2 + zeta] with zeta ~ Normal(theta_j, sigma_zeta), so larger is better.
class QuadraticProblem final : public Simulator {
public:
    explicit QuadraticProblem(QuadraticConfig config = QuadraticConfig::defaults());

    std::size_t num_designs() const override { return config_.designs.size(); }
    std::size_t num_components() const override { return config_.eta.size(); }
    double simulate(std::size_t i, std::size_t j, std::span<const double> theta_override,
                    RngStream& rng) const override;
    const MixtureModel& input_distribution() const override { return input_; }
    std::optional<double> true_pair_mean(std::size_t i, std::size_t j) const override;
    std::optional<double> true_pair_stddev(std::size_t i, std::size_t j) const override;
    std::optional<std::size_t> true_best() const override;

    const QuadraticConfig& config() const noexcept { return config_; }

private:
    QuadraticConfig config_;
    MixtureModel input_;
};

// argmin_i sum_j w_j (x_i - eta_j)^2. Objectives within 1e-12 relative of the minimum count
// as tied and the lowest index wins, so exact ties do not depend on rounding.
std::size_t quadratic_true_best(const QuadraticProblem& problem);

struct PortfolioConfig {
    double sigma = 0.1;  // stock volatility
    double horizon = 3.0;  // T
    double rate = 0.2;  // riskless rate r
    double rho = 0.3;  // risk aversion
    double s0 = 1.0;  // initial price, also the initial wealth
    std::vector<double> component_means;  // means of the drift components
    double component_stddev = 0.1;
    std::vector<double> weights;  // w^c, normalized on construction
    std::vector<double> designs;  // fraction invested in the stock

    // D=8 drift components Normal(0.2j, 0.1) with w_j proportional to j+4, x_i = 0.1 i for i=0..10.
    static PortfolioConfig defaults();
};

// Mean-variance portfolio: y ~ drift component j, z ~ Normal(0, T),
// X = x S0 exp[(y - sigma^2/2)T + sigma z] + (1-x) S0 e^{rT} - rho x^2 S0^2 e^{2yT}(e^{sigma^2 T} - 1).
class PortfolioProblem final : public Simulator {
public:
    explicit PortfolioProblem(PortfolioConfig config = PortfolioConfig::defaults());

    std::size_t num_designs() const override { return config_.designs.size(); }
    std::size_t num_components() const override { return config_.component_means.size(); }
    double simulate(std::size_t i, std::size_t j, std::span<const double> theta_override,
                    RngStream& rng) const override;
    const MixtureModel& input_distribution() const override { return input_; }
    std::optional<double> true_pair_mean(std::size_t i, std::size_t j) const override;
    std::optional<double> true_pair_stddev(std::size_t i, std::size_t j) const override;
    std::optional<std::size_t> true_best() const override;

    // The output for fixed drift y and Brownian value z.
    double output(std::size_t i, double y, double z) const;
    const PortfolioConfig& config() const noexcept { return config_; }

private:
    PortfolioConfig config_;
    MixtureModel input_;
};

// m i.i.d. draws from the mixture: a component by weight, then a draw from it.
std::vector<double> sample_input_data(const MixtureModel& model, std::size_t m, RngStream& rng);

struct LabeledSample {
    std::vector<double> values;
    std::vector<std::size_t> labels;
};
// Same draws as sample_input_data, with the latent component of each value.
LabeledSample sample_input_data_labeled(const MixtureModel& model, std::size_t m, RngStream& rng);

}  // namespace rns
