#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rns/benchmarks.hpp"
#include "rns/errors.hpp"

using namespace rns;
using Catch::Approx;

namespace {

struct Moments {
    double mean = 0, variance = 0, mean_se = 0, variance_se = 0;
};

template <typename Draw>
Moments monte_carlo(Draw draw, int n) {
    // two passes: centre first, then accumulate central moments
    std::vector<double> xs(n);
    double sum = 0;
    for (auto& x : xs) sum += (x = draw());
    Moments m;
    m.mean = sum / n;
    double m2 = 0, m4 = 0;
    for (double x : xs) {
        const double d = x - m.mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m.variance = m2 / (n - 1);
    m.mean_se = std::sqrt(m.variance / n);
    m.variance_se = std::sqrt(std::max(m4 / n - m.variance * m.variance, 0.0) / n);
    return m;
}

// Closed-form lognormal moments: E e^{yT} with y ~ Normal(theta, s) and the Brownian factor
// integrating to one.
double portfolio_mean_oracle(const PortfolioConfig& c, double x, double theta) {
    const double t = c.horizon, s = c.component_stddev;
    return x * c.s0 * std::exp(theta * t + s * s * t * t / 2) + (1 - x) * c.s0 * std::exp(c.rate * t) -
           c.rho * x * x * c.s0 * c.s0 * std::exp(2 * theta * t + 2 * s * s * t * t) *
               (std::exp(c.sigma * c.sigma * t) - 1);
}

}  // namespace

TEST_CASE("quadratic default configuration", "[benchmarks]") {
    const QuadraticProblem q;
    CHECK(q.num_designs() == 10);
    CHECK(q.num_components() == 5);
    const auto& w = q.input_distribution().weights();
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(w[j] == Approx((j + 6) / 40.0).epsilon(1e-15));
        CHECK(q.config().designs[j] == 0.5 * j);
        CHECK(q.input_distribution().component(j).mean() == q.config().eta[j]);
    }
    CHECK(q.true_best() == std::optional<std::size_t>(4));
}

TEST_CASE("quadratic simulate examples", "[benchmarks]") {
    auto config = QuadraticConfig::defaults();
    config.sigma_zeta = 0.0;
    const QuadraticProblem q(config);
    RngStream rng(1);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const double dx = config.designs[i] - config.eta[j];
            CHECK(q.simulate(i, j, {}, rng) == -(dx * dx + config.theta[j]));
        }
    // x_i = eta_j: design 2j
    for (std::size_t j = 0; j < 5; ++j) CHECK(q.simulate(2 * j, j, {}, rng) == -config.eta[j]);
    CHECK(q.true_pair_stddev(0, 0) == 0.0);
    const std::vector<double> override = {10.0, 1e-300};
    CHECK(q.simulate(0, 0, override, rng) == Approx(-10.0));
    CHECK_THROWS_AS(q.simulate(0, 0, std::vector<double>{1.0}, rng), SimulatorFailure);
}

TEST_CASE("quadratic simulator is reproducible from the rng state", "[benchmarks]") {
    const QuadraticProblem q;
    RngStream a(123), b(123);
    for (int k = 0; k < 100; ++k) CHECK(q.simulate(k % 10, k % 5, {}, a) == q.simulate(k % 10, k % 5, {}, b));
}

TEST_CASE("quadratic Monte Carlo moments match the closed form", "[benchmarks]") {
    const QuadraticProblem q;
    RngStream rng(2);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const auto m = monte_carlo([&] { return q.simulate(i, j, {}, rng); }, 100000);
            CHECK(std::abs(m.mean - *q.true_pair_mean(i, j)) <= 4 * 1.0 / std::sqrt(1e5));
            CHECK(std::abs(m.variance - 1.0) <= 4 * m.variance_se);
        }
}

TEST_CASE("quadratic true best", "[benchmarks]") {
    const QuadraticProblem q;
    // exhaustive scan of the objective against the negated means
    const auto est = *q.true_estimate();
    std::size_t scan = 0;
    double lowest = 1e300;
    for (std::size_t i = 0; i < 10; ++i) {
        double obj = 0;
        for (std::size_t j = 0; j < 5; ++j) {
            const double dx = q.config().designs[i] - q.config().eta[j];
            obj += q.config().weights[j] * dx * dx;
        }
        CHECK(-aggregate_mean(est, i) == Approx(obj + 2.25).epsilon(1e-12));
        if (obj < lowest - 1e-12) {
            lowest = obj;
            scan = i;
        }
    }
    CHECK(scan == quadratic_true_best(q));

    SECTION("a design at the weighted mean of eta wins") {
        auto c = QuadraticConfig::defaults();
        c.designs = {0.0, 1.0, 2.25, 3.0};
        CHECK(quadratic_true_best(QuadraticProblem(c)) == 2);
    }
    SECTION("shifting theta does not change the best design") {
        for (double shift : {-5.0, 0.3, 17.0}) {
            auto c = QuadraticConfig::defaults();
            c.weights = {7, 8, 9, 10, 11};
            for (auto& t : c.theta) t += shift;
            const QuadraticProblem shifted(c);
            CHECK(best_design(*shifted.true_estimate()) == 4);
            CHECK(shifted.true_best() == std::optional<std::size_t>(4));
        }
    }
}

TEST_CASE("portfolio default configuration", "[benchmarks]") {
    const PortfolioProblem p;
    CHECK(p.num_designs() == 11);
    CHECK(p.num_components() == 8);
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(p.input_distribution().component(j).mean() == Approx(0.2 * (j + 1)));
        CHECK(p.input_distribution().weights()[j] == Approx((j + 5) / 68.0).epsilon(1e-15));
    }
    CHECK(p.true_best() == std::optional<std::size_t>(5));
}

TEST_CASE("portfolio simulate examples", "[benchmarks]") {
    const PortfolioProblem p;
    RngStream rng(4);
    for (std::size_t j = 0; j < 8; ++j) CHECK(p.simulate(0, j, {}, rng) == Approx(std::exp(0.6)).epsilon(1e-15));
    CHECK(std::exp(0.6) == Approx(1.8221).margin(1e-4));

    auto c = PortfolioConfig::defaults();
    c.rho = 0.0;
    c.sigma = 1e-9;
    const PortfolioProblem limit(c);
    for (std::size_t i = 0; i < 11; ++i)
        for (double y : {0.2, 0.9, 1.6}) {
            const double x = c.designs[i];
            CHECK(limit.output(i, y, 0.7) == Approx(x * std::exp(3 * y) + (1 - x) * std::exp(0.6)).epsilon(1e-8));
        }

    RngStream a(5), b(5);
    for (int k = 0; k < 50; ++k) CHECK(p.simulate(k % 11, k % 8, {}, a) == p.simulate(k % 11, k % 8, {}, b));
    // an override with the true parameters reproduces the default draw
    RngStream c1(6), c2(6);
    const std::vector<double> theta = {0.2 * 3, 0.1};
    CHECK(p.simulate(7, 2, theta, c1) == p.simulate(7, 2, {}, c2));
}

TEST_CASE("portfolio closed-form moments", "[benchmarks]") {
    const PortfolioProblem p;
    const auto& c = p.config();
    for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(*p.true_pair_mean(i, j) == Approx(portfolio_mean_oracle(c, c.designs[i], c.component_means[j])).epsilon(1e-12));

    RngStream rng(8);
    for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const auto m = monte_carlo([&] { return p.simulate(i, j, {}, rng); }, 100000);
            const double sd = *p.true_pair_stddev(i, j);
            if (i == 0) {
                CHECK(sd == 0.0);
                CHECK(m.variance == Approx(0.0).margin(1e-20));
                continue;
            }
            CHECK(std::abs(m.mean - *p.true_pair_mean(i, j)) <= 4 * sd / std::sqrt(1e5));
            CHECK(std::abs(m.variance - sd * sd) <= 4 * m.variance_se);
        }
}

TEST_CASE("portfolio mean matches a million-draw Monte Carlo for the extreme designs", "[benchmarks]") {
    const PortfolioProblem p;
    RngStream rng(10);
    for (std::size_t i : {5u, 10u})
        for (std::size_t j : {0u, 7u}) {
            const auto m = monte_carlo([&] { return p.simulate(i, j, {}, rng); }, 1000000);
            CHECK(std::abs(m.mean - *p.true_pair_mean(i, j)) <= 4 * m.mean_se);
        }
}

TEST_CASE("input data sampling", "[benchmarks]") {
    const QuadraticProblem q;
    RngStream rng(12);
    CHECK(sample_input_data(q.input_distribution(), 0, rng).empty());

    const MixtureModel point({Component::normal(3.0, 1e-12)}, {1.0});
    for (double v : sample_input_data(point, 100, rng)) CHECK(v == Approx(3.0).margin(1e-9));

    const auto labeled = sample_input_data_labeled(q.input_distribution(), 100000, rng);
    REQUIRE(labeled.values.size() == 100000);
    std::vector<double> freq(5, 0.0);
    for (auto l : labeled.labels) freq[l] += 1e-5;
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(freq[j] - q.input_distribution().weights()[j]) <= 0.01);

    RngStream a(13), b(13);
    CHECK(sample_input_data(q.input_distribution(), 50, a) == sample_input_data_labeled(q.input_distribution(), 50, b).values);
}

TEST_CASE("benchmark configuration is validated", "[benchmarks]") {
    auto c = QuadraticConfig::defaults();
    c.theta = {1.0};
    CHECK_THROWS_AS(QuadraticProblem(c), std::invalid_argument);
    c = QuadraticConfig::defaults();
    c.sigma_zeta = -1;
    CHECK_THROWS_AS(QuadraticProblem(c), std::invalid_argument);
    auto pc = PortfolioConfig::defaults();
    pc.horizon = 0;
    CHECK_THROWS_AS(PortfolioProblem(pc), std::invalid_argument);
}
