#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

#include "rns/benchmarks.hpp"
#include "rns/errors.hpp"
#include "rns/input_model.hpp"
#include "rns/rng.hpp"

using namespace rns;
using Catch::Approx;

namespace {

double normal_cdf(double x, double mean, double sd) { return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2)); }

// Composite Simpson over [a, b] with n (even) panels.
template <typename F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int k = 1; k < n; ++k) s += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

double exact_loglik(const std::vector<Component>& comps, const std::vector<double>& w, const std::vector<double>& data) {
    double total = 0.0;
    for (double x : data) {
        double p = 0.0;
        for (std::size_t j = 0; j < comps.size(); ++j) p += w[j] * comps[j].density(x);
        total += std::log(p);
    }
    return total;
}

std::vector<double> plain_em(const std::vector<Component>& comps, std::vector<double> w, const std::vector<double>& data,
                             int iterations) {
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> next(w.size(), 0.0);
        for (double x : data) {
            double p = 0.0;
            for (std::size_t j = 0; j < comps.size(); ++j) p += w[j] * comps[j].density(x);
            for (std::size_t j = 0; j < comps.size(); ++j) next[j] += w[j] * comps[j].density(x) / p;
        }
        for (auto& v : next) v /= static_cast<double>(data.size());
        w = next;
    }
    return w;
}

std::vector<double> quadratic_mixture_data(std::size_t m, std::uint64_t seed) {
    QuadraticProblem q;
    RngStream rng(seed);
    return sample_input_data(q.input_distribution(), m, rng);
}

}  // namespace

TEST_CASE("normal component validates its stddev and integrates to one", "[input-model]") {
    CHECK_THROWS_AS(Component::normal(0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(Component::normal(0.0, -1.0), std::invalid_argument);
    for (double sd : {0.1, 1.0, 3.0}) {
        const auto c = Component::normal(0.7, sd);
        const double mass = simpson([&](double x) { return c.density(x); }, 0.7 - 12 * sd, 0.7 + 12 * sd, 4000);
        CHECK(mass == Approx(1.0).margin(1e-10));
        CHECK(std::log(c.density(1.1)) == Approx(c.log_density(1.1)).epsilon(1e-12));
    }
}

TEST_CASE("mixture model enforces the simplex", "[input-model]") {
    const std::vector<Component> comps = {Component::normal(0, 1), Component::normal(1, 1)};
    CHECK_THROWS_AS(MixtureModel(comps, {0.5, 0.6}), std::invalid_argument);
    CHECK_THROWS_AS(MixtureModel(comps, {1.1, -0.1}), std::invalid_argument);
    CHECK_THROWS_AS(MixtureModel(comps, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(MixtureModel({}, {}), std::invalid_argument);
    const MixtureModel clamped(comps, {1.0 + 1e-16, -1e-16});
    CHECK(clamped.weights()[1] == 0.0);
    CHECK(clamped.weights()[0] >= 0.0);
}

TEST_CASE("mixture density examples", "[input-model]") {
    const MixtureModel single({Component::normal(0, 1)}, {1.0});
    CHECK(mixture_density(single, 0.0) == Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-14));
    CHECK(mixture_density(single, 0.0) == Approx(0.39894).margin(1e-5));

    const MixtureModel sym({Component::normal(-1, 1), Component::normal(1, 1)}, {0.5, 0.5});
    CHECK(mixture_density(sym, 0.0) == Approx(Component::normal(1, 1).density(0.0)).epsilon(1e-14));
    CHECK(mixture_density(sym, 0.0) == Approx(0.24197).margin(1e-5));

    // quadratic input mixture at theta_1: finite difference of the erfc-based mixture CDF
    const QuadraticProblem q;
    const auto& model = q.input_distribution();
    auto cdf = [&](double x) {
        double total = 0.0;
        for (std::size_t j = 0; j < model.size(); ++j)
            total += model.weights()[j] * normal_cdf(x, model.component(j).mean(), model.component(j).stddev());
        return total;
    };
    const double x = q.config().theta[0];
    const double h = 1e-4;
    const double fd = (cdf(x + h) - cdf(x - h)) / (2 * h);
    CHECK(mixture_density(model, x) == Approx(fd).epsilon(1e-7));
}

TEST_CASE("ingest_batch counts data and stages", "[input-model]") {
    InputDataset d;
    const std::vector<double> fifty(50, 1.0);
    d = ingest_batch(d, fifty);
    CHECK(d.total() == 50);
    d = ingest_batch(d, fifty);
    CHECK(d.total() == 100);
    InputDataset s;
    for (int t = 0; t < 10; ++t) s = ingest_batch(s, fifty);
    CHECK(s.total() == 500);
    CHECK(s.stages() == 10);
    CHECK(s.observations().size() == 500);
    s = ingest_batch(s, {});
    CHECK(s.stages() == 11);
    CHECK(s.total() == 500);
}

TEST_CASE("load_dataset reads one value per line", "[input-model]") {
    const auto path = std::filesystem::temp_directory_path() / "rns_dataset_test.txt";
    {
        std::ofstream out(path);
        out << "# header\n1.5\n\n-2\n  3e-1  \n";
    }
    const auto data = load_dataset(path.string());
    REQUIRE(data.size() == 3);
    CHECK(data[0] == 1.5);
    CHECK(data[1] == -2.0);
    CHECK(data[2] == 0.3);
    {
        std::ofstream out(path);
        out << "1\nabc\n";
    }
    CHECK_THROWS(load_dataset(path.string()));
    std::filesystem::remove(path);
    CHECK_THROWS(load_dataset(path.string()));
}

TEST_CASE("em_weight_step examples", "[input-model]") {
    const std::vector<double> data = {-1.0, 0.3, 2.0};
    CHECK(em_weight_step(std::vector<double>{1.0}, {Component::normal(0, 1)}, data) == std::vector<double>{1.0});

    const std::vector<Component> sym = {Component::normal(-2, 0.7), Component::normal(2, 0.7)};
    const std::vector<double> symmetric = {-3.0, -1.0, -0.2, 0.2, 1.0, 3.0};
    const auto w = em_weight_step(std::vector<double>{0.5, 0.5}, sym, symmetric);
    CHECK(w[0] == Approx(0.5).margin(1e-15));
    CHECK(w[1] == Approx(0.5).margin(1e-15));
}

TEST_CASE("em iteration recovers separated cluster proportions", "[input-model]") {
    const std::vector<Component> comps = {Component::normal(0, 0.1), Component::normal(10, 0.1)};
    std::vector<double> data;
    RngStream rng(42);
    for (int k = 0; k < 50; ++k) data.push_back(rng.normal(0, 0.1));
    for (int k = 0; k < 150; ++k) data.push_back(rng.normal(10, 0.1));
    std::vector<double> w = {0.5, 0.5};
    for (int it = 0; it < 1000; ++it) {
        const auto next = em_weight_step(w, comps, data);
        const double diff = std::max(std::abs(next[0] - w[0]), std::abs(next[1] - w[1]));
        w = next;
        if (diff <= 1e-10) break;
    }
    CHECK(w[0] == Approx(0.25).margin(1e-6));
    CHECK(w[1] == Approx(0.75).margin(1e-6));

    // grid search of the exact log-likelihood over the simplex
    double best_w = 0.0, best_ll = -1e300;
    for (int k = 1; k < 10000; ++k) {
        const double v = k / 10000.0;
        const double ll = exact_loglik(comps, {v, 1 - v}, data);
        if (ll > best_ll) {
            best_ll = ll;
            best_w = v;
        }
    }
    CHECK(w[0] == Approx(best_w).margin(1e-4));
}

TEST_CASE("all-zero densities are reported", "[input-model]") {
    const std::vector<Component> comps = {Component::normal(0, 0.1), Component::normal(1, 0.1)};
    // far-out points keep a positive scaled density, so these succeed
    CHECK_NOTHROW(em_weight_step(std::vector<double>{0.5, 0.5}, comps, std::vector<double>{0.0, 1000.0}));
    // a point that only the zero-weight component explains
    CHECK_THROWS_AS(em_weight_step(std::vector<double>{1.0, 0.0}, comps, std::vector<double>{50.0}),
                    AllDensitiesZero);
}

TEST_CASE("estimate_weights_mle examples", "[input-model]") {
    SECTION("large sample from the mixture itself") {
        const std::vector<Component> comps = {Component::normal(0, 1), Component::normal(3, 1)};
        const MixtureModel truth(comps, {0.3, 0.7});
        RngStream rng(7);
        const auto data = sample_input_data(truth, 100000, rng);
        const auto fit = estimate_weights_mle(comps, data, 1e-8, 500);
        CHECK(fit.converged);
        CHECK(std::abs(fit.weights[0] - 0.3) <= 0.02);
        CHECK(std::abs(fit.weights[1] - 0.7) <= 0.02);
    }
    SECTION("single component") {
        const auto fit = estimate_weights_mle({Component::normal(0, 1)}, std::vector<double>{0.1, 0.2}, 1e-8, 10);
        CHECK(fit.weights == std::vector<double>{1.0});
        CHECK(fit.iterations == 1);
        CHECK(fit.converged);
    }
    SECTION("identical components are a fixed point and flagged") {
        const std::vector<Component> comps = {Component::normal(1, 2), Component::normal(1, 2)};
        const std::vector<double> data = {0.0, 1.0, 4.0, -2.0};
        const std::vector<double> w = {0.3, 0.7};
        const auto step = em_weight_step(w, comps, data);
        CHECK(step[0] == Approx(0.3).margin(1e-15));
        CHECK(step[1] == Approx(0.7).margin(1e-15));
        const auto fit = estimate_weights_mle(comps, data, 1e-10, 50, w);
        CHECK_FALSE(fit.identifiable);
        CHECK(fit.converged);
        CHECK(fit.weights[0] == Approx(0.3).margin(1e-12));
        CHECK_FALSE(components_distinct(comps));
    }
    SECTION("input validation") {
        const std::vector<Component> comps = {Component::normal(0, 1), Component::normal(3, 1)};
        CHECK_THROWS_AS(estimate_weights_mle(comps, std::vector<double>{1.0}, 0.0, 10), std::invalid_argument);
        CHECK_THROWS_AS(estimate_weights_mle(comps, std::vector<double>{1.0}, 1e-8, 0), std::invalid_argument);
        CHECK_THROWS_AS(estimate_weights_mle(comps, std::vector<double>{}, 1e-8, 10), std::invalid_argument);
    }
}

TEST_CASE("weight MLE agrees with long plain EM on the quadratic mixture", "[input-model]") {
    const QuadraticProblem q;
    const auto& comps = q.input_distribution().components();
    const auto data = quadratic_mixture_data(5000, 3);
    const auto fit = estimate_weights_mle(comps, data, 1e-10, 500);
    REQUIRE(fit.converged);
    const auto em = plain_em(comps, std::vector<double>(5, 0.2), data, 20000);
    for (std::size_t j = 0; j < 5; ++j) CHECK(fit.weights[j] == Approx(em[j]).margin(1e-5));
    CHECK(fit.log_likelihood >= exact_loglik(comps, em, data) - 1e-9);
    CHECK(fit.log_likelihood == Approx(exact_loglik(comps, fit.weights, data)).epsilon(1e-12));
}

TEST_CASE("warm start reaches the same weight MLE", "[input-model]") {
    const QuadraticProblem q;
    const auto& comps = q.input_distribution().components();
    const auto data = quadratic_mixture_data(2000, 5);
    const auto cold = estimate_weights_mle(comps, data, 1e-10, 500);
    const auto warm = estimate_weights_mle(comps, data, 1e-10, 500, std::vector<double>{0.05, 0.1, 0.15, 0.3, 0.4});
    for (std::size_t j = 0; j < 5; ++j) CHECK(cold.weights[j] == Approx(warm.weights[j]).margin(1e-7));
}

TEST_CASE("em monotonicity and simplex closure on random states", "[input-model][property]") {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 1 + static_cast<int>(gen() % 4);
        std::vector<Component> comps;
        for (int j = 0; j < d; ++j) comps.push_back(Component::normal(4 * u(gen) - 2, 0.3 + 2 * u(gen)));
        std::vector<double> w(d);
        double total = 0;
        for (auto& x : w) total += (x = u(gen) + 1e-3);
        for (auto& x : w) x /= total;
        std::vector<double> data(5 + gen() % 50);
        for (auto& x : data) x = 6 * u(gen) - 3;
        const auto next = em_weight_step(w, comps, data);
        CHECK(exact_loglik(comps, next, data) >= exact_loglik(comps, w, data) - 1e-10);
        double s = 0;
        for (double x : next) {
            CHECK(x >= -1e-15);
            s += x;
        }
        CHECK(s == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("fit_gmm_mle single component is the closed-form MLE", "[input-model]") {
    const std::vector<double> data = {1.0, 2.0, 4.0, 7.0, -1.0};
    const auto fit = fit_gmm_mle(data, 1, std::nullopt, std::nullopt, 1e-10, 100);
    const double mean = 13.0 / 5.0;
    double ss = 0;
    for (double x : data) ss += (x - mean) * (x - mean);
    CHECK(fit.model.component(0).mean() == Approx(mean).epsilon(1e-12));
    CHECK(fit.model.component(0).stddev() == Approx(std::sqrt(ss / 5.0)).epsilon(1e-12));
    CHECK(fit.model.weights() == std::vector<double>{1.0});
}

TEST_CASE("fit_gmm_mle separates two clusters", "[input-model]") {
    RngStream rng(11);
    std::vector<double> data;
    for (int k = 0; k < 5000; ++k) data.push_back(rng.normal(5, 0.1));
    for (int k = 0; k < 5000; ++k) data.push_back(rng.normal(0, 0.1));
    const auto fit = fit_gmm_mle(data, 2, std::nullopt, std::nullopt, 1e-8, 500);
    const auto& m = fit.model;
    CHECK(m.component(0).mean() < m.component(1).mean());
    CHECK(std::abs(m.component(0).mean()) < 0.05);
    CHECK(std::abs(m.component(1).mean() - 5) < 0.05);
    CHECK(std::abs(m.weights()[0] - 0.5) < 0.05);
    // nearest-center assignment cross-check
    double s0 = 0, s1 = 0;
    int n0 = 0, n1 = 0;
    for (double x : data) {
        if (std::abs(x - m.component(0).mean()) < std::abs(x - m.component(1).mean())) {
            s0 += x;
            ++n0;
        } else {
            s1 += x;
            ++n1;
        }
    }
    CHECK(m.component(0).mean() == Approx(s0 / n0).margin(1e-6));
    CHECK(m.component(1).mean() == Approx(s1 / n1).margin(1e-6));
    for (std::size_t k = 1; k < fit.log_likelihood_trace.size(); ++k)
        CHECK(fit.log_likelihood_trace[k] >= fit.log_likelihood_trace[k - 1] - 1e-8);
}

TEST_CASE("fit_gmm_mle output does not depend on the order of the initial components", "[input-model]") {
    const PortfolioProblem p;
    RngStream rng(3);
    const auto data = sample_input_data(p.input_distribution(), 3000, rng);
    const auto init = default_gmm_init(data, 8);
    const auto a = fit_gmm_mle(data, 8, std::nullopt, init, 1e-8, 300).model;
    std::vector<Component> reversed(init.components().rbegin(), init.components().rend());
    std::vector<double> rw(init.weights().rbegin(), init.weights().rend());
    const auto b = fit_gmm_mle(data, 8, std::nullopt, MixtureModel(reversed, rw), 1e-8, 300).model;
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(a.component(j).mean() == Approx(b.component(j).mean()).margin(1e-6));
        CHECK(a.weights()[j] == Approx(b.weights()[j]).margin(1e-6));
    }
}

TEST_CASE("portfolio drift mixture is recovered in sorted order", "[input-model]") {
    const PortfolioProblem p;
    RngStream rng(9);
    const auto data = sample_input_data(p.input_distribution(), 20000, rng);
    const auto fit = fit_gmm_mle(data, 8, std::nullopt, std::nullopt, 1e-7, 2000);
    double max_err = 0;
    for (std::size_t j = 0; j < 8; ++j) {
        if (j > 0) CHECK(fit.model.component(j).mean() > fit.model.component(j - 1).mean());
        max_err = std::max(max_err, std::abs(fit.model.component(j).mean() - p.config().component_means[j]));
    }
    CHECK(max_err < 0.1);
    for (std::size_t k = 1; k < fit.log_likelihood_trace.size(); ++k)
        CHECK(fit.log_likelihood_trace[k] >= fit.log_likelihood_trace[k - 1] - 1e-8);
}

TEST_CASE("fit_gmm_mle with known stddev and degenerate clusters", "[input-model]") {
    RngStream rng(1);
    std::vector<double> data;
    for (int k = 0; k < 2000; ++k) data.push_back(rng.normal(k % 2 ? 3.0 : -3.0, 0.5));
    const auto fit = fit_gmm_mle(data, 2, 0.5, std::nullopt, 1e-8, 200);
    CHECK(fit.model.component(0).stddev() == 0.5);
    CHECK(fit.model.component(1).stddev() == 0.5);
    const MixtureModel far({Component::normal(0, 0.5), Component::normal(1e4, 0.5)}, {0.5, 0.5});
    CHECK_THROWS_AS(fit_gmm_mle(data, 2, 0.5, far, 1e-8, 200), DegenerateCluster);
    CHECK_THROWS_AS(fit_gmm_mle(std::vector<double>{}, 2, std::nullopt, std::nullopt, 1e-8, 10), std::invalid_argument);
}

TEST_CASE("default GMM init uses data quantiles", "[input-model]") {
    std::vector<double> data;
    for (int k = 0; k < 1000; ++k) data.push_back(k);
    const auto init = default_gmm_init(data, 4);
    for (std::size_t j = 1; j < 4; ++j) CHECK(init.component(j).mean() > init.component(j - 1).mean());
    CHECK(init.component(0).mean() == Approx(0.125 * 999).margin(1.0));
    CHECK(init.weights()[2] == Approx(0.25));
}

TEST_CASE("streaming estimator refits per batch", "[input-model]") {
    const QuadraticProblem q;
    auto est = StreamingEstimator::known_components(q.input_distribution().components(), {});
    CHECK(est.has_model());
    CHECK(est.model().weights()[0] == Approx(0.2));
    RngStream rng(5);
    std::vector<double> all;
    for (int t = 0; t < 5; ++t) {
        const auto batch = sample_input_data(q.input_distribution(), 100, rng);
        all.insert(all.end(), batch.begin(), batch.end());
        est.ingest(batch);
    }
    CHECK(est.dataset().total() == 500);
    CHECK(est.dataset().stages() == 5);
    const auto direct = estimate_weights_mle(q.input_distribution().components(), all, 1e-10, 500);
    for (std::size_t j = 0; j < 5; ++j) CHECK(est.model().weights()[j] == Approx(direct.weights[j]).margin(1e-6));

    auto uc = StreamingEstimator::unknown_components(2, {});
    CHECK_FALSE(uc.has_model());
    CHECK_THROWS(uc.model());
    CHECK_THROWS_AS(uc.ingest({}), std::invalid_argument);
    uc.ingest(std::vector<double>{-1.0, -1.1, -0.9, 1.0, 1.1, 0.9});
    CHECK(uc.model().component(0).mean() < uc.model().component(1).mean());
}
