#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rns/allocation.hpp"
#include "rns/errors.hpp"

namespace rns {

namespace {

constexpr double kFloor = 1e-12;
constexpr double kArmijo = 1e-4;

// Rates G_i for i != b over a flat allocation; entry b is left at +inf.
class RateModel {
public:
    RateModel(const ProblemEstimate& est, std::size_t b) : est_(est), b_(b), k_(est.designs()), d_(est.components()) {
        gap_sq_.assign(k_, 0.0);
        coef_.assign(k_ * d_, 0.0);
        const double mb = aggregate_mean(est, b);
        for (std::size_t i = 0; i < k_; ++i) {
            const double g = mb - aggregate_mean(est, i);
            gap_sq_[i] = g * g;
            for (std::size_t j = 0; j < d_; ++j) {
                const double s = est.sigma()(i, j) * est.w()[j];
                coef_[i * d_ + j] = s * s;
            }
        }
    }

    std::size_t size() const { return k_ * d_; }
    std::size_t best() const { return b_; }

    // Fills G (length K) and the spread S_i (length K); returns min_i G_i.
    double rates(const std::vector<double>& a, std::vector<double>& g, std::vector<double>& spread) const {
        g.assign(k_, std::numeric_limits<double>::infinity());
        spread.assign(k_, 0.0);
        double sb = 0.0;
        for (std::size_t j = 0; j < d_; ++j) sb += coef_[b_ * d_ + j] / a[b_ * d_ + j];
        double lowest = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k_; ++i) {
            if (i == b_) continue;
            double s = sb;
            for (std::size_t j = 0; j < d_; ++j) s += coef_[i * d_ + j] / a[i * d_ + j];
            spread[i] = s;
            g[i] = gap_sq_[i] / (2.0 * s);
            lowest = std::min(lowest, g[i]);
        }
        return lowest;
    }

    // Smoothed minimum -tau log sum exp(-G_i/tau) and its gradient.
    double smoothed(const std::vector<double>& a, double tau, std::vector<double>* grad) const {
        std::vector<double> g, spread;
        const double lowest = rates(a, g, spread);
        std::vector<double> p(k_, 0.0);
        double z = 0.0;
        for (std::size_t i = 0; i < k_; ++i) {
            if (i == b_) continue;
            p[i] = std::exp(-(g[i] - lowest) / tau);
            z += p[i];
        }
        const double value = lowest - tau * std::log(z);
        if (grad) {
            grad->assign(size(), 0.0);
            for (std::size_t i = 0; i < k_; ++i) {
                if (i == b_) continue;
                const double weight = p[i] / z * g[i] / spread[i];
                for (std::size_t j = 0; j < d_; ++j) {
                    const std::size_t bi = b_ * d_ + j;
                    const std::size_t ii = i * d_ + j;
                    (*grad)[bi] += weight * coef_[bi] / (a[bi] * a[bi]);
                    (*grad)[ii] += weight * coef_[ii] / (a[ii] * a[ii]);
                }
            }
        }
        return value;
    }

    double objective(const std::vector<double>& a) const {
        std::vector<double> g, spread;
        return rates(a, g, spread);
    }

    // Balance equations in scale-free form; zero at the optimum.
    Eigen::VectorXd balance(const std::vector<double>& a) const {
        std::vector<double> g, spread;
        rates(a, g, spread);
        Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
        Eigen::Index r = 0;
        const auto& sigma = est_.sigma();
        const auto& w = est_.w();
        for (std::size_t i = 0; i < k_; ++i) {
            if (i == b_) continue;
            for (std::size_t j = 0; j + 1 < d_; ++j)
                out(r++) = std::log(a[i * d_ + j] / (sigma(i, j) * w[j])) -
                           std::log(a[i * d_ + j + 1] / (sigma(i, j + 1) * w[j + 1]));
        }
        for (std::size_t j = 0; j < d_; ++j) {
            const double lhs = a[b_ * d_ + j] / sigma(b_, j);
            double rhs = 0.0;
            for (std::size_t i = 0; i < k_; ++i) {
                if (i == b_) continue;
                const double q = a[i * d_ + j] / sigma(i, j);
                rhs += q * q;
            }
            out(r++) = 1.0 - rhs / (lhs * lhs);
        }
        const std::size_t anchor = b_ == 0 ? 1 : 0;
        for (std::size_t i = 0; i < k_; ++i) {
            if (i == b_ || i == anchor) continue;
            out(r++) = std::log(g[i]) - std::log(g[anchor]);
        }
        out(r++) = std::accumulate(a.begin(), a.end(), 0.0) - 1.0;
        return out;
    }

private:
    const ProblemEstimate& est_;
    std::size_t b_;
    std::size_t k_;
    std::size_t d_;
    std::vector<double> gap_sq_;
    std::vector<double> coef_;
};

// Euclidean projection onto {a : a >= floor, sum a = 1}.
std::vector<double> project(const std::vector<double>& v) {
    const std::size_t n = v.size();
    const double budget = 1.0 - static_cast<double>(n) * kFloor;
    std::vector<double> shifted(n);
    for (std::size_t k = 0; k < n; ++k) shifted[k] = v[k] - kFloor;
    std::vector<double> sorted = shifted;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        cumulative += sorted[k];
        const double t = (cumulative - budget) / static_cast<double>(k + 1);
        if (sorted[k] - t > 0.0) theta = t;
    }
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = std::max(shifted[k] - theta, 0.0) + kFloor;
    return out;
}

struct AscentResult {
    std::vector<double> alpha;
    double objective = 0.0;
    int iterations = 0;
};

AscentResult annealed_ascent(const RateModel& model, std::vector<double> a, int max_iter) {
    AscentResult res;
    const double start_obj = model.objective(a);
    double scale = start_obj > 0.0 ? start_obj : 1.0;
    double tau = 0.05 * scale;
    double step = 0.0;
    std::vector<double> grad;
    while (true) {
        double value = model.smoothed(a, tau, &grad);
        if (step <= 0.0) {
            double gn = 0.0;
            for (double x : grad) gn = std::max(gn, std::abs(x));
            step = gn > 0.0 ? 0.01 / gn : 1.0;
        }
        for (int it = 0; it < max_iter; ++it) {
            ++res.iterations;
            bool accepted = false;
            std::vector<double> next;
            double next_value = value;
            for (int halving = 0; halving < 60; ++halving) {
                std::vector<double> trial(a.size());
                for (std::size_t k = 0; k < a.size(); ++k) trial[k] = a[k] + step * grad[k];
                trial = project(trial);
                double predicted = 0.0;
                for (std::size_t k = 0; k < a.size(); ++k) predicted += grad[k] * (trial[k] - a[k]);
                const double tv = model.smoothed(trial, tau, nullptr);
                if (tv >= value + kArmijo * predicted && std::isfinite(tv)) {
                    next = std::move(trial);
                    next_value = tv;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            double moved = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) moved = std::max(moved, std::abs(next[k] - a[k]));
            a = std::move(next);
            const double gained = next_value - value;
            value = model.smoothed(a, tau, &grad);
            step *= 2.0;
            if (moved < 1e-15 || gained <= 1e-16 * std::abs(value)) break;
        }
        const double obj = model.objective(a);
        if (obj > 0.0) scale = obj;
        tau *= 0.2;
        if (tau < 1e-9 * scale) break;
    }
    res.objective = model.objective(a);
    res.alpha = std::move(a);
    return res;
}

// Newton on the balance equations in log-allocation coordinates.
bool polish(const RateModel& model, std::vector<double>& a) {
    const auto n = static_cast<Eigen::Index>(model.size());
    Eigen::VectorXd u(n);
    for (Eigen::Index k = 0; k < n; ++k) u(k) = std::log(a[static_cast<std::size_t>(k)]);
    auto to_alpha = [&](const Eigen::VectorXd& x) {
        std::vector<double> out(static_cast<std::size_t>(n));
        for (Eigen::Index k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = std::exp(x(k));
        return out;
    };
    Eigen::VectorXd f = model.balance(to_alpha(u));
    for (int it = 0; it < 60; ++it) {
        if (!f.allFinite()) return false;
        if (f.lpNorm<Eigen::Infinity>() <= 1e-12) break;
        Eigen::MatrixXd jac(n, n);
        constexpr double h = 1e-6;
        for (Eigen::Index k = 0; k < n; ++k) {
            Eigen::VectorXd up = u, down = u;
            up(k) += h;
            down(k) -= h;
            jac.col(k) = (model.balance(to_alpha(up)) - model.balance(to_alpha(down))) / (2.0 * h);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible()) return false;
        const Eigen::VectorXd delta = lu.solve(-f);
        double t = 1.0;
        bool improved = false;
        for (int halving = 0; halving < 40; ++halving) {
            const Eigen::VectorXd trial = u + t * delta;
            const Eigen::VectorXd ft = model.balance(to_alpha(trial));
            if (ft.allFinite() && ft.lpNorm<Eigen::Infinity>() < f.lpNorm<Eigen::Infinity>()) {
                u = trial;
                f = ft;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if (!improved) break;
    }
    if (!(f.lpNorm<Eigen::Infinity>() <= 1e-9)) return false;
    a = to_alpha(u);
    const double total = std::accumulate(a.begin(), a.end(), 0.0);
    for (auto& x : a) x /= total;
    return true;
}

}  // namespace

OracleResult oracle_optimal_allocation(const ProblemEstimate& est, double tol, const OracleOptions& options) {
    const std::size_t k = est.designs();
    const std::size_t d = est.components();
    if (!(tol > 0.0)) throw std::invalid_argument("oracle tolerance must be positive");
    if (k < 2) throw std::invalid_argument("oracle needs at least two designs");
    if (k * d > 12) throw std::invalid_argument("oracle is limited to K*D <= 12");
    if (options.starts < 1) throw std::invalid_argument("oracle needs at least one start");
    for (double wj : est.w())
        if (!(wj > 0.0)) throw std::invalid_argument("oracle needs strictly positive weights");

    const auto b = best_design(est);
    const double mb = aggregate_mean(est, b);
    for (std::size_t i = 0; i < k; ++i)
        if (i != b && !(mb - aggregate_mean(est, i) > 0.0))
            throw DegenerateGap("design " + std::to_string(i) + " ties the best design " + std::to_string(b));

    const RateModel model(est, b);
    const std::size_t n = k * d;

    std::vector<std::vector<double>> starts;
    starts.emplace_back(n, 1.0 / static_cast<double>(n));
    {
        const auto approx = solve_approx_allocation(est);
        starts.push_back(project(std::vector<double>(approx.alpha().flat().begin(), approx.alpha().flat().end())));
    }
    std::mt19937_64 engine(options.seed);
    std::gamma_distribution<double> gamma(1.0, 1.0);
    while (starts.size() < static_cast<std::size_t>(options.starts)) {
        std::vector<double> draw(n);
        double total = 0.0;
        for (auto& x : draw) {
            x = gamma(engine);
            total += x;
        }
        for (auto& x : draw) x = 0.5 * x / total + 0.5 / static_cast<double>(n);
        starts.push_back(project(draw));
    }
    starts.resize(static_cast<std::size_t>(options.starts));

    std::vector<AscentResult> runs;
    int iterations = 0;
    for (auto& s : starts) {
        runs.push_back(annealed_ascent(model, s, options.max_iterations_per_round));
        iterations += runs.back().iterations;
    }
    std::sort(runs.begin(), runs.end(), [](const auto& x, const auto& y) { return x.objective > y.objective; });

    std::vector<double> alpha = runs.front().alpha;
    const double ascent_obj = runs.front().objective;
    bool polished = false;
    {
        std::vector<double> candidate = alpha;
        if (polish(model, candidate)) {
            const double polished_obj = model.objective(candidate);
            if (polished_obj >= ascent_obj - 1e-12 * std::abs(ascent_obj)) {
                alpha = std::move(candidate);
                polished = true;
            }
        }
    }
    if (!polished) {
        const bool agree = runs.size() > 1 && runs.front().objective - runs[1].objective <= tol * runs.front().objective;
        if (!agree) throw NoConvergence("oracle ascent could not be certified within tolerance");
    }

    Matrix table(k, d);
    std::copy(alpha.begin(), alpha.end(), table.flat().begin());
    auto policy = AllocationPolicy::normalized(std::move(table));
    const double objective = pfs_decay_rate(est, policy);
    return OracleResult{std::move(policy), objective, ascent_obj, polished, iterations};
}

}  // namespace rns
