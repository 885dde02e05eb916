#include "rns/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "rns/errors.hpp"

namespace rns {

namespace {

constexpr double kSimplexTol = 1e-12;

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

void require_same_shape(const ProblemEstimate& est, const Matrix& alpha) {
    if (alpha.rows() != est.designs() || alpha.cols() != est.components())
        throw std::invalid_argument("allocation shape does not match problem");
}

void require_same_shape(const ProblemEstimate& est, const CountGrid& counts) {
    if (counts.rows() != est.designs() || counts.cols() != est.components())
        throw std::invalid_argument("count table shape does not match problem");
}

}  // namespace

ProblemEstimate::ProblemEstimate(Matrix mu, Matrix sigma, std::vector<double> w)
    : mu_(std::move(mu)), sigma_(std::move(sigma)), w_(std::move(w)) {
    if (mu_.empty()) throw std::invalid_argument("problem needs at least one design and component");
    if (sigma_.rows() != mu_.rows() || sigma_.cols() != mu_.cols())
        throw std::invalid_argument("mu and sigma shapes differ");
    if (w_.size() != mu_.cols()) throw std::invalid_argument("one weight per component required");
    double total = 0.0;
    for (auto& v : w_) {
        if (!std::isfinite(v) || v < -1e-15) throw std::invalid_argument("weights must be nonnegative");
        v = std::max(v, 0.0);
        total += v;
    }
    if (std::abs(total - 1.0) > kSimplexTol) throw std::invalid_argument("weights must sum to 1");
    for (auto v : mu_.flat())
        if (!std::isfinite(v)) throw std::invalid_argument("means must be finite");
    for (auto& s : sigma_.flat()) {
        if (std::isnan(s)) throw std::invalid_argument("stddev is NaN");
        s = std::max(s, kSigmaFloor);
    }
}

ProblemEstimate ProblemEstimate::column(std::size_t j) const {
    Matrix mu(designs(), 1), sigma(designs(), 1);
    for (std::size_t i = 0; i < designs(); ++i) {
        mu(i, 0) = mu_(i, j);
        sigma(i, 0) = sigma_(i, j);
    }
    return ProblemEstimate(std::move(mu), std::move(sigma), {1.0});
}

AllocationPolicy::AllocationPolicy(Matrix alpha) : alpha_(std::move(alpha)) {
    if (alpha_.empty()) throw std::invalid_argument("empty allocation");
    double total = 0.0;
    for (auto& a : alpha_.flat()) {
        if (!std::isfinite(a) || a < -1e-15) throw std::invalid_argument("allocation entries must be nonnegative");
        a = std::max(a, 0.0);
        total += a;
    }
    if (std::abs(total - 1.0) > kSimplexTol) throw std::invalid_argument("allocation must sum to 1");
}

AllocationPolicy AllocationPolicy::normalized(Matrix weights) {
    double total = 0.0;
    for (auto a : weights.flat()) {
        if (!std::isfinite(a) || a < 0.0) throw std::invalid_argument("allocation entries must be nonnegative");
        total += a;
    }
    if (!(total > 0.0)) throw std::invalid_argument("allocation has zero total");
    for (auto& a : weights.flat()) a /= total;
    return AllocationPolicy(std::move(weights));
}

AllocationPolicy AllocationPolicy::from_counts(const CountGrid& counts) {
    Matrix m(counts.rows(), counts.cols());
    for (std::size_t k = 0; k < counts.size(); ++k) m.flat()[k] = static_cast<double>(counts.flat()[k]);
    return normalized(std::move(m));
}

AllocationPolicy AllocationPolicy::uniform(std::size_t designs, std::size_t components) {
    return normalized(Matrix(designs, components, 1.0));
}

double BalanceResiduals::input_norm() const { return inf_norm(input); }
double BalanceResiduals::total_norm() const { return inf_norm(total); }
double BalanceResiduals::local_norm() const { return inf_norm(local); }

double aggregate_mean(const ProblemEstimate& est, std::size_t i) {
    if (i >= est.designs()) throw std::out_of_range("design index out of range");
    double total = 0.0;
    for (std::size_t j = 0; j < est.components(); ++j) total += est.w()[j] * est.mu()(i, j);
    return total;
}

std::size_t best_design(const ProblemEstimate& est) {
    std::size_t best = 0;
    double best_mean = aggregate_mean(est, 0);
    for (std::size_t i = 1; i < est.designs(); ++i) {
        const double m = aggregate_mean(est, i);
        if (m > best_mean) {
            best_mean = m;
            best = i;
        }
    }
    return best;
}

double rate(const ProblemEstimate& est, const Matrix& alpha, std::size_t i, std::size_t b) {
    require_same_shape(est, alpha);
    if (i >= est.designs() || b >= est.designs()) throw std::out_of_range("design index out of range");
    if (i == b) throw std::invalid_argument("rate needs two distinct designs");
    double spread = 0.0;
    for (std::size_t j = 0; j < est.components(); ++j) {
        const double ab = alpha(b, j);
        const double ai = alpha(i, j);
        if (ab <= 0.0 || ai <= 0.0) return 0.0;
        const double wj = est.w()[j];
        const double sb = est.sigma()(b, j);
        const double si = est.sigma()(i, j);
        spread += sb * sb * wj * wj / ab + si * si * wj * wj / ai;
    }
    const double gap = aggregate_mean(est, b) - aggregate_mean(est, i);
    if (!(spread > 0.0)) return gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return gap * gap / (2.0 * spread);
}

double rate(const ProblemEstimate& est, const AllocationPolicy& alpha, std::size_t i, std::size_t b) {
    return rate(est, alpha.alpha(), i, b);
}

double pfs_decay_rate(const ProblemEstimate& est, const Matrix& alpha) {
    require_same_shape(est, alpha);
    if (est.designs() < 2) throw std::invalid_argument("need at least two designs");
    const auto b = best_design(est);
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < est.designs(); ++i)
        if (i != b) worst = std::min(worst, rate(est, alpha, i, b));
    return worst;
}

double pfs_decay_rate(const ProblemEstimate& est, const AllocationPolicy& alpha) {
    return pfs_decay_rate(est, alpha.alpha());
}

BalanceResiduals balance_residuals(const ProblemEstimate& est, const AllocationPolicy& policy) {
    const auto& alpha = policy.alpha();
    require_same_shape(est, alpha);
    for (std::size_t i = 0; i < alpha.rows(); ++i)
        for (std::size_t j = 0; j < alpha.cols(); ++j)
            if (alpha(i, j) <= 0.0)
                throw ZeroAllocation("pair (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") has zero allocation");
    const std::size_t k = est.designs();
    const std::size_t d = est.components();
    const auto& sigma = est.sigma();
    const auto& w = est.w();

    BalanceResiduals out;
    out.best = best_design(est);
    const auto b = out.best;

    for (std::size_t i = 0; i < k; ++i) {
        if (i == b) continue;
        for (std::size_t j = 0; j < d; ++j) {
            if (w[j] <= 0.0) continue;
            for (std::size_t jj = j + 1; jj < d; ++jj) {
                if (w[jj] <= 0.0) continue;
                out.input.push_back(alpha(i, j) / (sigma(i, j) * w[j]) - alpha(i, jj) / (sigma(i, jj) * w[jj]));
            }
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double lhs = alpha(b, j) / sigma(b, j);
        double rhs = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (i == b) continue;
            const double r = alpha(i, j) / sigma(i, j);
            rhs += r * r;
        }
        out.total.push_back(lhs * lhs - rhs);
    }
    std::vector<double> g(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        if (i != b) g[i] = rate(est, alpha, i, b);
    for (std::size_t i = 0; i < k; ++i) {
        if (i == b) continue;
        for (std::size_t ii = i + 1; ii < k; ++ii) {
            if (ii == b) continue;
            out.local.push_back(g[i] - g[ii]);
        }
    }
    return out;
}

AllocationPolicy solve_approx_allocation(const ProblemEstimate& est, GapPolicy gaps) {
    const std::size_t k = est.designs();
    const std::size_t d = est.components();
    if (k < 2) throw std::invalid_argument("need at least two designs");
    const auto& sigma = est.sigma();
    const auto& w = est.w();
    const auto b = best_design(est);
    const double best_mean = aggregate_mean(est, b);

    Matrix alpha(k, d, 0.0);
    double beta_sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (i == b) continue;
        double gap = best_mean - aggregate_mean(est, i);
        if (!(gap > 0.0)) {
            if (gaps == GapPolicy::Throw)
                throw DegenerateGap("design " + std::to_string(i) + " ties the best design " + std::to_string(b));
            gap = kGapFloor;
        }
        double spread = 0.0;
        for (std::size_t j = 0; j < d; ++j) spread += sigma(i, j) * w[j];
        const double beta = spread / (gap * gap);
        beta_sq += beta * beta;
        for (std::size_t j = 0; j < d; ++j) alpha(i, j) = beta * sigma(i, j) * w[j];
    }
    const double beta_best = std::sqrt(beta_sq);
    for (std::size_t j = 0; j < d; ++j) alpha(b, j) = sigma(b, j) * w[j] * beta_best;
    return AllocationPolicy::normalized(std::move(alpha));
}

PairIndex most_starved_pair(const AllocationPolicy& alpha_hat, const CountGrid& counts) {
    const auto& alpha = alpha_hat.alpha();
    if (counts.rows() != alpha.rows() || counts.cols() != alpha.cols())
        throw std::invalid_argument("count table shape does not match allocation");
    std::int64_t used = 0;
    for (auto n : counts.flat()) used += n;
    const double target_total = 1.0 + static_cast<double>(used);
    PairIndex best{};
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < alpha.rows(); ++i)
        for (std::size_t j = 0; j < alpha.cols(); ++j) {
            const double deficit = alpha(i, j) * target_total - static_cast<double>(counts(i, j));
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = {i, j};
            }
        }
    return best;
}

PairIndex balance_select_pair(const ProblemEstimate& est, const CountGrid& counts) {
    require_same_shape(est, counts);
    const std::size_t k = est.designs();
    const std::size_t d = est.components();
    if (k < 2) throw std::invalid_argument("need at least two designs");
    const auto& sigma = est.sigma();
    const auto& w = est.w();
    const auto b = best_design(est);
    auto n = [&](std::size_t i, std::size_t j) { return static_cast<double>(counts(i, j)); };

    // argmin_j of N_ij / (sigma_ij w_j); zero-weight components are never chosen unless all are
    auto input_balancing_component = [&](std::size_t i) {
        std::size_t best_j = 0;
        double best_v = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d; ++j) {
            const double v = w[j] > 0.0 ? n(i, j) / (sigma(i, j) * w[j]) : std::numeric_limits<double>::infinity();
            if (v < best_v) {
                best_v = v;
                best_j = j;
            }
        }
        return best_j;
    };

    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
        const double lhs = n(b, j) / sigma(b, j);
        double rhs = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (i == b) continue;
            const double r = n(i, j) / sigma(i, j);
            rhs += r * r;
        }
        min_gap = std::min(min_gap, lhs * lhs - rhs);
    }
    if (min_gap < 0.0) return {b, input_balancing_component(b)};

    const double best_mean = aggregate_mean(est, b);
    double best_spread = 0.0;
    for (std::size_t j = 0; j < d; ++j) best_spread += sigma(b, j) * sigma(b, j) * w[j] * w[j] / n(b, j);
    std::size_t target = b == 0 ? 1 : 0;
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
        if (i == b) continue;
        double spread = best_spread;
        for (std::size_t j = 0; j < d; ++j) spread += sigma(i, j) * sigma(i, j) * w[j] * w[j] / n(i, j);
        const double gap = best_mean - aggregate_mean(est, i);
        const double value = spread > 0.0 ? gap * gap / spread : std::numeric_limits<double>::infinity();
        if (value < lowest) {
            lowest = value;
            target = i;
        }
    }
    return {target, input_balancing_component(target)};
}

}  // namespace rns
