#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rns/grid.hpp"

namespace rns {

// Plug-in (or true) parameters of the allocation problem: K designs, D input components.
class ProblemEstimate {
public:
    // Standard deviations are floored at kSigmaFloor.
    static constexpr double kSigmaFloor = 1e-8;

    ProblemEstimate(Matrix mu, Matrix sigma, std::vector<double> w);

    std::size_t designs() const noexcept { return mu_.rows(); }
    std::size_t components() const noexcept { return mu_.cols(); }
    const Matrix& mu() const noexcept { return mu_; }
    const Matrix& sigma() const noexcept { return sigma_; }
    const std::vector<double>& w() const noexcept { return w_; }

    // Single-component view of column j (weight 1), used by the per-component baselines.
    ProblemEstimate column(std::size_t j) const;

private:
    Matrix mu_;
    Matrix sigma_;
    std::vector<double> w_;
};

// Budget fractions over design-input pairs; nonnegative and summing to one.
class AllocationPolicy {
public:
    explicit AllocationPolicy(Matrix alpha);
    // Scales a nonnegative table with positive total onto the simplex.
    static AllocationPolicy normalized(Matrix weights);
    static AllocationPolicy from_counts(const CountGrid& counts);
    static AllocationPolicy uniform(std::size_t designs, std::size_t components);

    const Matrix& alpha() const noexcept { return alpha_; }
    double operator()(std::size_t i, std::size_t j) const { return alpha_(i, j); }
    std::size_t designs() const noexcept { return alpha_.rows(); }
    std::size_t components() const noexcept { return alpha_.cols(); }

private:
    Matrix alpha_;
};

struct BalanceResiduals {
    // alpha_ij/(sigma_ij w_j) - alpha_ij'/(sigma_ij' w_j') for i != b, j < j'
    std::vector<double> input;
    // (alpha_bj/sigma_bj)^2 - sum_{i != b} (alpha_ij/sigma_ij)^2 per component
    std::vector<double> total;
    // G_i - G_i' for i < i', both != b
    std::vector<double> local;
    std::size_t best = 0;

    double input_norm() const;
    double total_norm() const;
    double local_norm() const;
};

double aggregate_mean(const ProblemEstimate& est, std::size_t i);

// Largest aggregate mean; ties go to the lowest index.
std::size_t best_design(const ProblemEstimate& est);

// Large-deviations rate at which design i overtakes design b under allocation alpha.
// Zero when any alpha_bj or alpha_ij is zero. Accepts any nonnegative table (counts work too).
double rate(const ProblemEstimate& est, const Matrix& alpha, std::size_t i, std::size_t b);
double rate(const ProblemEstimate& est, const AllocationPolicy& alpha, std::size_t i, std::size_t b);

// min_{i != b} rate(i, b) with b the plug-in best design.
double pfs_decay_rate(const ProblemEstimate& est, const AllocationPolicy& alpha);
double pfs_decay_rate(const ProblemEstimate& est, const Matrix& alpha);

// Throws ZeroAllocation when any entry of alpha is zero.
BalanceResiduals balance_residuals(const ProblemEstimate& est, const AllocationPolicy& alpha);

enum class GapPolicy {
    Floor,  // a zero gap is replaced by kGapFloor
    Throw,  // a zero gap raises DegenerateGap
};
inline constexpr double kGapFloor = 1e-12;

// Closed-form allocation from the approximate local balance combined with total balance.
AllocationPolicy solve_approx_allocation(const ProblemEstimate& est, GapPolicy gaps = GapPolicy::Floor);

struct OracleOptions {
    int starts = 20;
    int max_iterations_per_round = 2000;
    std::uint64_t seed = 0x5eed;
};

struct OracleResult {
    AllocationPolicy policy;
    double objective = 0.0;
    double smoothed_objective = 0.0;  // best objective reached by the ascent before polishing
    bool polished = false;
    int iterations = 0;
};

// Maximizes min_{i != b} G_i over the simplex for small problems (K*D <= 12).
// Multi-start projected gradient ascent on a log-sum-exp smoothed minimum with annealed
// temperature, then Newton on the balance equations.
OracleResult oracle_optimal_allocation(const ProblemEstimate& est, double tol, const OracleOptions& options = {});

// argmax_{i,j} alpha_ij (1 + sum N) - N_ij, ties to the lexicographically smallest pair.
PairIndex most_starved_pair(const AllocationPolicy& alpha_hat, const CountGrid& counts);

// One balancing decision: restore total balance via the best design, otherwise feed the
// competitor with the smallest plug-in rate; the component then restores input balance.
PairIndex balance_select_pair(const ProblemEstimate& est, const CountGrid& counts);

}  // namespace rns
