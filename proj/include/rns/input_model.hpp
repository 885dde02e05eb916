#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rns {

enum class Family { Normal };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

// One parametric mixture component. For Normal, params are (mean, stddev) with stddev > 0.
class Component {
public:
    static Component normal(double mean, double stddev);
    static Component make(Family family, std::vector<double> params);

    Family family() const noexcept { return family_; }
    std::span<const double> params() const noexcept { return params_; }
    double mean() const noexcept { return params_[0]; }
    double stddev() const noexcept { return params_[1]; }

    double density(double x) const;
    double log_density(double x) const;

    bool operator==(const Component&) const = default;

private:
    Component(Family family, std::vector<double> params);

    Family family_ = Family::Normal;
    std::vector<double> params_;
};

// Weighted mixture of D >= 1 components; weights live on the probability simplex.
class MixtureModel {
public:
    MixtureModel(std::vector<Component> components, std::vector<double> weights);
    static MixtureModel uniform(std::vector<Component> components);

    std::size_t size() const noexcept { return components_.size(); }
    const std::vector<Component>& components() const noexcept { return components_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const Component& component(std::size_t j) const { return components_.at(j); }

    MixtureModel with_weights(std::vector<double> weights) const;
    // Components reordered so that means are ascending; weights follow their component.
    MixtureModel sorted_by_mean() const;

    double log_likelihood(std::span<const double> data) const;

    bool operator==(const MixtureModel&) const = default;

private:
    std::vector<Component> components_;
    std::vector<double> weights_;
};

double mixture_density(const MixtureModel& model, double x);

// Append-only record of streamed input observations, one entry in stage_counts per batch.
class InputDataset {
public:
    void ingest(std::span<const double> batch);

    const std::vector<double>& observations() const noexcept { return observations_; }
    const std::vector<std::size_t>& stage_counts() const noexcept { return stage_counts_; }
    std::size_t total() const noexcept { return observations_.size(); }
    std::size_t stages() const noexcept { return stage_counts_.size(); }

    bool operator==(const InputDataset&) const = default;

private:
    std::vector<double> observations_;
    std::vector<std::size_t> stage_counts_;
};

InputDataset ingest_batch(InputDataset dataset, std::span<const double> batch);

std::vector<double> load_dataset(const std::string& path);

// Component densities evaluated once per observation. Each row is scaled so its largest
// entry is 1; the log of the scale is kept separately so likelihoods stay exact.
class ComponentDensities {
public:
    explicit ComponentDensities(std::vector<Component> components);

    void append(std::span<const double> observations);

    std::size_t rows() const noexcept { return log_scale_.size(); }
    std::size_t cols() const noexcept { return components_.size(); }
    std::span<const double> row(std::size_t s) const { return {scaled_.data() + s * cols(), cols()}; }
    double log_scale(std::size_t s) const { return log_scale_[s]; }
    const std::vector<Component>& components() const noexcept { return components_; }

private:
    std::vector<Component> components_;
    std::vector<double> scaled_;
    std::vector<double> log_scale_;
};

double weights_log_likelihood(std::span<const double> weights, const ComponentDensities& densities);

std::vector<double> em_weight_step(std::span<const double> weights, const ComponentDensities& densities);
std::vector<double> em_weight_step(std::span<const double> weights, const std::vector<Component>& components,
                                   std::span<const double> data);

struct WeightFit {
    std::vector<double> weights;
    int iterations = 0;
    bool converged = false;
    // False when two components coincide; the weights are then only a fixed point.
    bool identifiable = true;
    double log_likelihood = 0.0;
};

// Known components, unknown weights. Weights start at `start` (uniform when empty).
// Converged means max_j |em(w)_j - w_j| <= tol.
WeightFit estimate_weights_mle(const ComponentDensities& densities, double tol, int max_iter,
                               std::span<const double> start = {});
WeightFit estimate_weights_mle(const std::vector<Component>& components, std::span<const double> data,
                               double tol, int max_iter, std::span<const double> start = {});

bool components_distinct(const std::vector<Component>& components);

struct GmmFit {
    MixtureModel model;
    int iterations = 0;
    bool converged = false;
    double log_likelihood = 0.0;
    // Log-likelihood at each successive parameter value visited by EM.
    std::vector<double> log_likelihood_trace;
};

// Evenly spaced data quantiles as means, pooled within-cluster stddev, uniform weights.
MixtureModel default_gmm_init(std::span<const double> data, std::size_t num_components,
                              std::optional<double> stddev_known = std::nullopt);

// Equal-variance Gaussian mixture by EM. The returned components are sorted by mean.
GmmFit fit_gmm_mle(std::span<const double> data, std::size_t num_components,
                   std::optional<double> stddev_known, const std::optional<MixtureModel>& init, double tol,
                   int max_iter);

struct EstimatorSettings {
    double em_tol = 1e-8;
    int em_max_iter = 500;
    double gmm_tol = 1e-6;
    int gmm_max_iter = 500;
    std::optional<double> gmm_stddev;  // shared stddev, fitted when absent

    bool operator==(const EstimatorSettings&) const = default;
};

// Re-estimates the input model each time a batch arrives, warm-started from the previous fit.
class StreamingEstimator {
public:
    static StreamingEstimator known_components(std::vector<Component> components, EstimatorSettings settings);
    static StreamingEstimator unknown_components(std::size_t num_components, EstimatorSettings settings);

    const MixtureModel& ingest(std::span<const double> batch);

    bool components_known() const noexcept { return known_; }
    bool has_model() const noexcept { return model_.has_value(); }
    const MixtureModel& model() const;
    const InputDataset& dataset() const noexcept { return dataset_; }
    std::size_t num_components() const noexcept { return num_components_; }
    int last_iterations() const noexcept { return last_iterations_; }
    bool last_converged() const noexcept { return last_converged_; }
    bool identifiable() const noexcept { return identifiable_; }

private:
    StreamingEstimator(bool known, std::size_t num_components, EstimatorSettings settings);

    bool known_;
    std::size_t num_components_;
    EstimatorSettings settings_;
    InputDataset dataset_;
    std::optional<ComponentDensities> densities_;
    std::optional<MixtureModel> model_;
    int last_iterations_ = 0;
    bool last_converged_ = true;
    bool identifiable_ = true;
};

}  // namespace rns
