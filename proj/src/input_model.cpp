#include "rns/input_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "rns/errors.hpp"

namespace rns {

namespace {

constexpr double kSimplexTol = 1e-12;
constexpr double kNegativeClamp = 1e-15;
constexpr double kTinyResponsibility = 1e-300;
constexpr double kClusterMassFloor = 1e-10;
constexpr double kStddevFloor = 1e-8;
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void renormalize(std::vector<double>& w) {
    for (auto& v : w)
        if (v < 0.0) v = 0.0;
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) throw std::invalid_argument("weights sum to zero");
    for (auto& v : w) v /= total;
}

std::vector<double> uniform_weights(std::size_t d) { return std::vector<double>(d, 1.0 / static_cast<double>(d)); }

}  // namespace

std::string to_string(Family family) {
    switch (family) {
        case Family::Normal: return "normal";
    }
    return "unknown";
}

Family family_from_string(const std::string& name) {
    if (name == "normal" || name == "Normal") return Family::Normal;
    throw std::invalid_argument("unknown component family: " + name);
}

Component::Component(Family family, std::vector<double> params) : family_(family), params_(std::move(params)) {}

Component Component::normal(double mean, double stddev) {
    if (!std::isfinite(mean)) throw std::invalid_argument("normal component mean must be finite");
    if (!(stddev > 0.0) || !std::isfinite(stddev))
        throw std::invalid_argument("normal component stddev must be positive");
    return Component(Family::Normal, {mean, stddev});
}

Component Component::make(Family family, std::vector<double> params) {
    switch (family) {
        case Family::Normal:
            if (params.size() != 2) throw std::invalid_argument("normal component takes (mean, stddev)");
            return normal(params[0], params[1]);
    }
    throw std::invalid_argument("unsupported family");
}

double Component::log_density(double x) const {
    const double z = (x - mean()) / stddev();
    return -0.5 * z * z - std::log(stddev()) - kLogSqrt2Pi;
}

double Component::density(double x) const { return std::exp(log_density(x)); }

MixtureModel::MixtureModel(std::vector<Component> components, std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
    if (weights_.size() != components_.size()) throw std::invalid_argument("one weight per component required");
    double total = 0.0;
    for (auto& w : weights_) {
        if (!std::isfinite(w) || w < -kNegativeClamp) throw std::invalid_argument("mixture weights must be >= 0");
        if (w < 0.0) w = 0.0;
        total += w;
    }
    if (std::abs(total - 1.0) > kSimplexTol) throw std::invalid_argument("mixture weights must sum to 1");
}

MixtureModel MixtureModel::uniform(std::vector<Component> components) {
    auto w = uniform_weights(components.size());
    return MixtureModel(std::move(components), std::move(w));
}

MixtureModel MixtureModel::with_weights(std::vector<double> weights) const {
    return MixtureModel(components_, std::move(weights));
}

MixtureModel MixtureModel::sorted_by_mean() const {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return components_[a].mean() < components_[b].mean(); });
    std::vector<Component> comps;
    std::vector<double> w;
    for (auto k : order) {
        comps.push_back(components_[k]);
        w.push_back(weights_[k]);
    }
    return MixtureModel(std::move(comps), std::move(w));
}

double MixtureModel::log_likelihood(std::span<const double> data) const {
    double total = 0.0;
    std::vector<double> logs(size());
    for (double x : data) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < size(); ++j) {
            logs[j] = weights_[j] > 0.0 ? std::log(weights_[j]) + components_[j].log_density(x)
                                        : -std::numeric_limits<double>::infinity();
            peak = std::max(peak, logs[j]);
        }
        if (!std::isfinite(peak)) return -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (double l : logs) sum += std::exp(l - peak);
        total += peak + std::log(sum);
    }
    return total;
}

double mixture_density(const MixtureModel& model, double x) {
    double total = 0.0;
    for (std::size_t j = 0; j < model.size(); ++j) total += model.weights()[j] * model.component(j).density(x);
    return total;
}

void InputDataset::ingest(std::span<const double> batch) {
    observations_.insert(observations_.end(), batch.begin(), batch.end());
    stage_counts_.push_back(batch.size());
}

InputDataset ingest_batch(InputDataset dataset, std::span<const double> batch) {
    dataset.ingest(batch);
    return dataset;
}

std::vector<double> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<double> values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        double v = 0.0;
        if (!(ls >> v)) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": not a number");
        values.push_back(v);
    }
    return values;
}

ComponentDensities::ComponentDensities(std::vector<Component> components) : components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("need at least one component");
}

void ComponentDensities::append(std::span<const double> observations) {
    const std::size_t d = cols();
    std::vector<double> logs(d);
    scaled_.reserve(scaled_.size() + observations.size() * d);
    log_scale_.reserve(log_scale_.size() + observations.size());
    for (double x : observations) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d; ++j) {
            logs[j] = components_[j].log_density(x);
            peak = std::max(peak, logs[j]);
        }
        for (std::size_t j = 0; j < d; ++j) scaled_.push_back(std::exp(logs[j] - peak));
        log_scale_.push_back(peak);
    }
}

double weights_log_likelihood(std::span<const double> weights, const ComponentDensities& densities) {
    double total = 0.0;
    const std::size_t d = densities.cols();
    for (std::size_t s = 0; s < densities.rows(); ++s) {
        const auto f = densities.row(s);
        double p = 0.0;
        for (std::size_t j = 0; j < d; ++j) p += weights[j] * f[j];
        if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
        total += std::log(p) + densities.log_scale(s);
    }
    return total;
}

std::vector<double> em_weight_step(std::span<const double> weights, const ComponentDensities& densities) {
    const std::size_t d = densities.cols();
    if (weights.size() != d) throw std::invalid_argument("weight vector length mismatch");
    if (densities.rows() == 0) throw std::invalid_argument("EM step needs data");
    std::vector<double> next(d, 0.0);
    for (std::size_t s = 0; s < densities.rows(); ++s) {
        const auto f = densities.row(s);
        double p = 0.0;
        for (std::size_t j = 0; j < d; ++j) p += weights[j] * f[j];
        if (!(p > 0.0))
            throw AllDensitiesZero("observation " + std::to_string(s) + " has zero density under current weights");
        for (std::size_t j = 0; j < d; ++j) {
            const double r = weights[j] * f[j] / p;
            if (r > kTinyResponsibility) next[j] += r;
        }
    }
    const double m = static_cast<double>(densities.rows());
    for (auto& v : next) v /= m;
    renormalize(next);
    return next;
}

std::vector<double> em_weight_step(std::span<const double> weights, const std::vector<Component>& components,
                                   std::span<const double> data) {
    ComponentDensities densities(components);
    densities.append(data);
    return em_weight_step(weights, densities);
}

bool components_distinct(const std::vector<Component>& components) {
    for (std::size_t a = 0; a < components.size(); ++a)
        for (std::size_t b = a + 1; b < components.size(); ++b)
            if (components[a] == components[b]) return false;
    return true;
}

namespace {

// Single pass over the data at weights w: log-likelihood, gradient, Hessian and the EM image.
struct LikelihoodPass {
    double log_likelihood = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
    std::vector<double> em_image;
};

LikelihoodPass likelihood_pass(const std::vector<double>& w, const ComponentDensities& densities) {
    const std::size_t d = densities.cols();
    LikelihoodPass out;
    out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    out.hessian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    std::vector<double> q(d);
    for (std::size_t s = 0; s < densities.rows(); ++s) {
        const auto f = densities.row(s);
        double p = 0.0;
        for (std::size_t j = 0; j < d; ++j) p += w[j] * f[j];
        if (!(p > 0.0))
            throw AllDensitiesZero("observation " + std::to_string(s) + " has zero density under current weights");
        out.log_likelihood += std::log(p) + densities.log_scale(s);
        const double inv = 1.0 / p;
        for (std::size_t j = 0; j < d; ++j) q[j] = f[j] * inv;
        for (std::size_t j = 0; j < d; ++j) {
            out.gradient[static_cast<Eigen::Index>(j)] += q[j];
            for (std::size_t k = 0; k <= j; ++k)
                out.hessian(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) -= q[j] * q[k];
        }
    }
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < j; ++k)
            out.hessian(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                out.hessian(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    const double m = static_cast<double>(densities.rows());
    out.em_image.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double r = w[j] * out.gradient[static_cast<Eigen::Index>(j)] / m;
        out.em_image[j] = r > kTinyResponsibility ? r : 0.0;
    }
    renormalize(out.em_image);
    return out;
}

// Newton direction for the log-likelihood restricted to sum(delta) = 0.
std::optional<Eigen::VectorXd> constrained_newton(const LikelihoodPass& pass) {
    const auto d = pass.gradient.size();
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + 1, d + 1);
    kkt.topLeftCorner(d, d) = pass.hessian;
    kkt.block(0, d, d, 1).setOnes();
    kkt.block(d, 0, 1, d).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
    rhs.head(d) = -pass.gradient;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < d + 1) return std::nullopt;
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return std::nullopt;
    Eigen::VectorXd delta = sol.head(d);
    // ascent check: the restricted Hessian is negative semidefinite, so g'delta >= 0 at a proper step
    if (pass.gradient.dot(delta) <= 0.0) return std::nullopt;
    return delta;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
    return m;
}

}  // namespace

WeightFit estimate_weights_mle(const ComponentDensities& densities, double tol, int max_iter,
                               std::span<const double> start) {
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    if (densities.rows() == 0) throw std::invalid_argument("weight estimation needs data");
    const std::size_t d = densities.cols();

    WeightFit fit;
    fit.identifiable = components_distinct(densities.components());
    std::vector<double> w = start.empty() ? uniform_weights(d) : std::vector<double>(start.begin(), start.end());
    if (w.size() != d) throw std::invalid_argument("start weights length mismatch");
    renormalize(w);
    // A component with zero starting weight can never regain mass under EM; start interior instead.
    if (std::any_of(w.begin(), w.end(), [](double v) { return v <= 0.0; })) w = uniform_weights(d);

    if (d == 1) {
        fit.weights = {1.0};
        fit.iterations = 1;
        fit.converged = true;
        fit.log_likelihood = weights_log_likelihood(fit.weights, densities);
        return fit;
    }

    while (true) {
        const auto pass = likelihood_pass(w, densities);
        if (max_abs_diff(pass.em_image, w) <= tol) {
            fit.converged = true;
            fit.log_likelihood = pass.log_likelihood;
            break;
        }
        if (fit.iterations >= max_iter) {
            fit.log_likelihood = pass.log_likelihood;
            break;
        }
        ++fit.iterations;

        bool stepped = false;
        if (fit.identifiable) {
            if (const auto delta = constrained_newton(pass)) {
                bool interior = true;
                for (std::size_t j = 0; j < d; ++j)
                    if (w[j] + (*delta)[static_cast<Eigen::Index>(j)] <= 0.0) interior = false;
                if (interior) {
                    double step = 1.0;
                    for (int halving = 0; halving < 30 && !stepped; ++halving, step *= 0.5) {
                        std::vector<double> trial(d);
                        for (std::size_t j = 0; j < d; ++j)
                            trial[j] = w[j] + step * (*delta)[static_cast<Eigen::Index>(j)];
                        renormalize(trial);
                        if (weights_log_likelihood(trial, densities) >= pass.log_likelihood) {
                            w = std::move(trial);
                            stepped = true;
                        }
                    }
                }
            }
        }
        if (!stepped) w = pass.em_image;
    }
    fit.weights = std::move(w);
    return fit;
}

WeightFit estimate_weights_mle(const std::vector<Component>& components, std::span<const double> data, double tol,
                               int max_iter, std::span<const double> start) {
    ComponentDensities densities(components);
    densities.append(data);
    return estimate_weights_mle(densities, tol, max_iter, start);
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double level) {
    if (sorted.size() == 1) return sorted.front();
    const double pos = level * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

struct GmmParams {
    std::vector<double> weights;
    std::vector<double> means;
    double stddev = 1.0;
};

}  // namespace

MixtureModel default_gmm_init(std::span<const double> data, std::size_t num_components,
                              std::optional<double> stddev_known) {
    if (data.empty()) throw std::invalid_argument("GMM initialization needs data");
    if (num_components == 0) throw std::invalid_argument("GMM needs at least one component");
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    const auto d = num_components;
    std::vector<double> means(d);
    for (std::size_t j = 0; j < d; ++j)
        means[j] = quantile_sorted(sorted, (static_cast<double>(j) + 0.5) / static_cast<double>(d));

    double stddev = 0.0;
    if (stddev_known) {
        stddev = *stddev_known;
    } else {
        double ss = 0.0;
        for (double x : data) {
            double best = std::numeric_limits<double>::infinity();
            for (double mu : means) best = std::min(best, (x - mu) * (x - mu));
            ss += best;
        }
        const double dof = std::max<double>(1.0, static_cast<double>(data.size()) - static_cast<double>(d));
        stddev = std::sqrt(ss / dof);
        if (!(stddev > kStddevFloor)) {
            const double mean = std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
            double total = 0.0;
            for (double x : data) total += (x - mean) * (x - mean);
            stddev = std::max(std::sqrt(total / static_cast<double>(data.size())), kStddevFloor);
        }
    }
    std::vector<Component> comps;
    for (double mu : means) comps.push_back(Component::normal(mu, stddev));
    return MixtureModel::uniform(std::move(comps));
}

GmmFit fit_gmm_mle(std::span<const double> data, std::size_t num_components, std::optional<double> stddev_known,
                   const std::optional<MixtureModel>& init, double tol, int max_iter) {
    if (num_components == 0) throw std::invalid_argument("GMM needs at least one component");
    if (data.empty()) throw std::invalid_argument("GMM fit needs data");
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    if (stddev_known && !(*stddev_known > 0.0)) throw std::invalid_argument("known stddev must be positive");
    const std::size_t d = num_components;
    const double m = static_cast<double>(data.size());

    const MixtureModel start = init ? *init : default_gmm_init(data, d, stddev_known);
    if (start.size() != d) throw std::invalid_argument("GMM init has wrong number of components");

    // Work on centred data so the second-moment accumulators do not cancel.
    const double shift = std::accumulate(data.begin(), data.end(), 0.0) / m;

    GmmParams p;
    p.weights = start.weights();
    for (const auto& c : start.components()) p.means.push_back(c.mean() - shift);
    if (stddev_known) {
        p.stddev = *stddev_known;
    } else {
        double pooled = 0.0;
        for (std::size_t j = 0; j < d; ++j) pooled += p.weights[j] * start.component(j).stddev() * start.component(j).stddev();
        p.stddev = std::sqrt(pooled);
    }
    if (std::any_of(p.weights.begin(), p.weights.end(), [](double v) { return v <= 0.0; }))
        p.weights = uniform_weights(d);

    GmmFit fit{start, 0, false, 0.0, {}};
    std::vector<double> logs(d), resp(d), mass(d), first(d), second(d);

    auto e_step = [&](const GmmParams& q, bool accumulate) {
        std::fill(mass.begin(), mass.end(), 0.0);
        std::fill(first.begin(), first.end(), 0.0);
        std::fill(second.begin(), second.end(), 0.0);
        std::vector<double> log_w(d);
        for (std::size_t j = 0; j < d; ++j)
            log_w[j] = q.weights[j] > 0.0 ? std::log(q.weights[j]) : -std::numeric_limits<double>::infinity();
        const double inv_var = 1.0 / (q.stddev * q.stddev);
        const double norm = -std::log(q.stddev) - kLogSqrt2Pi;
        double ll = 0.0;
        for (double raw : data) {
            const double x = raw - shift;
            double peak = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < d; ++j) {
                const double z = x - q.means[j];
                logs[j] = log_w[j] - 0.5 * z * z * inv_var;
                peak = std::max(peak, logs[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                resp[j] = std::exp(logs[j] - peak);
                sum += resp[j];
            }
            ll += peak + std::log(sum) + norm;
            if (!accumulate) continue;
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j < d; ++j) {
                const double r = resp[j] * inv;
                if (r <= kTinyResponsibility) continue;
                mass[j] += r;
                first[j] += r * x;
                second[j] += r * x * x;
            }
        }
        return ll;
    };

    while (true) {
        const double ll = e_step(p, true);
        fit.log_likelihood_trace.push_back(ll);
        if (fit.iterations >= max_iter) break;
        ++fit.iterations;

        GmmParams next;
        next.weights.resize(d);
        next.means.resize(d);
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            if (mass[j] < kClusterMassFloor)
                throw DegenerateCluster("component " + std::to_string(j) + " lost its responsibility mass");
            next.weights[j] = mass[j] / m;
            next.means[j] = first[j] / mass[j];
            ss += std::max(0.0, second[j] - first[j] * first[j] / mass[j]);
        }
        renormalize(next.weights);
        next.stddev = stddev_known ? *stddev_known : std::max(std::sqrt(ss / m), kStddevFloor);

        double change = std::abs(next.stddev - p.stddev);
        for (std::size_t j = 0; j < d; ++j) {
            change = std::max(change, std::abs(next.weights[j] - p.weights[j]));
            change = std::max(change, std::abs(next.means[j] - p.means[j]));
        }
        p = std::move(next);
        if (change <= tol) {
            fit.converged = true;
            break;
        }
    }
    fit.log_likelihood = e_step(p, false);
    if (fit.log_likelihood_trace.empty() || fit.log_likelihood_trace.back() != fit.log_likelihood)
        fit.log_likelihood_trace.push_back(fit.log_likelihood);

    std::vector<Component> comps;
    for (double mu : p.means) comps.push_back(Component::normal(mu + shift, p.stddev));
    fit.model = MixtureModel(std::move(comps), p.weights).sorted_by_mean();
    return fit;
}

StreamingEstimator::StreamingEstimator(bool known, std::size_t num_components, EstimatorSettings settings)
    : known_(known), num_components_(num_components), settings_(settings) {}

StreamingEstimator StreamingEstimator::known_components(std::vector<Component> components,
                                                        EstimatorSettings settings) {
    StreamingEstimator est(true, components.size(), settings);
    est.identifiable_ = components_distinct(components);
    est.densities_.emplace(components);
    est.model_ = MixtureModel::uniform(std::move(components));
    return est;
}

StreamingEstimator StreamingEstimator::unknown_components(std::size_t num_components, EstimatorSettings settings) {
    if (num_components == 0) throw std::invalid_argument("need at least one component");
    return StreamingEstimator(false, num_components, settings);
}

const MixtureModel& StreamingEstimator::model() const {
    if (!model_) throw std::logic_error("input model not estimated yet");
    return *model_;
}

const MixtureModel& StreamingEstimator::ingest(std::span<const double> batch) {
    dataset_.ingest(batch);
    if (known_) {
        densities_->append(batch);
        if (dataset_.total() == 0) return *model_;
        auto fit = estimate_weights_mle(*densities_, settings_.em_tol, settings_.em_max_iter, model_->weights());
        last_iterations_ = fit.iterations;
        last_converged_ = fit.converged;
        model_ = model_->with_weights(std::move(fit.weights));
        return *model_;
    }
    if (dataset_.total() == 0) {
        if (!model_) throw std::invalid_argument("unknown-component estimation needs input data before use");
        return *model_;
    }
    auto fit = fit_gmm_mle(dataset_.observations(), num_components_, settings_.gmm_stddev, model_,
                           settings_.gmm_tol, settings_.gmm_max_iter);
    last_iterations_ = fit.iterations;
    last_converged_ = fit.converged;
    model_ = std::move(fit.model);
    return *model_;
}

}  // namespace rns
