#include "rns/json_io.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "rns/errors.hpp"

namespace rns {

namespace {

// Non-finite doubles have no JSON spelling; they are written as null.
Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json numbers(const std::vector<double>& v) {
    Json out = Json::array();
    for (double x : v) out.push_back(number(x));
    return out;
}

std::vector<double> doubles_from_json(const Json& j, const char* what) {
    if (!j.is_array()) throw ConfigError(std::string(what) + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : j) {
        if (!x.is_number()) throw ConfigError(std::string(what) + " must be an array of numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
    Json out = Json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (double x : m.row(i)) row.push_back(number(x));
        out.push_back(std::move(row));
    }
    return out;
}

Matrix matrix_from_json(const Json& j) {
    if (!j.is_array()) throw ConfigError("matrix must be an array of rows");
    std::vector<std::vector<double>> rows;
    for (const auto& r : j) rows.push_back(doubles_from_json(r, "matrix row"));
    try {
        return Matrix::from_rows(rows);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

Json mixture_to_json(const MixtureModel& model) {
    Json comps = Json::array();
    for (const auto& c : model.components()) {
        Json params = Json::array();
        for (double p : c.params()) params.push_back(number(p));
        comps.push_back({{"family", to_string(c.family())}, {"params", std::move(params)}});
    }
    return {{"components", std::move(comps)}, {"weights", numbers(model.weights())}};
}

MixtureModel mixture_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("components") || !j.contains("weights"))
        throw ConfigError("mixture needs components and weights");
    try {
        std::vector<Component> comps;
        for (const auto& c : j.at("components")) {
            const auto family = family_from_string(c.at("family").get<std::string>());
            comps.push_back(Component::make(family, doubles_from_json(c.at("params"), "component params")));
        }
        return MixtureModel(std::move(comps), doubles_from_json(j.at("weights"), "weights"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid mixture: ") + e.what());
    }
}

Json problem_to_json(const ProblemEstimate& est) {
    return {{"mu", matrix_to_json(est.mu())}, {"sigma", matrix_to_json(est.sigma())}, {"w", numbers(est.w())}};
}

ProblemEstimate problem_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("mu") || !j.contains("sigma") || !j.contains("w"))
        throw ConfigError("problem instance needs mu, sigma and w");
    try {
        return ProblemEstimate(matrix_from_json(j.at("mu")), matrix_from_json(j.at("sigma")),
                               doubles_from_json(j.at("w"), "w"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid problem instance: ") + e.what());
    }
}

Json residuals_to_json(const BalanceResiduals& r) {
    return {{"input", numbers(r.input)},
            {"total", numbers(r.total)},
            {"local", numbers(r.local)},
            {"best", r.best},
            {"input_norm", number(r.input_norm())},
            {"total_norm", number(r.total_norm())},
            {"local_norm", number(r.local_norm())}};
}

}  // namespace rns
