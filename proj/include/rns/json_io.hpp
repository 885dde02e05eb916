#pragma once

#include <json.hpp>

#include "rns/allocation.hpp"
#include "rns/grid.hpp"
#include "rns/input_model.hpp"

namespace rns {

using Json = nlohmann::json;

Json matrix_to_json(const Matrix& m);
// Array of equal-length rows; throws ConfigError on anything else.
Matrix matrix_from_json(const Json& j);

// {"components": [{"family": "normal", "params": [mean, stddev]}], "weights": [...]}
Json mixture_to_json(const MixtureModel& model);
MixtureModel mixture_from_json(const Json& j);

// {"mu": [[...]], "sigma": [[...]], "w": [...]}
Json problem_to_json(const ProblemEstimate& est);
ProblemEstimate problem_from_json(const Json& j);

Json residuals_to_json(const BalanceResiduals& r);

}  // namespace rns
