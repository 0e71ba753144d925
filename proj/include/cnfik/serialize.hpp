#pragma once

#include <json.hpp>

#include "cnfik/ode.hpp"

namespace cnfik {

nlohmann::ordered_json solverToJson(const SolverConfig& s);
SolverConfig solverFromJson(const nlohmann::ordered_json& j);

}  // namespace cnfik
