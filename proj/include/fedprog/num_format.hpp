#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <string>

namespace fedprog {

/// Decimal serialization at 17 significant digits (round-trips IEEE doubles).
std::string fmt17(double v);

nlohmann::json vec_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vec_from_json(const nlohmann::json& j);
nlohmann::json mat_to_json(const Eigen::MatrixXd& m);  // row-major nested
Eigen::MatrixXd mat_from_json(const nlohmann::json& j);

}  // namespace fedprog
