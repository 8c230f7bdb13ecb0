#pragma once

#include "smoothhess/net.hpp"

#include "json.hpp"

#include <filesystem>

namespace smoothhess {

nlohmann::json network_to_json(const Network& net);
/// Throws ParseError on schema violations or non-finite numbers.
Network network_from_json(const nlohmann::json& j);

Network load_network(const std::filesystem::path& path);
void save_network(const Network& net, const std::filesystem::path& path);

/// Finite-checked accessors shared by the JSON readers.
double json_finite(const nlohmann::json& j, const char* what);
Vector json_vector(const nlohmann::json& j, const char* what);
Matrix json_matrix(const nlohmann::json& j, const char* what);
nlohmann::json vector_to_json(const Vector& v);
nlohmann::json matrix_to_json(const Matrix& m);

}  // namespace smoothhess
