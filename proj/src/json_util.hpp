#pragma once

// Internal JSON building blocks shared by the dataset and prediction-file
// parsers. Not part of the public headers.

#include <json.hpp>

#include "stenoseg/annotations.hpp"

namespace stenoseg::annotations::detail {

// Schema-level conversion; throws ParseError / ValidationError on bad shape.
Dataset dataset_from_json(const nlohmann::json& root);
nlohmann::json dataset_to_json(const Dataset& d);

std::int64_t require_int(const nlohmann::json& obj, const char* key, const std::string& where);
std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where);
double require_number(const nlohmann::json& obj, const char* key, const std::string& where);

}  // namespace stenoseg::annotations::detail
