#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "bayesadapt/model.hpp"
#include "bayesadapt/tensor.hpp"

namespace bayesadapt {

using json = nlohmann::json;

// Doubles are written in shortest round-trip form, so values reload bitwise.
void to_json(json& j, const Tensor& t);
void from_json(const json& j, Tensor& t);

void to_json(json& j, const MlpSpec& s);
void from_json(const json& j, MlpSpec& s);

json read_json_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace bayesadapt
