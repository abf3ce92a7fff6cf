#pragma once

#include "json.hpp"

#include "ivf/vit.hpp"

namespace ivf {

void to_json(nlohmann::json& j, const ViTConfig& cfg);
void from_json(const nlohmann::json& j, ViTConfig& cfg);

}  // namespace ivf
