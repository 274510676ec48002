#pragma once

#include "scanpath/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace scanpath {

struct AblationVariant {
  std::string name;
  nlohmann::json overrides;  // ModelConfig keys applied on top of the base config
};

/// Full model plus the eight component ablations.
std::vector<AblationVariant> default_ablation_grid();
/// Skewed (D_l = 1, D_r ∈ {2, 3}, σ ∈ {D/2, D, 2D}) and shifted (centre
/// f + 1, σ ∈ {D_l, 2D_l}, D_r ∈ {1, 2}) kernels.
std::vector<AblationVariant> asymmetric_window_grid();
/// {"variants": [{"name": ..., "overrides": {...}}, ...]}, or the names
/// "default" and "asymmetric".
std::vector<AblationVariant> load_ablation_grid(const std::string& spec);

ModelConfig apply_overrides(const ModelConfig& base, const nlohmann::json& overrides);

}  // namespace scanpath
