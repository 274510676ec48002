#include "scanpath/ablation.hpp"

#include <fstream>
#include <set>

namespace scanpath {

using nlohmann::json;

std::vector<AblationVariant> default_ablation_grid() {
  return {
      {"full", json::object()},
      {"no-word-length", {{"use_word_length", false}}},
      {"no-duration", {{"use_duration", false}}},
      {"no-landing", {{"use_landing", false}}},
      {"no-kernel", {{"kernel", "none"}}},
      {"right-skewed-kernel", {{"window_left", 1}, {"window_right", 2}, {"sigma_scale", 2.0}}},
      {"no-window", {{"window_mode", "global"}}},
      {"no-window-no-kernel", {{"window_mode", "global"}, {"kernel", "none"}}},
      {"no-word-encoder", {{"use_word_encoder", false}}},
  };
}

std::vector<AblationVariant> asymmetric_window_grid() {
  std::vector<AblationVariant> grid;
  const std::pair<const char*, double> scales[] = {{"half", 0.5}, {"one", 1.0}, {"two", 2.0}};
  for (int dr : {2, 3}) {
    for (const auto& [label, scale] : scales) {
      grid.push_back({"skewed-r" + std::to_string(dr) + "-sigma-" + label,
                      {{"window_left", 1}, {"window_right", dr}, {"sigma_scale", scale}}});
    }
  }
  for (int dr : {1, 2}) {
    for (double sigma : {1.0, 2.0}) {
      grid.push_back({"shifted-r" + std::to_string(dr) + "-sigma-" + std::to_string(static_cast<int>(sigma)),
                      {{"window_left", 1},
                       {"window_right", dr},
                       {"kernel_offset", 1.0},
                       {"sigma_left", sigma},
                       {"sigma_right", sigma}}});
    }
  }
  return grid;
}

std::vector<AblationVariant> load_ablation_grid(const std::string& spec) {
  if (spec == "default") return default_ablation_grid();
  if (spec == "asymmetric") return asymmetric_window_grid();
  std::ifstream in(spec);
  if (!in) throw std::invalid_argument("cannot open ablation grid " + spec);
  const json j = json::parse(in);
  std::vector<AblationVariant> grid;
  std::set<std::string> names;
  for (const auto& v : j.at("variants")) {
    AblationVariant a{v.at("name").get<std::string>(), v.value("overrides", json::object())};
    if (a.name.empty() || a.name.find('/') != std::string::npos) {
      throw std::invalid_argument("ablation variant names must be non-empty and contain no '/'");
    }
    if (!names.insert(a.name).second) throw std::invalid_argument("duplicate ablation variant \"" + a.name + "\"");
    grid.push_back(std::move(a));
  }
  if (grid.empty()) throw std::invalid_argument("ablation grid has no variants");
  return grid;
}

ModelConfig apply_overrides(const ModelConfig& base, const json& overrides) {
  ModelConfig c = base;
  from_json(overrides, c);
  c.validate();
  return c;
}

}  // namespace scanpath
