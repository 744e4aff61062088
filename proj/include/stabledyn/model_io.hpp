#pragma once

#include "stabledyn/mdn.hpp"
#include "stabledyn/stable_model.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace stabledyn {

inline constexpr int kModelFormatVersion = 1;

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

// Exactly one of the two is set.
struct LoadedModel {
  std::optional<StableModel> deterministic;
  std::optional<MdnHead> mdn;

  bool is_mdn() const { return mdn.has_value(); }
  Eigen::Index dim() const { return mdn ? mdn->dim() : deterministic->dim(); }
};

// Models must have been built with create() so that their architecture is known.
nlohmann::json model_to_json(const StableModel& model);
nlohmann::json model_to_json(const MdnHead& model);
LoadedModel model_from_json(const nlohmann::json& j);

void save_model(const StableModel& model, const std::string& path);
void save_model(const MdnHead& model, const std::string& path);
LoadedModel load_model(const std::string& path);

}  // namespace stabledyn
