#pragma once

#include "stabledyn/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace stabledyn {

struct Trajectory {
  std::vector<Vec> states;
  double dt = 1.0;
  std::optional<std::uint64_t> seed;
  // Same length as states when present.
  std::vector<double> v_values;

  bool all_finite() const {
    for (const auto& s : states) {
      if (!s.allFinite()) return false;
    }
    return true;
  }
};

}  // namespace stabledyn
