#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tml/grad_check.hpp"

namespace tml {

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kNormTolerance = 1e-4;  // norm layers and composites

struct GradCheckItem {
  std::string name;
  std::string group;  // "op", "norm" or "composite"
  double tolerance = kOpTolerance;
  std::function<GradCheckReport()> run;
};

// Every differentiable op, the margin heads, and three composite paths
// (metric branch, transformer branch, combined loss) at 64-bit on fixed seeded
// inputs.
std::vector<GradCheckItem> gradcheck_suite();

}  // namespace tml
