#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tml/tape.hpp"
#include "tml/tensor.hpp"

namespace tml {

// Relative error |a - n| / max(|a|, |n|, kGradCheckFloor). The floor keeps
// near-zero gradients, where central differences are dominated by rounding,
// from reporting spurious blow-ups.
inline constexpr double kGradCheckFloor = 1e-3;

double relative_error(double analytic, double numeric);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t input_index = 0;    // input holding the worst element
  std::size_t element_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements_checked = 0;
};

using ScalarFunction = std::function<Tensor<double>(Tape<double>&)>;

// Compares backward-pass gradients of f with central differences
// (f(x+eps) - f(x-eps)) / 2eps for every element of every input. f must be
// deterministic and build its result from `inputs` (which are marked as
// requiring grad). Evaluation runs in checked mode, so a non-finite
// intermediate raises NumericalError naming the offending op.
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs, double epsilon = 1e-5);

}  // namespace tml
