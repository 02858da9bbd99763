#include "tml/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace tml {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarFunction& f) {
  Tape<double> tape(Tape<double>::Options{.recording = false, .checked = true});
  return f(tape).item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs, double epsilon) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.clear_grad();
  }
  std::vector<std::vector<double>> analytic;
  try {
    Tape<double> tape(Tape<double>::Options{.recording = true, .checked = true});
    Tensor<double> out = f(tape);
    tape.backward(out);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("grad_check: ") + e.what());
  }
  for (auto& in : inputs) analytic.push_back(in.grad_buffer());

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      try {
        values[i] = saved + epsilon;
        plus = evaluate(f);
        values[i] = saved - epsilon;
        minus = evaluate(f);
      } catch (const NumericalError& e) {
        values[i] = saved;
        throw NumericalError(std::string("grad_check: ") + e.what());
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double err = relative_error(analytic[t][i], numeric);
      ++report.elements_checked;
      if (err > report.max_rel_error || report.elements_checked == 1) {
        report.max_rel_error = err;
        report.input_index = t;
        report.element_index = i;
        report.analytic = analytic[t][i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace tml
