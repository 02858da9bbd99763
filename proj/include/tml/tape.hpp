#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tml/tensor.hpp"

namespace tml {

// Ordered record of executed operations. backward() replays the recorded
// adjoints in reverse execution order, which is a valid reverse topological
// order because every op is recorded after its inputs exist.
//
// A tape is single-use: backward() consumes it. A tape constructed with
// recording disabled executes ops without keeping any history (inference).
template <typename T>
class Tape {
 public:
  struct Options {
    bool recording = true;
    // Checked mode: domain violations and non-finite outputs raise with the op name.
    bool checked = false;
  };

  Tape() = default;
  explicit Tape(Options options) : options_(options) {}

  static Tape inference() { return Tape(Options{.recording = false, .checked = false}); }

  bool recording() const noexcept { return options_.recording; }
  bool checked() const noexcept { return options_.checked; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // True when the op producing from these inputs must be recorded.
  bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) const;

  // Registers the adjoint of an op whose output is `output`. Marks output as
  // requiring grad.
  void record(std::string op, Tensor<T>& output, std::function<void()> adjoint);

  // Checked-mode scan of an op result.
  void check_finite(const std::string& op, const Tensor<T>& output) const;

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable
  // requires_grad tensor. `loss` must be a single-element tensor.
  void backward(const Tensor<T>& loss);

  // Names of recorded ops, in execution order.
  std::vector<std::string> op_names() const;

 private:
  struct Node {
    std::string op;
    Tensor<T> output;
    std::function<void()> adjoint;
  };

  Options options_{};
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace tml
