#include "tml/tape.hpp"

#include <cmath>

namespace tml {

template <typename T>
bool Tape<T>::wants_grad(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!options_.recording) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void Tape<T>::record(std::string op, Tensor<T>& output, std::function<void()> adjoint) {
  if (consumed_) throw StructuralError("op '" + op + "' recorded on a consumed tape");
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(op), output, std::move(adjoint)});
}

template <typename T>
void Tape<T>::check_finite(const std::string& op, const Tensor<T>& output) const {
  if (!options_.checked) return;
  for (std::size_t i = 0; i < output.numel(); ++i) {
    if (!std::isfinite(output.data()[i])) {
      throw NumericalError("non-finite value at element " + std::to_string(i) + " of '" + op +
                           "' output " + shape_str(output.shape()));
    }
  }
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw StructuralError("tape already consumed by a previous backward pass");
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a single-element loss, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  auto& seed = loss.grad_buffer();
  seed[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // Ops whose output received no adjoint lie off the path to the loss.
    if (!it->output.has_grad()) continue;
    it->adjoint();
    if (options_.checked) {
      for (T g : it->output.grad()) {
        if (!std::isfinite(g)) throw NumericalError("non-finite adjoint flowing out of '" + it->op + "'");
      }
    }
  }
  nodes_.clear();
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n.op);
  return names;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace tml
