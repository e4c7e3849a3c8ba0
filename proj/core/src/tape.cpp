#include "pimpnet/tape.hpp"

#include "pimpnet/error.hpp"

namespace pimpnet {

int Tape::record(std::vector<TensorPtr> tensors,
                 std::function<void()> backward_fn) {
  const int id = static_cast<int>(nodes_.size());
  TensorPtr out = tensors.front();
  out->tape = this;
  out->tape_node = id;
  nodes_.push_back(Node{std::move(tensors), std::move(backward_fn)});
  return id;
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->numel() != 1) {
    throw Error("backward: loss must be a scalar, got shape " +
                shape_string(loss->shape));
  }
  if (loss->tape != this || loss->tape_node < 0 ||
      loss->tape_node >= static_cast<int>(nodes_.size())) {
    throw Error("backward: loss tensor is not recorded on this tape");
  }

  for (auto& node : nodes_) {
    for (auto& t : node.tensors) {
      if (t->requires_grad) t->ensure_zero_grad();
    }
  }
  loss->ensure_zero_grad();
  loss->grad[0] = 1.0f;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward_fn();
  }
}

}  // namespace pimpnet
