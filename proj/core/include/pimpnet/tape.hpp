#pragma once

#include <functional>
#include <vector>

#include "pimpnet/tensor.hpp"

namespace pimpnet {

// Reverse-mode tape, rebuilt per forward pass (define-by-run). Nodes are in
// topological order by construction; backward zeroes the gradients of every
// recorded tensor that wants one, seeds the loss with 1, and replays each
// node exactly once in reverse.
class Tape {
 public:
  // tensors[0] is the node output, the rest are its inputs. Returns the node
  // id, which is also written into the output's tape link.
  int record(std::vector<TensorPtr> tensors, std::function<void()> backward_fn);

  void backward(const TensorPtr& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<TensorPtr> tensors;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace pimpnet
