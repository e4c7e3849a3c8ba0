#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace pimpnet {

class Tape;

// Dense row-major float32 array, the universal numeric carrier. Gradients are
// allocated lazily by the tape; a tensor without a tape link is immutable by
// convention and safe to share across threads.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until backward touches this tensor
  bool requires_grad = false;

  // Producing node, set when an operation records this tensor as its output.
  const Tape* tape = nullptr;
  int tape_node = -1;

  explicit Tensor(std::vector<int> shape_);
  Tensor(std::vector<int> shape_, std::vector<float> data_);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  // Scalar read; the tensor must hold exactly one element.
  float item() const;

  bool has_grad() const { return !grad.empty(); }

  // Allocates the gradient buffer if absent and fills it with zeros.
  void ensure_zero_grad();
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, float value, bool requires_grad = false);
TensorPtr tensor_of(std::vector<int> shape, std::vector<float> data,
                    bool requires_grad = false);
TensorPtr scalar_tensor(float value);

std::int64_t shape_numel(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_string(const std::vector<int>& shape);

}  // namespace pimpnet
