#include "pimpnet/tensor.hpp"

#include <sstream>

#include "pimpnet/error.hpp"

namespace pimpnet {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

static void check_shape(const std::vector<int>& shape) {
  for (int e : shape) {
    if (e <= 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_string(shape));
    }
  }
}

Tensor::Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
  check_shape(shape);
  data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
}

float Tensor::item() const {
  if (data.size() != 1) {
    throw ShapeError("item() requires a scalar tensor, got shape " +
                     shape_string(shape));
  }
  return data[0];
}

void Tensor::ensure_zero_grad() {
  grad.assign(data.size(), 0.0f);
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr full(std::vector<int> shape, float value, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  for (auto& x : t->data) x = value;
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr tensor_of(std::vector<int> shape, std::vector<float> data,
                    bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), std::move(data));
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr scalar_tensor(float value) {
  return tensor_of({1}, {value});
}

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace pimpnet
