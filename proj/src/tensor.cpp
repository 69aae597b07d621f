// SPDX-License-Identifier: Apache-2.0
#include "m3/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace m3 {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.size() > 3) throw std::invalid_argument("tensor rank above 3: " + shape_str(shape));
  for (auto e : shape)
    if (e == 0) throw std::invalid_argument("tensor extent must be positive: " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != numel(shape_))
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::vector(std::vector<double> v) {
  const auto n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace m3
