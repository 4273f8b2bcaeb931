#include "dunet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dunet {

std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << s.n << "x" << s.c << "x" << s.h << "x" << s.w;
  return os.str();
}

std::size_t shape_size(std::span<const int> shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw ShapeError("value count does not match shape");
  }
}

Shape4 Tensor::shape4() const {
  if (shape_.size() != 4) throw ShapeError("expected a rank-4 tensor");
  return {shape_[0], shape_[1], shape_[2], shape_[3]};
}

std::span<double> Tensor::grad() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw EngineError("tensor has no gradient");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  } else {
    grad_.emplace(values_.size(), 0.0);
  }
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor::check_finite(std::string_view where) const {
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw EngineError("non-finite value in " + std::string(where));
    }
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace dunet
