#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dunet {

/// Raised for malformed shapes, non-finite values and other engine misuse.
class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public EngineError {
 public:
  using EngineError::EngineError;
};

/// NCHW extents of an activation tensor.
struct Shape4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

/// Dense row-major array of doubles with an optional gradient of the same
/// shape. Activations use (N, C, H, W); parameters use whatever extents the
/// owning layer declares.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);
  explicit Tensor(const Shape4& s, double fill = 0.0)
      : Tensor(std::vector<int>{s.n, s.c, s.h, s.w}, fill) {}

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Interprets a rank-4 tensor as NCHW.
  Shape4 shape4() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool has_grad() const { return grad_.has_value(); }
  /// Allocates a zeroed gradient if none is present.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  void fill(double v);
  /// Throws EngineError naming `where` if any value is NaN or infinite.
  void check_finite(std::string_view where) const;

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && values_ == o.values_;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

std::size_t shape_size(std::span<const int> shape);

/// SplitMix64 mixer, used to derive independent RNG streams from a root seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dunet
