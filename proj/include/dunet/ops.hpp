#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dunet/tensor.hpp"

namespace dunet::ops {

struct Conv2dSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  bool bias = false;

  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

Shape4 conv2d_output_shape(const Shape4& in, const Conv2dSpec& spec);

/// y = scale * conv(x, w) + b. `w` is laid out (out, in, k, k).
void conv2d_forward(std::span<const double> x, const Shape4& xs,
                    std::span<const double> w, std::span<const double> bias,
                    const Conv2dSpec& spec, double scale, std::span<double> y);

/// Accumulates into dx (if non-empty), dw and db (if non-empty).
void conv2d_backward(std::span<const double> x, const Shape4& xs,
                     std::span<const double> w, std::span<const double> dy,
                     const Conv2dSpec& spec, double scale,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel statistics saved by a training-mode forward pass.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

/// Normalizes with batch statistics and returns them.
BatchNormStats batchnorm_forward_train(std::span<const double> x,
                                       const Shape4& xs,
                                       std::span<const double> gamma,
                                       std::span<const double> beta,
                                       std::span<double> y);

void batchnorm_forward_eval(std::span<const double> x, const Shape4& xs,
                            std::span<const double> gamma,
                            std::span<const double> beta,
                            std::span<const double> running_mean,
                            std::span<const double> running_var,
                            std::span<double> y);

/// Folds a batch into running statistics (unbiased variance).
void batchnorm_update_running(const Shape4& xs, const BatchNormStats& stats,
                              std::span<double> running_mean,
                              std::span<double> running_var);

/// dx is overwritten-by-accumulation; dgamma/dbeta accumulate.
void batchnorm_backward(std::span<const double> x, const Shape4& xs,
                        std::span<const double> gamma,
                        const BatchNormStats& stats,
                        std::span<const double> dy, std::span<double> dx,
                        std::span<double> dgamma, std::span<double> dbeta);

void relu_forward(std::span<const double> x, std::span<double> y);
/// Mask taken from the forward output, so it also works in place.
void relu_backward(std::span<const double> y, std::span<const double> dy,
                   std::span<double> dx);

/// 2x2 stride-2 max pooling; ties go to the first element in row-major
/// window order. Returns the flat argmax index per output element.
std::vector<std::uint32_t> maxpool2_forward(std::span<const double> x,
                                            const Shape4& xs,
                                            std::span<double> y);
void maxpool2_backward(const std::vector<std::uint32_t>& argmax,
                       std::span<const double> dy, std::span<double> dx);

/// Nearest-neighbour x2 upsampling.
void upsample2_forward(std::span<const double> x, const Shape4& xs,
                       std::span<double> y);
void upsample2_backward(std::span<const double> dy, const Shape4& xs,
                        std::span<double> dx);

/// Channel concatenation. All parts share n, h, w.
void concat_forward(std::span<const std::span<const double>> parts,
                    std::span<const Shape4> shapes, std::span<double> y);
void concat_backward(std::span<const double> dy,
                     std::span<const Shape4> shapes,
                     std::span<const std::span<double>> dparts);

}  // namespace dunet::ops
