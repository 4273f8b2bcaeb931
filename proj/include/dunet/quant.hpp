#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dunet {
struct ComputeGraph;
}

namespace dunet::quant {

/// Bit-width marker meaning "not quantized".
inline constexpr int kFullBits = 32;

enum class WeightMode { full, binary, binary_alpha, ternary };

std::string to_string(WeightMode m);
WeightMode weight_mode_from_string(const std::string& s);

class QuantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bit-widths for inputs (activations), weights and gradients.
struct QuantScheme {
  int bit_i = kFullBits;
  int bit_w = kFullBits;
  int bit_g = kFullBits;
  WeightMode weight_mode = WeightMode::full;
  bool skip_first_last = true;

  bool inputs_quantized() const { return bit_i < kFullBits; }
  bool grads_quantized() const { return bit_g < kFullBits; }
  bool weights_quantized() const { return weight_mode != WeightMode::full; }
  bool is_full() const {
    return !inputs_quantized() && !grads_quantized() && !weights_quantized();
  }
  /// Throws QuantError when bit-widths and weight mode disagree.
  void validate() const;
  /// Short name in the BW-QIG(818) style.
  std::string label() const;

  bool operator==(const QuantScheme&) const = default;
};

/// Grid spacing of the k-bit linear map: 2^(1-k).
double sigma(int k);

double round_half_away(double x);

/// sign(clip(x, -1, 1)) with sign(0) = +1.
double binarize(double x);
std::vector<double> binarize(std::span<const double> x);

/// 0.7 * mean(|w|).
double ternary_threshold(std::span<const double> w);

struct Ternary {
  double delta = 0.0;
  std::vector<double> values;
};
Ternary ternarize(std::span<const double> w);

/// mean(|w|), the per-layer factor of binary-alpha weights.
double scale_alpha(std::span<const double> w);

/// clip(sigma * round(x / sigma), -1 + sigma, 1 - sigma).
double quantize_linear(double x, int k);
std::vector<double> quantize_linear(std::span<const double> x, int k);

/// Max-normalizes g into [-1, 1], applies the k-bit map, rescales.
std::vector<double> quantize_gradient(std::span<const double> g, int k);

/// Straight-through window: gradients pass where |x| <= 1.
inline bool ste_pass(double x) { return x >= -1.0 && x <= 1.0; }

/// Quantized copy of a weight array under `mode` (full copies through).
std::vector<double> quantize_weights(std::span<const double> w, WeightMode mode);

/// Annotates every eligible layer of `graph` with `scheme`: weight quantizers
/// on convolutions (stem and heads exempt when skip_first_last), activation and
/// gradient quantizers on block outputs.
ComputeGraph attach(const ComputeGraph& graph, const QuantScheme& scheme);

}  // namespace dunet::quant
