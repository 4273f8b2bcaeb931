#include "dunet/quant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dunet/graph.hpp"

namespace dunet::quant {

namespace {

void require_finite(double x) {
  if (!std::isfinite(x)) throw QuantError("quantizer input is not finite");
}

void require_bits(int k) {
  if (k < 1) throw QuantError("bit-width must be at least 1, got " + std::to_string(k));
}

}  // namespace

std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::full: return "full";
    case WeightMode::binary: return "binary";
    case WeightMode::binary_alpha: return "binary-alpha";
    case WeightMode::ternary: return "ternary";
  }
  return "full";
}

WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "full") return WeightMode::full;
  if (s == "binary") return WeightMode::binary;
  if (s == "binary-alpha" || s == "binary-α") return WeightMode::binary_alpha;
  if (s == "ternary") return WeightMode::ternary;
  throw QuantError("unknown weight_mode '" + s + "'");
}

void QuantScheme::validate() const {
  for (int b : {bit_i, bit_w, bit_g}) {
    if (b < 1 || b > kFullBits) {
      throw QuantError("bit-widths must lie in [1, 32]");
    }
  }
  if (inputs_quantized() && grads_quantized() && bit_i != bit_g) {
    throw QuantError("quantized inputs and gradients must share a bit-width");
  }
  switch (weight_mode) {
    case WeightMode::full:
      if (bit_w != kFullBits) throw QuantError("full weights require bit_w = 32");
      break;
    case WeightMode::binary:
    case WeightMode::binary_alpha:
      if (bit_w != 1) throw QuantError("binary weights require bit_w = 1");
      break;
    case WeightMode::ternary:
      if (bit_w != 2) throw QuantError("ternary weights require bit_w = 2");
      break;
  }
}

std::string QuantScheme::label() const {
  if (is_full()) return "full";
  std::ostringstream os;
  switch (weight_mode) {
    case WeightMode::full: os << "FW"; break;
    case WeightMode::binary: os << "BW"; break;
    case WeightMode::binary_alpha: os << "BW-alpha"; break;
    case WeightMode::ternary: os << "TW"; break;
  }
  if (inputs_quantized() || grads_quantized()) {
    os << "-QIG(" << bit_i << bit_w << bit_g << ")";
  }
  return os.str();
}

double sigma(int k) {
  require_bits(k);
  return std::ldexp(1.0, 1 - k);
}

double round_half_away(double x) { return std::round(x); }

double binarize(double x) {
  require_finite(x);
  const double c = std::clamp(x, -1.0, 1.0);
  return c >= 0.0 ? 1.0 : -1.0;
}

std::vector<double> binarize(std::span<const double> x) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(),
                 [](double v) { return binarize(v); });
  return out;
}

double ternary_threshold(std::span<const double> w) {
  if (w.empty()) throw QuantError("ternarize needs at least one weight");
  double sum = 0.0;
  for (double v : w) {
    require_finite(v);
    sum += std::abs(v);
  }
  return 0.7 * sum / static_cast<double>(w.size());
}

Ternary ternarize(std::span<const double> w) {
  Ternary t;
  t.delta = ternary_threshold(w);
  t.values.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    t.values[i] = std::abs(w[i]) > t.delta ? (w[i] > 0 ? 1.0 : -1.0) : 0.0;
  }
  return t;
}

double scale_alpha(std::span<const double> w) {
  if (w.empty()) throw QuantError("alpha needs at least one weight");
  double sum = 0.0;
  for (double v : w) {
    require_finite(v);
    sum += std::abs(v);
  }
  return sum / static_cast<double>(w.size());
}

double quantize_linear(double x, int k) {
  require_finite(x);
  const double s = sigma(k);
  const double q = s * round_half_away(x / s);
  return std::clamp(q, -1.0 + s, 1.0 - s);
}

std::vector<double> quantize_linear(std::span<const double> x, int k) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = quantize_linear(x[i], k);
  return out;
}

std::vector<double> quantize_gradient(std::span<const double> g, int k) {
  require_bits(k);
  double s = 0.0;
  for (double v : g) {
    require_finite(v);
    s = std::max(s, std::abs(v));
  }
  std::vector<double> out(g.size(), 0.0);
  if (s == 0.0) return out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[i] = s * quantize_linear(g[i] / s, k);
  }
  return out;
}

std::vector<double> quantize_weights(std::span<const double> w, WeightMode mode) {
  switch (mode) {
    case WeightMode::full:
      return {w.begin(), w.end()};
    case WeightMode::binary:
      return binarize(w);
    case WeightMode::binary_alpha: {
      const double a = scale_alpha(w);
      auto q = binarize(w);
      for (double& v : q) v *= a;
      return q;
    }
    case WeightMode::ternary:
      return ternarize(w).values;
  }
  return {w.begin(), w.end()};
}

ComputeGraph attach(const ComputeGraph& graph, const QuantScheme& scheme) {
  scheme.validate();
  if (graph.ops.empty()) {
    ComputeGraph g = graph;
    g.scheme = scheme;
    return g;
  }
  return lower(graph.config, graph.num_passes, scheme);
}

}  // namespace dunet::quant
