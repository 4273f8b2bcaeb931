#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "dunet/config.hpp"

namespace dunet::test {

inline std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Central differences of f with respect to every entry of x.
inline std::vector<double> numeric_grad(std::vector<double>& x,
                                        const std::function<double()>& f,
                                        double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||).
inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double n = std::sqrt(std::max(na, nb));
  return n == 0 ? std::sqrt(d) : std::sqrt(d) / n;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Small network that runs in milliseconds.
inline DUNetConfig tiny_net(int n = 2, int levels = 2, int order = 1) {
  DUNetConfig c;
  c.num_unets = n;
  c.levels = levels;
  c.order = order;
  c.in_channels = 3;
  c.stem_channels = 8;
  c.bottleneck_width = 8;
  c.growth = 4;
  c.input_resolution = 8;
  c.num_landmarks = 3;
  return c;
}

}  // namespace dunet::test
