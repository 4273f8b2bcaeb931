#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dunet/data.hpp"

namespace dunet {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Points = std::vector<Landmark>;

/// Fraction of visible ground-truth landmarks whose prediction lies within
/// threshold * reference (inclusive). Empty when nothing is visible.
std::optional<double> pck(std::span<const Points> pred, std::span<const Points> gt,
                          std::span<const double> reference, double threshold);

/// Mean normalized landmark error in percent over visible landmarks,
/// averaged over samples that have any.
double nme(std::span<const Points> pred, std::span<const Points> gt,
           std::span<const double> interocular);

struct EvalResult {
  /// Per landmark; empty where no sample has it visible.
  std::vector<std::optional<double>> landmark_pck;
  std::optional<double> mean_pck;
  double nme = 0.0;
  /// Percent, one per sample; empty for samples with nothing visible.
  std::vector<std::optional<double>> sample_nme;
};

EvalResult evaluate(std::span<const Points> pred, std::span<const Points> gt,
                    std::span<const double> reference, double threshold);

}  // namespace dunet
