#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dunet/engine.hpp"
#include "dunet/graph.hpp"
#include "dunet/io.hpp"

namespace dunet {

class AnalysisError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ParamCount {
  std::size_t total = 0;
  /// Parameters owned by each block, in block order; blocks without
  /// parameters are omitted. Second-pass blocks own nothing.
  std::vector<std::pair<std::string, std::size_t>> per_block;
};

ParamCount count_params(const ComputeGraph& graph);

struct Allocation {
  std::string site;
  std::size_t elements = 0;
  std::size_t bytes = 0;
  /// Concat or batchnorm storage at a semantic position.
  bool concat_bn = false;
  /// U-Net the site belongs to, 0 for shared buffers and the stem.
  int unet = 0;
};

struct MemoryPlan {
  ExecMode mode = ExecMode::naive;
  std::vector<Allocation> allocations;
  std::size_t total_bytes = 0;
  /// Bytes per U-Net, index 0 for shared and stem storage.
  std::vector<std::size_t> per_unet;

  int concat_bn_sites() const;
};

/// Activation storage for one forward/backward at `batch` samples. ReLU runs
/// in place in both modes and costs nothing.
MemoryPlan plan_memory(const ComputeGraph& graph, ExecMode mode, int batch,
                       int bytes_per_element);

struct Compression {
  double ms = 1.0;
  double tm = 1.0;
};

Compression compression_ratios(const quant::QuantScheme& scheme);

/// nme^2 * tm * ms; throws AnalysisError unless every argument is positive.
double balance_index(double nme, double tm, double ms);

struct EfficiencyReport {
  std::size_t param_count = 0;
  double ms = 1.0;
  double tm = 1.0;
  std::optional<double> nme;
  std::optional<double> pck;

  /// Present once nme is known.
  std::optional<double> bi() const;
};

EfficiencyReport efficiency_report(const ComputeGraph& graph, std::optional<double> nme = {},
                                   std::optional<double> pck = {});

/// One row per report; columns N, L, K, scheme, params, MS, TM, BI, NME, PCK.
CsvTable efficiency_table(const std::vector<std::pair<DUNetConfig, EfficiencyReport>>& rows);
CsvTable memory_table(const MemoryPlan& plan);

}  // namespace dunet
