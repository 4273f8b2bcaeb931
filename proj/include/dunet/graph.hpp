#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dunet/config.hpp"
#include "dunet/ops.hpp"
#include "dunet/quant.hpp"

namespace dunet {

enum class Side { top_down, bottom_up };

/// A (level, side) location; blocks at the same position in different U-Nets
/// carry the same semantics and share buffers in efficient mode.
struct SemanticPosition {
  int level = 1;
  Side side = Side::top_down;

  /// Dense index in [0, 2L): top-down levels first, then bottom-up.
  int index(int levels) const {
    return side == Side::top_down ? level - 1 : levels + level - 1;
  }
  bool operator==(const SemanticPosition&) const = default;
};

std::vector<SemanticPosition> semantic_positions(int levels);
std::string to_string(const SemanticPosition& p);

enum class EdgeType { local, local_skip, cross_unet, downsample, upsample, stack };
std::string to_string(EdgeType t);

/// Edge between two semantic blocks, U-Nets numbered from 1.
struct ConnectivityEdge {
  int src_unet = 0;
  SemanticPosition src;
  int dst_unet = 0;
  SemanticPosition dst;
  EdgeType type = EdgeType::local;
};

/// Every block-to-block edge of an order-K stack: local downsample/upsample
/// chains, the within-U-Net skip and cross-U-Net links from the K nearest
/// predecessors at the same position. Throws ConfigError for K outside [0, N-1].
std::vector<ConnectivityEdge> build_connectivity(int num_unets, int levels, int order);

enum class OpKind { conv2d, batchnorm, relu, maxpool2, upsample2, concat, add, quantize };
std::string to_string(OpKind k);

enum class ParamRole { conv_weight, conv_bias, bn_gamma, bn_beta };

enum class BlockKind { input, stem, unet_input, top_down, bottom_up, bottom, head, remap, refine };

struct ParamDesc {
  std::string name;
  std::vector<int> shape;
  ParamRole role = ParamRole::conv_weight;
  int block = -1;
  /// Standard deviation of the Gaussian init for conv weights.
  double init_std = 0.0;

  std::size_t size() const;
};

/// Per-sample activation extents; the batch dimension is supplied at run time.
struct ValueDesc {
  std::string name;
  int channels = 0;
  int height = 0;
  int width = 0;
  int block = -1;

  std::size_t per_sample() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
};

struct OpNode {
  OpKind kind = OpKind::relu;
  std::vector<int> inputs;
  int output = -1;
  /// conv2d: {weight[, bias]}; batchnorm: {gamma, beta}.
  std::vector<int> params;
  ops::Conv2dSpec conv;
  /// Semantic position whose shared buffers hold this op's output in
  /// efficient mode (concat and the batchnorm/relu right after it).
  int shared_slot = -1;
  bool inplace = false;
  /// Ops re-run together when efficient backward finds their output stale.
  int recompute_group = -1;
  quant::WeightMode weight_quant = quant::WeightMode::full;
  /// Fixed output multiplier for unscaled binary/ternary weights.
  double weight_scale = 1.0;
  int act_bits = quant::kFullBits;
  int grad_bits = quant::kFullBits;
  int block = -1;
};

struct BlockDesc {
  std::string name;
  BlockKind kind = BlockKind::input;
  int unet = 0;
  int pass = 1;
  int level = 0;
  /// Width of the concatenated input for bottleneck blocks, else 0.
  int concat_width = 0;
  int out_channels = 0;
  int resolution = 0;
};

struct EdgeDesc {
  int src = -1;
  int dst = -1;
  EdgeType type = EdgeType::local;
};

/// Compiled network: block-level topology for inspection plus a lowered,
/// topologically ordered op program for execution.
struct ComputeGraph {
  DUNetConfig config;
  std::vector<BlockDesc> blocks;
  std::vector<EdgeDesc> edges;
  std::vector<ValueDesc> values;
  std::vector<ParamDesc> params;
  std::vector<OpNode> ops;
  int input_value = -1;
  std::vector<int> head_values;
  std::vector<int> head_blocks;
  int num_semantic_positions = 0;
  int num_passes = 1;
  quant::QuantScheme scheme;

  bool iterative_wrapped() const { return num_passes == 2; }
  bool quantized() const { return !scheme.is_full(); }
  /// Index of the block with this name, or -1.
  int find_block(const std::string& name) const;
  /// Blocks at a semantic position, across all U-Nets and passes.
  std::vector<int> blocks_at(const SemanticPosition& p) const;
};

/// Builds the op program for `config` with the given pass count and scheme.
ComputeGraph lower(const DUNetConfig& config, int passes, const quant::QuantScheme& scheme);

/// Single-pass, full-precision graph for `config`.
ComputeGraph compile(const DUNetConfig& config);

/// Adds the refine block and a second pass over the same U-Nets. No-op for
/// non-iterative configs; throws EngineError if already wrapped.
ComputeGraph wrap_iterative(const ComputeGraph& graph);

/// compile, wrap_iterative and quant::attach with config.quant.
ComputeGraph build_graph(const DUNetConfig& config);

/// A graph with no ops whose only head is its input.
ComputeGraph identity_graph(int channels, int height, int width);

/// One edge per line, "src dst type", in construction order.
std::string dump_graph(const ComputeGraph& graph);

}  // namespace dunet
