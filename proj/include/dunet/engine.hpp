#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dunet/graph.hpp"
#include "dunet/ops.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

enum class ExecMode { naive, efficient };

/// A read of a shared buffer whose contents were overwritten since the value
/// was produced.
class StaleBufferError : public EngineError {
 public:
  using EngineError::EngineError;
};

/// Pre-allocated storage reused by every block at one semantic position.
class SharedBuffer {
 public:
  explicit SharedBuffer(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::uint64_t generation() const { return generation_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& layout() const { return layout_; }

  /// Starts a new occupant made of the given segment lengths and returns the
  /// writable region; bumps the generation.
  std::span<double> claim(std::span<const std::size_t> segments);
  /// Marks an in-place rewrite of the current occupant.
  void touch() { ++generation_; }
  std::span<double> data(std::uint64_t generation);
  std::span<const double> data(std::uint64_t generation) const;

 private:
  std::size_t capacity_;
  std::uint64_t generation_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> layout_;
  std::size_t used_ = 0;
  std::vector<double> storage_;
};

/// Two buffers per semantic position: [2p] holds concat outputs, [2p+1] the
/// batchnorm outputs that follow them.
struct SharedBufferSet {
  std::vector<SharedBuffer> buffers;

  std::size_t size() const { return buffers.size(); }
  SharedBuffer& concat(int position) { return buffers.at(2 * position); }
  SharedBuffer& normalized(int position) { return buffers.at(2 * position + 1); }
};

/// Allocates the buffer pair for each position with `max_elements[p]`
/// capacity. Throws ShapeError on zero extents.
SharedBufferSet alloc_shared(std::span<const std::size_t> max_elements);

/// Widest concat (in elements, for `batch` samples) at every semantic
/// position of `graph`, found by walking its shapes.
std::vector<std::size_t> shared_extents(const ComputeGraph& graph, int batch);

/// Executable instance of a compiled graph: parameters, batchnorm running
/// statistics and the activations of the last forward pass.
class Network {
 public:
  Network(ComputeGraph graph, std::uint64_t seed);

  const ComputeGraph& graph() const { return graph_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  /// Running mean and variance per batchnorm op, keyed by op index.
  std::vector<std::pair<int, std::pair<Tensor, Tensor>>> running_stats() const;
  void set_running_stats(int op, const Tensor& mean, const Tensor& var);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  /// Runs every op and returns one tensor per supervision head.
  std::vector<Tensor> forward(const Tensor& input, ExecMode mode);

  /// Back-propagates head gradients. Parameter gradients are overwritten.
  void backward(std::span<const Tensor> head_grads);

  const Tensor& input_grad() const { return input_grad_; }

  /// Weights conv op `op` actually multiplies with (after quantization).
  std::vector<double> effective_weights(int op) const;

  const SharedBufferSet& shared_buffers() const { return shared_; }
  /// Number of concat/batchnorm re-runs performed by the last backward.
  int recomputations() const { return recomputations_; }

 private:
  struct Slot {
    std::vector<double> own;
    int buffer = -1;
    std::uint64_t generation = 0;
    Shape4 shape;
    bool live = false;
  };

  std::span<const double> read(int value) const;
  std::span<double> write(int value, const Shape4& shape, int buffer,
                          std::span<const std::size_t> segments);
  void run_op(std::size_t index, bool recompute);
  void recompute_group(int group, std::size_t upto);
  void ensure_readable(int value);
  std::span<double> grad_of(int value);

  ComputeGraph graph_;
  std::vector<Tensor> params_;
  std::vector<Tensor> running_mean_;
  std::vector<Tensor> running_var_;
  std::vector<int> value_producer_;
  std::vector<Slot> slots_;
  std::vector<std::vector<double>> grads_;
  std::vector<ops::BatchNormStats> bn_stats_;
  std::vector<std::vector<std::uint32_t>> pool_argmax_;
  std::vector<std::vector<double>> quant_weights_;
  SharedBufferSet shared_;
  ExecMode mode_ = ExecMode::naive;
  bool training_ = true;
  bool forward_done_ = false;
  int batch_ = 0;
  int recomputations_ = 0;
  Tensor input_grad_;
};

}  // namespace dunet
