#include "dunet/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dunet/quant.hpp"

namespace dunet {

SharedBuffer::SharedBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ShapeError("shared buffer capacity must be positive");
}

std::span<double> SharedBuffer::claim(std::span<const std::size_t> segments) {
  std::size_t total = 0;
  layout_.clear();
  for (std::size_t len : segments) {
    layout_.emplace_back(total, len);
    total += len;
  }
  if (total > capacity_) {
    layout_.clear();
    throw EngineError("shared buffer capacity " + std::to_string(capacity_) +
                      " exceeded by occupant of " + std::to_string(total) + " elements");
  }
  if (storage_.size() < capacity_) storage_.resize(capacity_);
  used_ = total;
  ++generation_;
  return {storage_.data(), total};
}

std::span<double> SharedBuffer::data(std::uint64_t generation) {
  if (generation != generation_) {
    throw StaleBufferError("shared buffer read at generation " + std::to_string(generation) +
                           ", buffer is at " + std::to_string(generation_));
  }
  return {storage_.data(), used_};
}

std::span<const double> SharedBuffer::data(std::uint64_t generation) const {
  if (generation != generation_) {
    throw StaleBufferError("shared buffer read at generation " + std::to_string(generation) +
                           ", buffer is at " + std::to_string(generation_));
  }
  return {storage_.data(), used_};
}

SharedBufferSet alloc_shared(std::span<const std::size_t> max_elements) {
  SharedBufferSet set;
  for (std::size_t e : max_elements) {
    if (e == 0) throw ShapeError("shared buffer extents must be positive");
    set.buffers.emplace_back(e);
    set.buffers.emplace_back(e);
  }
  return set;
}

std::vector<std::size_t> shared_extents(const ComputeGraph& graph, int batch) {
  if (batch < 1) throw ShapeError("batch must be positive");
  std::vector<std::size_t> out(graph.num_semantic_positions, 0);
  for (const auto& op : graph.ops) {
    if (op.kind != OpKind::concat || op.shared_slot < 0) continue;
    const auto n = graph.values[op.output].per_sample() * static_cast<std::size_t>(batch);
    out[op.shared_slot] = std::max(out[op.shared_slot], n);
  }
  return out;
}

Network::Network(ComputeGraph graph, std::uint64_t seed) : graph_(std::move(graph)) {
  params_.reserve(graph_.params.size());
  for (std::size_t i = 0; i < graph_.params.size(); ++i) {
    const auto& d = graph_.params[i];
    Tensor t(d.shape, 0.0);
    switch (d.role) {
      case ParamRole::conv_weight: {
        std::mt19937_64 rng(mix_seed(seed, i));
        std::normal_distribution<double> dist(0.0, d.init_std);
        for (double& v : t.storage()) v = dist(rng);
        break;
      }
      case ParamRole::bn_gamma:
        t.fill(1.0);
        break;
      case ParamRole::conv_bias:
      case ParamRole::bn_beta:
        break;
    }
    params_.push_back(std::move(t));
  }
  value_producer_.assign(graph_.values.size(), -1);
  running_mean_.resize(graph_.ops.size());
  running_var_.resize(graph_.ops.size());
  for (std::size_t i = 0; i < graph_.ops.size(); ++i) {
    const auto& op = graph_.ops[i];
    value_producer_[op.output] = static_cast<int>(i);
    if (op.kind == OpKind::batchnorm) {
      const int c = graph_.values[op.output].channels;
      running_mean_[i] = Tensor(std::vector<int>{c}, 0.0);
      running_var_[i] = Tensor(std::vector<int>{c}, 1.0);
    }
  }
}

std::vector<std::pair<int, std::pair<Tensor, Tensor>>> Network::running_stats() const {
  std::vector<std::pair<int, std::pair<Tensor, Tensor>>> out;
  for (std::size_t i = 0; i < graph_.ops.size(); ++i) {
    if (graph_.ops[i].kind == OpKind::batchnorm) {
      out.push_back({static_cast<int>(i), {running_mean_[i], running_var_[i]}});
    }
  }
  return out;
}

void Network::set_running_stats(int op, const Tensor& mean, const Tensor& var) {
  if (op < 0 || static_cast<std::size_t>(op) >= graph_.ops.size() ||
      graph_.ops[op].kind != OpKind::batchnorm) {
    throw EngineError("running statistics target is not a batchnorm op");
  }
  if (mean.size() != running_mean_[op].size() || var.size() != running_var_[op].size()) {
    throw ShapeError("running statistics have the wrong channel count");
  }
  running_mean_[op] = mean;
  running_var_[op] = var;
}

std::span<const double> Network::read(int value) const {
  const Slot& s = slots_[value];
  if (!s.live) throw EngineError("value '" + graph_.values[value].name + "' was not computed");
  if (s.buffer >= 0) return shared_.buffers[s.buffer].data(s.generation);
  return s.own;
}

std::span<double> Network::write(int value, const Shape4& shape, int buffer,
                                 std::span<const std::size_t> segments) {
  Slot& s = slots_[value];
  s.shape = shape;
  s.live = true;
  if (buffer >= 0) {
    const std::size_t whole[1] = {shape.size()};
    auto out = shared_.buffers[buffer].claim(segments.empty() ? std::span<const std::size_t>(whole)
                                                              : segments);
    s.buffer = buffer;
    s.generation = shared_.buffers[buffer].generation();
    s.own.clear();
    s.own.shrink_to_fit();
    return out;
  }
  s.buffer = -1;
  s.own.assign(shape.size(), 0.0);
  return s.own;
}

std::vector<double> Network::effective_weights(int op_index) const {
  const auto& op = graph_.ops.at(op_index);
  if (op.kind != OpKind::conv2d) throw EngineError("effective_weights needs a conv op");
  return quant::quantize_weights(params_[op.params[0]].values(), op.weight_quant);
}

void Network::run_op(std::size_t index, bool recompute) {
  const OpNode& op = graph_.ops[index];
  const bool efficient = mode_ == ExecMode::efficient && op.shared_slot >= 0;
  auto in_shape = [&](int k) { return slots_[op.inputs[k]].shape; };

  switch (op.kind) {
    case OpKind::conv2d: {
      const Shape4 xs = in_shape(0);
      const Shape4 ys = ops::conv2d_output_shape(xs, op.conv);
      std::span<const double> w = params_[op.params[0]].values();
      if (op.weight_quant != quant::WeightMode::full) {
        quant_weights_[index] = quant::quantize_weights(w, op.weight_quant);
        w = quant_weights_[index];
      }
      std::span<const double> bias;
      if (op.conv.bias) bias = params_[op.params[1]].values();
      auto y = write(op.output, ys, -1, {});
      ops::conv2d_forward(read(op.inputs[0]), xs, w, bias, op.conv, op.weight_scale, y);
      break;
    }
    case OpKind::batchnorm: {
      const Shape4 xs = in_shape(0);
      const int buffer = efficient ? 2 * op.shared_slot + 1 : -1;
      auto y = write(op.output, xs, buffer, {});
      auto x = read(op.inputs[0]);
      const auto gamma = params_[op.params[0]].values();
      const auto beta = params_[op.params[1]].values();
      if (training_) {
        auto st = ops::batchnorm_forward_train(x, xs, gamma, beta, y);
        if (!recompute) {
          ops::batchnorm_update_running(xs, st, running_mean_[index].values(),
                                        running_var_[index].values());
          bn_stats_[index] = std::move(st);
        }
      } else {
        ops::batchnorm_forward_eval(x, xs, gamma, beta, running_mean_[index].values(),
                                    running_var_[index].values(), y);
      }
      break;
    }
    case OpKind::relu: {
      const Shape4 xs = in_shape(0);
      if (efficient && op.inplace) {
        Slot& src = slots_[op.inputs[0]];
        auto& buf = shared_.buffers[src.buffer];
        auto data = buf.data(src.generation);
        ops::relu_forward(data, data);
        buf.touch();
        Slot& s = slots_[op.output];
        s.shape = xs;
        s.live = true;
        s.buffer = src.buffer;
        s.generation = buf.generation();
        s.own.clear();
      } else {
        auto y = write(op.output, xs, -1, {});
        ops::relu_forward(read(op.inputs[0]), y);
      }
      break;
    }
    case OpKind::maxpool2: {
      const Shape4 xs = in_shape(0);
      auto y = write(op.output, {xs.n, xs.c, xs.h / 2, xs.w / 2}, -1, {});
      pool_argmax_[index] = ops::maxpool2_forward(read(op.inputs[0]), xs, y);
      break;
    }
    case OpKind::upsample2: {
      const Shape4 xs = in_shape(0);
      auto y = write(op.output, {xs.n, xs.c, xs.h * 2, xs.w * 2}, -1, {});
      ops::upsample2_forward(read(op.inputs[0]), xs, y);
      break;
    }
    case OpKind::concat: {
      std::vector<Shape4> shapes;
      std::vector<std::span<const double>> parts;
      Shape4 ys = in_shape(0);
      ys.c = 0;
      for (std::size_t k = 0; k < op.inputs.size(); ++k) {
        const Shape4 s = in_shape(static_cast<int>(k));
        if (s.n != ys.n || s.h != ys.h || s.w != ys.w) {
          throw ShapeError("concat input " + graph_.values[op.inputs[k]].name +
                           " has extent " + to_string(s));
        }
        ys.c += s.c;
        shapes.push_back(s);
      }
      std::vector<std::size_t> segments;
      for (int b = 0; b < ys.n; ++b) {
        for (const auto& s : shapes) segments.push_back(static_cast<std::size_t>(s.c) * s.plane());
      }
      auto y = write(op.output, ys, efficient ? 2 * op.shared_slot : -1, segments);
      for (int v : op.inputs) {
        try {
          parts.push_back(read(v));
        } catch (const StaleBufferError& e) {
          throw StaleBufferError(std::string(recompute ? "generation mismatch during recomputation: "
                                                       : "") + e.what());
        }
      }
      ops::concat_forward(parts, shapes, y);
      break;
    }
    case OpKind::add: {
      const Shape4 a = in_shape(0);
      if (!(a == in_shape(1))) throw ShapeError("add operands differ in shape");
      auto y = write(op.output, a, -1, {});
      auto x0 = read(op.inputs[0]);
      auto x1 = read(op.inputs[1]);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] + x1[i];
      break;
    }
    case OpKind::quantize: {
      const Shape4 xs = in_shape(0);
      auto y = write(op.output, xs, -1, {});
      auto x = read(op.inputs[0]);
      if (op.act_bits < quant::kFullBits) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = quant::quantize_linear(x[i], op.act_bits);
      } else {
        std::copy(x.begin(), x.end(), y.begin());
      }
      break;
    }
  }
  if (!recompute) {
    for (double v : read(op.output)) {
      if (!std::isfinite(v)) {
        throw EngineError("non-finite activation produced by " + to_string(op.kind) + " in " +
                          graph_.blocks[op.block].name);
      }
    }
  }
}

std::vector<Tensor> Network::forward(const Tensor& input, ExecMode mode) {
  const auto& in = graph_.values[graph_.input_value];
  const Shape4 xs = input.shape4();
  if (xs.c != in.channels || xs.h != in.height || xs.w != in.width) {
    throw ShapeError("input " + to_string(xs) + " does not match the graph input " +
                     std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  }
  input.check_finite("network input");
  mode_ = mode;
  batch_ = xs.n;
  slots_.assign(graph_.values.size(), Slot{});
  bn_stats_.assign(graph_.ops.size(), {});
  pool_argmax_.assign(graph_.ops.size(), {});
  quant_weights_.assign(graph_.ops.size(), {});
  grads_.clear();
  forward_done_ = false;
  if (mode == ExecMode::efficient) {
    shared_ = alloc_shared(shared_extents(graph_, batch_));
  } else {
    shared_ = {};
  }

  auto& slot = slots_[graph_.input_value];
  slot.own = input.storage();
  slot.shape = xs;
  slot.live = true;

  for (std::size_t i = 0; i < graph_.ops.size(); ++i) run_op(i, false);

  std::vector<Tensor> heads;
  for (int v : graph_.head_values) {
    const Shape4 s = slots_[v].shape;
    auto data = read(v);
    heads.emplace_back(std::vector<int>{s.n, s.c, s.h, s.w},
                       std::vector<double>(data.begin(), data.end()));
  }
  forward_done_ = true;
  return heads;
}

std::span<double> Network::grad_of(int value) {
  auto& g = grads_[value];
  if (g.empty()) g.assign(slots_[value].shape.size(), 0.0);
  return g;
}

void Network::recompute_group(int group, std::size_t upto) {
  ++recomputations_;
  for (std::size_t i = 0; i <= upto; ++i) {
    if (graph_.ops[i].recompute_group == group) run_op(i, true);
  }
}

void Network::ensure_readable(int value) {
  const Slot& s = slots_[value];
  if (s.buffer < 0 || shared_.buffers[s.buffer].generation() == s.generation) return;
  const int producer = value_producer_[value];
  const int group = producer >= 0 ? graph_.ops[producer].recompute_group : -1;
  if (group < 0) {
    throw StaleBufferError("value '" + graph_.values[value].name +
                           "' is stale and cannot be recomputed");
  }
  // Re-running the group rewrites every member, so the slots of the values
  // it produces point at the fresh generation afterwards.
  std::size_t last = 0;
  for (std::size_t i = 0; i < graph_.ops.size(); ++i) {
    if (graph_.ops[i].recompute_group == group) last = i;
  }
  recompute_group(group, last);
  if (shared_.buffers[s.buffer].generation() != s.generation) {
    throw StaleBufferError("generation mismatch after recomputing '" +
                           graph_.values[value].name + "'");
  }
}

void Network::backward(std::span<const Tensor> head_grads) {
  if (!forward_done_) throw EngineError("backward called before forward");
  if (!training_) throw EngineError("backward needs a training-mode forward pass");
  if (head_grads.size() != graph_.head_values.size()) {
    throw ShapeError("expected " + std::to_string(graph_.head_values.size()) +
                     " head gradients, got " + std::to_string(head_grads.size()));
  }
  recomputations_ = 0;
  grads_.assign(graph_.values.size(), {});
  for (auto& p : params_) p.zero_grad();

  for (std::size_t h = 0; h < head_grads.size(); ++h) {
    const int v = graph_.head_values[h];
    if (head_grads[h].size() != slots_[v].shape.size()) {
      throw ShapeError("head gradient " + std::to_string(h) + " has the wrong size");
    }
    auto g = grad_of(v);
    const auto src = head_grads[h].values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
  }

  for (std::size_t idx = graph_.ops.size(); idx-- > 0;) {
    const OpNode& op = graph_.ops[idx];
    if (grads_[op.output].empty()) continue;
    const std::vector<double> dy = std::move(grads_[op.output]);
    grads_[op.output].clear();
    switch (op.kind) {
      case OpKind::conv2d: {
        ensure_readable(op.inputs[0]);
        const Shape4 xs = slots_[op.inputs[0]].shape;
        std::span<const double> w = params_[op.params[0]].values();
        if (op.weight_quant != quant::WeightMode::full) w = quant_weights_[idx];
        auto& wt = params_[op.params[0]];
        std::span<double> db;
        if (op.conv.bias) db = params_[op.params[1]].grad();
        auto dx = grad_of(op.inputs[0]);
        if (op.weight_quant == quant::WeightMode::full) {
          ops::conv2d_backward(read(op.inputs[0]), xs, w, dy, op.conv, op.weight_scale, dx,
                               wt.grad(), db);
        } else {
          std::vector<double> dq(wt.size(), 0.0);
          ops::conv2d_backward(read(op.inputs[0]), xs, w, dy, op.conv, op.weight_scale, dx,
                               dq, db);
          auto dw = wt.grad();
          const auto raw = wt.values();
          for (std::size_t i = 0; i < dq.size(); ++i) {
            if (quant::ste_pass(raw[i])) dw[i] += dq[i];
          }
        }
        break;
      }
      case OpKind::batchnorm: {
        ensure_readable(op.inputs[0]);
        const Shape4 xs = slots_[op.inputs[0]].shape;
        ops::batchnorm_backward(read(op.inputs[0]), xs, params_[op.params[0]].values(),
                                bn_stats_[idx], dy, grad_of(op.inputs[0]),
                                params_[op.params[0]].grad(), params_[op.params[1]].grad());
        break;
      }
      case OpKind::relu: {
        ensure_readable(op.output);
        ops::relu_backward(read(op.output), dy, grad_of(op.inputs[0]));
        break;
      }
      case OpKind::maxpool2:
        ops::maxpool2_backward(pool_argmax_[idx], dy, grad_of(op.inputs[0]));
        break;
      case OpKind::upsample2:
        ops::upsample2_backward(dy, slots_[op.inputs[0]].shape, grad_of(op.inputs[0]));
        break;
      case OpKind::concat: {
        std::vector<Shape4> shapes;
        std::vector<std::span<double>> parts;
        for (int v : op.inputs) shapes.push_back(slots_[v].shape);
        for (int v : op.inputs) parts.push_back(grad_of(v));
        ops::concat_backward(dy, shapes, parts);
        break;
      }
      case OpKind::add: {
        for (int v : op.inputs) {
          auto g = grad_of(v);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
        }
        break;
      }
      case OpKind::quantize: {
        std::vector<double> g = dy;
        if (op.act_bits < quant::kFullBits) {
          auto x = read(op.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (!quant::ste_pass(x[i])) g[i] = 0.0;
          }
        }
        if (op.grad_bits < quant::kFullBits) g = quant::quantize_gradient(g, op.grad_bits);
        auto dx = grad_of(op.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        break;
      }
    }
  }

  const auto& in = slots_[graph_.input_value];
  input_grad_ = Tensor(in.shape, 0.0);
  if (!grads_[graph_.input_value].empty()) input_grad_.storage() = grads_[graph_.input_value];
  grads_.clear();
  for (const auto& p : params_) {
    for (double v : p.grad()) {
      if (!std::isfinite(v)) throw EngineError("non-finite parameter gradient");
    }
  }
  forward_done_ = false;
}

}  // namespace dunet
