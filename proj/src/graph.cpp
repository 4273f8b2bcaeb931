#include "dunet/graph.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace dunet {

std::vector<SemanticPosition> semantic_positions(int levels) {
  std::vector<SemanticPosition> out;
  for (int l = 1; l <= levels; ++l) out.push_back({l, Side::top_down});
  for (int l = 1; l <= levels; ++l) out.push_back({l, Side::bottom_up});
  return out;
}

std::string to_string(const SemanticPosition& p) {
  return (p.side == Side::top_down ? "td" : "bu") + std::to_string(p.level);
}

std::string to_string(EdgeType t) {
  switch (t) {
    case EdgeType::local: return "local";
    case EdgeType::local_skip: return "local-skip";
    case EdgeType::cross_unet: return "cross-unet";
    case EdgeType::downsample: return "downsample";
    case EdgeType::upsample: return "upsample";
    case EdgeType::stack: return "stack";
  }
  return "local";
}

std::string to_string(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm: return "batchnorm";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2: return "maxpool2";
    case OpKind::upsample2: return "upsample2";
    case OpKind::concat: return "concat";
    case OpKind::add: return "add";
    case OpKind::quantize: return "quantize";
  }
  return "?";
}

std::size_t ParamDesc::size() const { return shape_size(shape); }

int ComputeGraph::find_block(const std::string& name) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> ComputeGraph::blocks_at(const SemanticPosition& p) const {
  const BlockKind want = p.side == Side::top_down ? BlockKind::top_down : BlockKind::bottom_up;
  std::vector<int> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].kind == want && blocks[i].level == p.level) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<ConnectivityEdge> build_connectivity(int num_unets, int levels, int order) {
  if (num_unets < 1 || levels < 1) {
    throw ConfigError("connectivity needs at least one U-Net and one level");
  }
  if (order < 0 || order > num_unets - 1) {
    throw ConfigError("order " + std::to_string(order) + " outside [0, " +
                      std::to_string(num_unets - 1) + "]");
  }
  std::vector<ConnectivityEdge> edges;
  for (int n = 1; n <= num_unets; ++n) {
    const int first = std::max(1, n - order);
    for (int l = 1; l <= levels; ++l) {
      const SemanticPosition td{l, Side::top_down};
      if (l > 1) {
        edges.push_back({n, {l - 1, Side::top_down}, n, td, EdgeType::downsample});
      }
      for (int m = first; m < n; ++m) {
        edges.push_back({m, td, n, td, EdgeType::cross_unet});
      }
    }
    for (int l = levels; l >= 1; --l) {
      const SemanticPosition bu{l, Side::bottom_up};
      if (l < levels) {
        edges.push_back({n, {l + 1, Side::bottom_up}, n, bu, EdgeType::upsample});
      }
      edges.push_back({n, {l, Side::top_down}, n, bu, EdgeType::local_skip});
      for (int m = first; m < n; ++m) {
        edges.push_back({m, bu, n, bu, EdgeType::cross_unet});
      }
    }
  }
  return edges;
}

namespace {

class Builder {
 public:
  Builder(const DUNetConfig& c, const quant::QuantScheme& s) {
    g_.config = c;
    g_.scheme = s;
    g_.num_semantic_positions = 2 * c.levels;
  }

  ComputeGraph take() { return std::move(g_); }
  ComputeGraph& graph() { return g_; }

  int block(BlockDesc d) {
    g_.blocks.push_back(std::move(d));
    return static_cast<int>(g_.blocks.size()) - 1;
  }

  void edge(int src, int dst, EdgeType t) { g_.edges.push_back({src, dst, t}); }

  int value(const std::string& name, int c, int h, int w, int blk) {
    g_.values.push_back({name, c, h, w, blk});
    return static_cast<int>(g_.values.size()) - 1;
  }

  const ValueDesc& desc(int v) const { return g_.values[v]; }

  int param(const std::string& name, std::vector<int> shape, ParamRole role, int blk,
            double init_std) {
    if (auto it = params_.find(name); it != params_.end()) return it->second;
    g_.params.push_back({name, std::move(shape), role, blk, init_std});
    const int id = static_cast<int>(g_.params.size()) - 1;
    params_[name] = id;
    return id;
  }

  int conv(int blk, const std::string& pname, int in, int out_ch, int k, int stride,
           bool bias, bool eligible) {
    const auto& d = desc(in);
    OpNode op;
    op.kind = OpKind::conv2d;
    op.block = blk;
    op.inputs = {in};
    op.conv = {d.channels, out_ch, k, stride, k / 2, bias};
    const int fan_in = d.channels * k * k;
    const double std = std::sqrt(2.0 / fan_in);
    op.params.push_back(param(pname + ".weight", {out_ch, d.channels, k, k},
                              ParamRole::conv_weight, blk, std));
    if (bias) {
      op.params.push_back(param(pname + ".bias", {out_ch}, ParamRole::conv_bias, blk, 0.0));
    }
    if (eligible && g_.scheme.weights_quantized()) {
      op.weight_quant = g_.scheme.weight_mode;
      if (op.weight_quant != quant::WeightMode::binary_alpha) op.weight_scale = std;
    }
    const int ho = op.conv.out_extent(d.height);
    const int wo = op.conv.out_extent(d.width);
    op.output = value(g_.blocks[blk].name + "." + tail(pname), out_ch, ho, wo, blk);
    return push(std::move(op));
  }

  int bn(int blk, const std::string& pname, int in, int slot = -1) {
    const auto& d = desc(in);
    OpNode op;
    op.kind = OpKind::batchnorm;
    op.block = blk;
    op.inputs = {in};
    op.params = {param(pname + ".gamma", {d.channels}, ParamRole::bn_gamma, blk, 0.0),
                 param(pname + ".beta", {d.channels}, ParamRole::bn_beta, blk, 0.0)};
    op.shared_slot = slot;
    if (slot >= 0) op.recompute_group = blk;
    op.output = value(g_.blocks[blk].name + "." + tail(pname), d.channels, d.height, d.width, blk);
    return push(std::move(op));
  }

  int unary(OpKind kind, int blk, const std::string& tag, int in, int slot = -1) {
    const auto& d = desc(in);
    OpNode op;
    op.kind = kind;
    op.block = blk;
    op.inputs = {in};
    int h = d.height;
    int w = d.width;
    if (kind == OpKind::maxpool2) {
      h /= 2;
      w /= 2;
    } else if (kind == OpKind::upsample2) {
      h *= 2;
      w *= 2;
    }
    if (kind == OpKind::relu && slot >= 0) {
      op.shared_slot = slot;
      op.inplace = true;
      op.recompute_group = blk;
    }
    op.output = value(g_.blocks[blk].name + "." + tag, d.channels, h, w, blk);
    return push(std::move(op));
  }

  int concat(int blk, const std::vector<int>& inputs, int slot) {
    int c = 0;
    const auto& first = desc(inputs.front());
    for (int v : inputs) {
      const auto& d = desc(v);
      if (d.height != first.height || d.width != first.width) {
        throw ShapeError("concat inputs of " + g_.blocks[blk].name + " differ in extent");
      }
      c += d.channels;
    }
    OpNode op;
    op.kind = OpKind::concat;
    op.block = blk;
    op.inputs = inputs;
    op.shared_slot = slot;
    if (slot >= 0) op.recompute_group = blk;
    op.output = value(g_.blocks[blk].name + ".concat", c, first.height, first.width, blk);
    return push(std::move(op));
  }

  int add(int blk, int a, int b) {
    const auto& da = desc(a);
    const auto& db = desc(b);
    if (da.channels != db.channels || da.height != db.height || da.width != db.width) {
      throw ShapeError("add operands of " + g_.blocks[blk].name + " differ in shape");
    }
    OpNode op;
    op.kind = OpKind::add;
    op.block = blk;
    op.inputs = {a, b};
    op.output = value(g_.blocks[blk].name + ".sum", da.channels, da.height, da.width, blk);
    return push(std::move(op));
  }

  int maybe_quantize(int blk, int in) {
    const auto& s = g_.scheme;
    if (!s.inputs_quantized() && !s.grads_quantized()) return in;
    const auto& d = desc(in);
    OpNode op;
    op.kind = OpKind::quantize;
    op.block = blk;
    op.inputs = {in};
    op.act_bits = s.bit_i;
    op.grad_bits = s.bit_g;
    op.output = value(g_.blocks[blk].name + ".q", d.channels, d.height, d.width, blk);
    return push(std::move(op));
  }

  /// Concat -> BN -> ReLU -> Conv1x1 -> BN -> ReLU -> Conv3x3.
  int bottleneck(int blk, const std::string& pfx, const std::vector<int>& inputs,
                 int out_ch, int slot) {
    const auto& c = g_.config;
    int v = concat(blk, inputs, slot);
    g_.blocks[blk].concat_width = desc(v).channels;
    v = bn(blk, pfx + ".bn1", v, slot);
    v = unary(OpKind::relu, blk, "relu1", v, slot);
    v = conv(blk, pfx + ".conv1", v, c.bottleneck_width, 1, 1, false, true);
    v = bn(blk, pfx + ".bn2", v);
    v = unary(OpKind::relu, blk, "relu2", v);
    v = conv(blk, pfx + ".conv2", v, out_ch, 3, 1, false, true);
    g_.blocks[blk].out_channels = out_ch;
    return maybe_quantize(blk, v);
  }

 private:
  static std::string tail(const std::string& pname) {
    const auto dot = pname.rfind('.');
    return dot == std::string::npos ? pname : pname.substr(dot + 1);
  }

  int push(OpNode op) {
    const int out = op.output;
    g_.ops.push_back(std::move(op));
    return out;
  }

  ComputeGraph g_;
  std::map<std::string, int> params_;
};

}  // namespace

ComputeGraph lower(const DUNetConfig& config, int passes, const quant::QuantScheme& scheme) {
  config.validate();
  scheme.validate();
  if (passes != 1 && passes != 2) throw EngineError("graphs have one or two passes");
  if (passes == 2 && !config.iterative) {
    throw EngineError("a second pass needs an iterative config");
  }
  const int N = config.num_unets;
  const int L = config.levels;
  const int R = config.input_resolution;
  const int G = config.growth;
  const bool exempt = scheme.skip_first_last;

  Builder b(config, scheme);
  b.graph().num_passes = passes;

  // Cross-U-Net sources per destination block, in ascending U-Net order.
  std::map<std::pair<int, int>, std::vector<int>> cross;
  for (const auto& e : build_connectivity(N, L, config.order)) {
    if (e.type == EdgeType::cross_unet) {
      cross[{e.dst_unet, e.dst.index(L)}].push_back(e.src_unet);
    }
  }

  const int input_blk = b.block({"input", BlockKind::input, 0, 1, 0, 0,
                                 config.in_channels, config.image_resolution()});
  const int img = config.image_resolution();
  b.graph().input_value = b.value("input", config.in_channels, img, img, input_blk);

  const int stem = b.block({"stem", BlockKind::stem, 0, 1, 0, 0, config.stem_channels, R});
  b.edge(input_blk, stem, EdgeType::local);
  int s = b.conv(stem, "stem.conv", b.graph().input_value, config.stem_channels, 7, 2,
                 false, !exempt);
  s = b.bn(stem, "stem.bn", s);
  s = b.unary(OpKind::relu, stem, "relu", s);
  s = b.unary(OpKind::maxpool2, stem, "pool", s);
  if (b.desc(s).height != R) {
    throw ShapeError("stem output does not match input_resolution");
  }

  std::vector<int> parts = {s};
  int feed_blk = stem;
  for (int p = 1; p <= passes; ++p) {
    const std::string pass_pfx = p == 1 ? "" : "p2.";
    std::vector<std::vector<int>> x(N + 1, std::vector<int>(L + 1, -1));
    std::vector<std::vector<int>> y(N + 1, std::vector<int>(L + 2, -1));
    std::vector<std::vector<int>> td_blk(N + 1, std::vector<int>(L + 1, -1));
    std::vector<std::vector<int>> bu_blk(N + 1, std::vector<int>(L + 2, -1));
    std::vector<int> feeders = {feed_blk};
    for (int n = 1; n <= N; ++n) {
      const std::string un = "u" + std::to_string(n);
      const std::string bn = pass_pfx + un;
      const int in_blk = b.block({bn + ".in", BlockKind::unet_input, n, p, 0, 0, 0, R});
      for (int f : feeders) b.edge(f, in_blk, EdgeType::stack);

      for (int l = 1; l <= L; ++l) {
        const int res = R >> (l - 1);
        const int blk = b.block({bn + ".td" + std::to_string(l), BlockKind::top_down, n, p, l,
                                 0, G, res});
        td_blk[n][l] = blk;
        std::vector<int> inputs;
        if (l == 1) {
          b.edge(in_blk, blk, EdgeType::local);
          inputs = parts;
        } else {
          b.edge(td_blk[n][l - 1], blk, EdgeType::downsample);
          inputs = {b.unary(OpKind::maxpool2, blk, "pool", x[n][l - 1])};
        }
        const SemanticPosition pos{l, Side::top_down};
        for (int m : cross[{n, pos.index(L)}]) {
          b.edge(td_blk[m][l], blk, EdgeType::cross_unet);
          inputs.push_back(x[m][l]);
        }
        x[n][l] = b.bottleneck(blk, un + ".td" + std::to_string(l), inputs, G, pos.index(L));
      }

      const int bottom = b.block({bn + ".bottom", BlockKind::bottom, n, p, L + 1, 0, G,
                                  R >> L});
      b.edge(td_blk[n][L], bottom, EdgeType::downsample);
      int below = b.unary(OpKind::maxpool2, bottom, "pool", x[n][L]);
      int below_blk = bottom;
      for (int l = L; l >= 1; --l) {
        const int res = R >> (l - 1);
        const int blk = b.block({bn + ".bu" + std::to_string(l), BlockKind::bottom_up, n, p, l,
                                 0, G, res});
        bu_blk[n][l] = blk;
        b.edge(below_blk, blk, EdgeType::upsample);
        b.edge(td_blk[n][l], blk, EdgeType::local_skip);
        const int up = b.unary(OpKind::upsample2, blk, "up", below);
        std::vector<int> inputs;
        if (config.legacy_sum_skip) {
          inputs = {b.add(blk, up, x[n][l])};
        } else {
          inputs = {up, x[n][l]};
        }
        const SemanticPosition pos{l, Side::bottom_up};
        for (int m : cross[{n, pos.index(L)}]) {
          b.edge(bu_blk[m][l], blk, EdgeType::cross_unet);
          inputs.push_back(y[m][l]);
        }
        y[n][l] = b.bottleneck(blk, un + ".bu" + std::to_string(l), inputs, G, pos.index(L));
        below = y[n][l];
        below_blk = blk;
      }

      const int head = b.block({bn + ".head", BlockKind::head, n, p, 0, 0,
                                config.num_landmarks, R});
      b.edge(bu_blk[n][1], head, EdgeType::local);
      int h = b.bn(head, un + ".head.bn", y[n][1]);
      h = b.unary(OpKind::relu, head, "relu", h);
      h = b.conv(head, un + ".head.conv", h, config.num_landmarks, 1, 1, true, !exempt);
      b.graph().head_values.push_back(h);
      b.graph().head_blocks.push_back(head);

      if (n < N) {
        const int remap = b.block({bn + ".remap", BlockKind::remap, n, p, 0, 0, G, R});
        b.edge(head, remap, EdgeType::local);
        const int r = b.conv(remap, un + ".remap.conv", h, G, 1, 1, false, true);
        parts = {y[n][1], r};
        feeders = {bu_blk[n][1], remap};
      }
    }

    if (p < passes) {
      const int refine = b.block({"refine", BlockKind::refine, 0, p, 0, 0,
                                  config.stem_channels, R});
      b.edge(stem, refine, EdgeType::local);
      b.edge(bu_blk[N][1], refine, EdgeType::stack);
      const int out = b.bottleneck(refine, "refine", {s, y[N][1]}, config.stem_channels, -1);
      parts = {out};
      feed_blk = refine;
    }
  }
  return b.take();
}

ComputeGraph compile(const DUNetConfig& config) {
  return lower(config, 1, quant::QuantScheme{});
}

ComputeGraph wrap_iterative(const ComputeGraph& graph) {
  if (graph.iterative_wrapped()) {
    throw EngineError("graph already carries an iterative refinement pass");
  }
  if (!graph.config.iterative) return graph;
  return lower(graph.config, 2, graph.scheme);
}

ComputeGraph build_graph(const DUNetConfig& config) {
  return quant::attach(wrap_iterative(compile(config)), config.quant);
}

ComputeGraph identity_graph(int channels, int height, int width) {
  ComputeGraph g;
  g.blocks.push_back({"input", BlockKind::input, 0, 1, 0, 0, channels, height});
  g.values.push_back({"input", channels, height, width, 0});
  g.input_value = 0;
  g.head_values = {0};
  g.head_blocks = {0};
  return g;
}

std::string dump_graph(const ComputeGraph& graph) {
  std::ostringstream os;
  for (const auto& e : graph.edges) {
    os << graph.blocks[e.src].name << " " << graph.blocks[e.dst].name << " "
       << to_string(e.type) << "\n";
  }
  return os.str();
}

}  // namespace dunet
