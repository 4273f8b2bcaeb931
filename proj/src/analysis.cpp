#include "dunet/analysis.hpp"

#include <cmath>

namespace dunet {

ParamCount count_params(const ComputeGraph& graph) {
  ParamCount out;
  std::vector<std::size_t> owned(graph.blocks.size(), 0);
  for (const auto& p : graph.params) {
    out.total += p.size();
    if (p.block >= 0) owned[p.block] += p.size();
  }
  for (std::size_t b = 0; b < graph.blocks.size(); ++b) {
    if (owned[b] > 0) out.per_block.emplace_back(graph.blocks[b].name, owned[b]);
  }
  return out;
}

int MemoryPlan::concat_bn_sites() const {
  int n = 0;
  for (const auto& a : allocations) n += a.concat_bn ? 1 : 0;
  return n;
}

MemoryPlan plan_memory(const ComputeGraph& graph, ExecMode mode, int batch,
                       int bytes_per_element) {
  if (batch < 1 || bytes_per_element < 1) {
    throw AnalysisError("batch and bytes_per_element must be positive");
  }
  MemoryPlan plan;
  plan.mode = mode;
  plan.per_unet.assign(graph.config.num_unets + 1, 0);
  const auto bpe = static_cast<std::size_t>(bytes_per_element);
  auto charge = [&](std::string site, std::size_t elements, bool shared, int unet) {
    plan.allocations.push_back({std::move(site), elements, elements * bpe, shared, unet});
    plan.total_bytes += elements * bpe;
    plan.per_unet[unet] += elements * bpe;
  };

  const auto& in = graph.values[graph.input_value];
  charge(in.name, in.per_sample() * batch, false, 0);

  const bool efficient = mode == ExecMode::efficient;
  for (const auto& op : graph.ops) {
    const auto& v = graph.values[op.output];
    const int unet = graph.blocks[op.block].unet;
    if (op.kind == OpKind::relu) continue;
    const bool position_storage =
        op.shared_slot >= 0 && (op.kind == OpKind::concat || op.kind == OpKind::batchnorm);
    if (position_storage && efficient) continue;
    charge(v.name, v.per_sample() * batch, position_storage, unet);
  }
  if (efficient) {
    const auto extents = shared_extents(graph, batch);
    const auto positions = semantic_positions(graph.config.levels);
    for (std::size_t p = 0; p < extents.size(); ++p) {
      if (extents[p] == 0) continue;
      const std::string name = "shared." + to_string(positions[p]);
      charge(name + ".concat", extents[p], true, 0);
      charge(name + ".bn", extents[p], true, 0);
    }
  }
  return plan;
}

Compression compression_ratios(const quant::QuantScheme& scheme) {
  scheme.validate();
  Compression c;
  c.ms = static_cast<double>(scheme.bit_w) / quant::kFullBits;
  if (scheme.grads_quantized()) {
    c.tm = static_cast<double>(scheme.bit_g) / quant::kFullBits;
  } else if (scheme.inputs_quantized()) {
    c.tm = static_cast<double>(scheme.bit_i) / quant::kFullBits;
  }
  return c;
}

double balance_index(double nme, double tm, double ms) {
  if (!(nme > 0) || !(tm > 0) || !(ms > 0) || !std::isfinite(nme) || !std::isfinite(tm) ||
      !std::isfinite(ms)) {
    throw AnalysisError("balance index needs positive nme, tm and ms");
  }
  return nme * nme * tm * ms;
}

std::optional<double> EfficiencyReport::bi() const {
  if (!nme || *nme <= 0) return std::nullopt;
  return balance_index(*nme, tm, ms);
}

EfficiencyReport efficiency_report(const ComputeGraph& graph, std::optional<double> nme,
                                   std::optional<double> pck) {
  EfficiencyReport r;
  r.param_count = count_params(graph).total;
  const auto c = compression_ratios(graph.config.quant);
  r.ms = c.ms;
  r.tm = c.tm;
  r.nme = nme;
  r.pck = pck;
  return r;
}

CsvTable efficiency_table(const std::vector<std::pair<DUNetConfig, EfficiencyReport>>& rows) {
  CsvTable t;
  t.kind = "efficiency";
  t.columns = {"N", "L", "K", "scheme", "params", "MS", "TM", "BI", "NME", "PCK"};
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const auto& [c, r] : rows) {
    t.rows.push_back({std::to_string(c.num_unets), std::to_string(c.levels),
                      std::to_string(c.order), c.quant.label(), std::to_string(r.param_count),
                      format_real(r.ms), format_real(r.tm), opt(r.bi()), opt(r.nme),
                      opt(r.pck)});
  }
  return t;
}

CsvTable memory_table(const MemoryPlan& plan) {
  CsvTable t;
  t.kind = "memory";
  t.columns = {"mode", "site", "unet", "concat_bn", "elements", "bytes"};
  const std::string mode = plan.mode == ExecMode::naive ? "naive" : "efficient";
  for (const auto& a : plan.allocations) {
    t.rows.push_back({mode, a.site, std::to_string(a.unet), a.concat_bn ? "1" : "0",
                      std::to_string(a.elements), std::to_string(a.bytes)});
  }
  t.rows.push_back({mode, "total", "", "", "", std::to_string(plan.total_bytes)});
  return t;
}

}  // namespace dunet
