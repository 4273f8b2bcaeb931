#include "dunet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "dunet/analysis.hpp"
#include "dunet/checkpoint.hpp"
#include "dunet/config.hpp"
#include "dunet/graph.hpp"
#include "dunet/io.hpp"
#include "dunet/training.hpp"

namespace dunet::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::optional<int> epochs;
  std::string input;
  std::string checkpoint;
};

ExecMode parse_mode(const std::string& m) {
  if (m.empty() || m == "naive") return ExecMode::naive;
  if (m == "efficient") return ExecMode::efficient;
  throw ConfigError("unknown mode '" + m + "'");
}

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  auto c = load_config(o.config);
  if (o.seed) c.train.seed = *o.seed;
  if (o.epochs) {
    if (*o.epochs < 0) throw ConfigError("--epochs must be non-negative");
    c.train.epochs = *o.epochs;
  }
  return c;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void write_csv(const fs::path& p, const CsvTable& t) { write_atomic(p, format_csv(t)); }

CsvTable eval_table(const EvalResult& r) {
  CsvTable t;
  t.kind = "eval";
  t.columns = {"scope", "pck", "nme"};
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  t.rows.push_back({"all", opt(r.mean_pck), format_real(r.nme)});
  for (std::size_t k = 0; k < r.landmark_pck.size(); ++k) {
    t.rows.push_back({"landmark" + std::to_string(k), opt(r.landmark_pck[k]), ""});
  }
  return t;
}

void cmd_build(const Options& o) {
  const auto c = load(o);
  const auto dir = out_dir(o);
  write_atomic(dir / "graph.txt", dump_graph(build_graph(c.net)));
}

void cmd_analyze(const Options& o) {
  const auto c = load(o);
  const auto dir = out_dir(o);
  const auto g = build_graph(c.net);
  write_csv(dir / "params.csv", efficiency_table({{c.net, efficiency_report(g)}}));
  CsvTable blocks;
  blocks.kind = "params-per-block";
  blocks.columns = {"block", "params"};
  for (const auto& [name, n] : count_params(g).per_block) {
    blocks.rows.push_back({name, std::to_string(n)});
  }
  write_csv(dir / "params_per_block.csv", blocks);
}

void cmd_plan(const Options& o) {
  const auto c = load(o);
  const auto dir = out_dir(o);
  const auto g = build_graph(c.net);
  std::vector<ExecMode> modes = {ExecMode::naive, ExecMode::efficient};
  if (!o.mode.empty()) modes = {parse_mode(o.mode)};
  for (auto m : modes) {
    const auto plan = plan_memory(g, m, c.train.batch_size, 4);
    write_csv(dir / (m == ExecMode::naive ? "memory_naive.csv" : "memory_efficient.csv"),
              memory_table(plan));
  }
}

std::optional<EvalResult> desk_run(const ExperimentConfig& c, ExecMode mode) {
  if (c.train.epochs == 0) return std::nullopt;
  auto [train, val] = synth_splits(c);
  Trainer t(c, mode);
  t.train(train, nullptr);
  return t.evaluate(val.samples.empty() ? train : val);
}

void cmd_sweep(const Options& o) {
  const auto base = load(o);
  const auto dir = out_dir(o);
  const bool measure = o.epochs.has_value() && *o.epochs > 0;
  CsvTable t;
  t.kind = "sweep-order";
  t.columns = {"N", "K", "params", "NME", "PCK"};
  for (int k = 0; k < base.net.num_unets; ++k) {
    auto c = base;
    c.net.order = k;
    const auto params = count_params(build_graph(c.net)).total;
    std::string nme, pck;
    if (measure) {
      if (auto r = desk_run(c, parse_mode(o.mode))) {
        nme = format_real(r->nme);
        if (r->mean_pck) pck = format_real(*r->mean_pck);
      }
    }
    t.rows.push_back({std::to_string(c.net.num_unets), std::to_string(k), std::to_string(params),
                      nme, pck});
  }
  write_csv(dir / "sweep_order.csv", t);
}

void cmd_train(const Options& o) {
  const auto c = load(o);
  const auto dir = out_dir(o);
  auto [train, val] = synth_splits(c);
  Trainer t(c, parse_mode(o.mode));
  const auto report = t.train(train, &val);
  save_checkpoint(dir / "checkpoint.bin", c, t.network());
  write_csv(dir / "train_log.csv", log_table(report));
  if (report.final_eval) write_csv(dir / "eval.csv", eval_table(*report.final_eval));
}

void cmd_eval(const Options& o) {
  const auto dir = out_dir(o);
  const fs::path ck = o.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(o.checkpoint);
  const auto saved = load_checkpoint(ck);
  auto c = o.config.empty() ? saved.config : load(o);
  if (!(c.net == saved.config.net)) throw ConfigError("config does not match the checkpoint");
  if (o.seed) c.train.seed = *o.seed;
  Trainer t(c, parse_mode(o.mode));
  restore(t.network(), saved);
  auto [train, val] = synth_splits(c);
  write_csv(dir / "eval.csv", eval_table(t.evaluate(val.samples.empty() ? train : val)));
}

struct Row {
  const char* name;
  int bit_i, bit_w, bit_g;
  quant::WeightMode mode;
};

void cmd_quant(const Options& o) {
  const auto base = load(o);
  const auto dir = out_dir(o);
  using W = quant::WeightMode;
  const Row rows[] = {
      {"DU-Net", 32, 32, 32, W::full},        {"BW-QIG", 6, 1, 6, W::binary},
      {"BW-QIG", 8, 1, 8, W::binary},         {"BW-alpha-QIG", 8, 1, 8, W::binary_alpha},
      {"BW", 32, 1, 32, W::binary},           {"BW-alpha", 32, 1, 32, W::binary_alpha},
      {"TW", 32, 2, 32, W::ternary},          {"TW-QIG", 6, 2, 6, W::ternary},
      {"TW-QIG", 8, 2, 8, W::ternary},
  };
  CsvTable t;
  t.kind = "quant-report";
  t.columns = {"method", "bit_i", "bit_w", "bit_g", "params", "NME", "TM", "MS", "BI"};
  for (const auto& r : rows) {
    auto c = base;
    c.net.quant.bit_i = r.bit_i;
    c.net.quant.bit_w = r.bit_w;
    c.net.quant.bit_g = r.bit_g;
    c.net.quant.weight_mode = r.mode;
    const auto g = build_graph(c.net);
    std::optional<double> nme;
    if (auto e = desk_run(c, parse_mode(o.mode))) nme = e->nme;
    const auto rep = efficiency_report(g, nme);
    t.rows.push_back({r.name, std::to_string(r.bit_i), std::to_string(r.bit_w),
                      std::to_string(r.bit_g), std::to_string(rep.param_count),
                      nme ? format_real(*nme) : "", format_real(rep.tm), format_real(rep.ms),
                      rep.bi() ? format_real(*rep.bi()) : ""});
  }
  write_csv(dir / "quant_report.csv", t);
}

double cell(const CsvTable& t, const std::vector<std::string>& row, const char* col) {
  const int i = t.column(col);
  if (i < 0) throw ConfigError(std::string("input csv lacks column '") + col + "'");
  try {
    std::size_t used = 0;
    const double v = std::stod(row[i], &used);
    if (used != row[i].size()) throw std::invalid_argument(row[i]);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number '" + row[i] + "' in column " + col);
  }
}

void cmd_bi(const Options& o) {
  if (o.input.empty()) throw ConfigError("--input is required");
  const auto dir = out_dir(o);
  CsvTable in;
  try {
    in = parse_csv(read_file(o.input));
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  CsvTable t;
  t.kind = "bi";
  t.columns = in.columns;
  t.columns.push_back("BI");
  for (const auto& row : in.rows) {
    auto r = row;
    r.push_back(format_real(balance_index(cell(in, row, "nme"), cell(in, row, "tm"),
                                          cell(in, row, "ms"))));
    t.rows.push_back(std::move(r));
  }
  write_csv(dir / "bi.csv", t);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Order-K densely connected U-Net toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* s, bool needs_config) {
    auto* c = s->add_option("--config", o.config, "experiment config file");
    if (needs_config) c->required();
    s->add_option("--out", o.out, "output directory")->required();
    s->add_option("--seed", o.seed, "override train seed");
    s->add_option("--mode", o.mode, "naive or efficient")->check(CLI::IsMember({"naive", "efficient"}));
    s->add_option("--epochs", o.epochs, "override epoch count");
  };
  std::vector<std::pair<CLI::App*, void (*)(const Options&)>> cmds;
  auto add = [&](const char* name, const char* help, void (*fn)(const Options&), bool cfg) {
    auto* s = app.add_subcommand(name, help);
    common(s, cfg);
    cmds.emplace_back(s, fn);
    return s;
  };
  add("build", "dump the block adjacency listing", cmd_build, true);
  add("analyze-params", "parameter counts and compression ratios", cmd_analyze, true);
  add("plan-memory", "activation memory plan per mode", cmd_plan, true);
  add("sweep-order", "parameters (and desk-scale NME) for K = 0..N-1", cmd_sweep, true);
  add("train", "train on synthetic data", cmd_train, true);
  add("eval", "evaluate a checkpoint", cmd_eval, false)
      ->add_option("--checkpoint", o.checkpoint, "checkpoint file (default OUT/checkpoint.bin)");
  add("quant-report", "bit-width table with balance indices", cmd_quant, true);
  add("bi", "balance index for rows of nme, tm, ms", cmd_bi, false)
      ->add_option("--input", o.input, "csv with nme, tm, ms columns")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    for (auto& [s, fn] : cmds) {
      if (s->parsed()) fn(o);
    }
  } catch (const ConfigError& e) {
    std::cerr << "dunet: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dunet: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dunet::cli
