#include "dunet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dunet {

std::string to_string(Supervision s) {
  return s == Supervision::detection ? "detection" : "regression";
}

Supervision supervision_from_string(const std::string& s) {
  if (s == "detection") return Supervision::detection;
  if (s == "regression") return Supervision::regression;
  throw ConfigError("unknown supervision '" + s + "'");
}

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::pose: return "pose";
    case Schedule::face: return "face";
    case Schedule::constant: return "constant";
  }
  return "face";
}

namespace {

Schedule schedule_from_string(const std::string& s) {
  if (s == "pose") return Schedule::pose;
  if (s == "face") return Schedule::face;
  if (s == "constant") return Schedule::constant;
  throw ConfigError("unknown schedule '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

int to_bits(const std::string& key, const std::string& v) {
  if (v == "full") return quant::kFullBits;
  return to_int(key, v);
}

std::string bits_text(int b) {
  return b == quant::kFullBits ? "full" : std::to_string(b);
}

std::string real_text(double d) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << d;
  return os.str();
}

}  // namespace

void DUNetConfig::validate() const {
  if (num_unets < 1) throw ConfigError("num_unets must be positive");
  if (levels < 1) throw ConfigError("levels must be at least 1");
  if (order < 0 || order > num_unets - 1) {
    throw ConfigError("order must lie in [0, num_unets - 1]");
  }
  if (in_channels < 1 || stem_channels < 1 || bottleneck_width < 1 || growth < 1) {
    throw ConfigError("channel widths must be positive");
  }
  if (num_landmarks < 1) throw ConfigError("num_landmarks must be positive");
  if (input_resolution < 1 || input_resolution % (1 << levels) != 0) {
    throw ConfigError("input_resolution must be divisible by 2^levels");
  }
  if (pass2.has_value() != iterative) {
    throw ConfigError("pass2 supervision is required exactly when iterative");
  }
  if (!(heatmap_sigma > 0)) throw ConfigError("heatmap_sigma must be positive");
  try {
    quant.validate();
  } catch (const quant::QuantError& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  auto& n = c.net;
  auto& t = c.train;
  bool pass2_given = false;
  std::string pass2_text;

  const std::map<std::string, std::function<void(const std::string&, const std::string&)>>
      setters = {
          {"num_unets", [&](auto& k, auto& v) { n.num_unets = to_int(k, v); }},
          {"levels", [&](auto& k, auto& v) { n.levels = to_int(k, v); }},
          {"order", [&](auto& k, auto& v) { n.order = to_int(k, v); }},
          {"in_channels", [&](auto& k, auto& v) { n.in_channels = to_int(k, v); }},
          {"stem_channels", [&](auto& k, auto& v) { n.stem_channels = to_int(k, v); }},
          {"bottleneck_width", [&](auto& k, auto& v) { n.bottleneck_width = to_int(k, v); }},
          {"growth", [&](auto& k, auto& v) { n.growth = to_int(k, v); }},
          {"input_resolution", [&](auto& k, auto& v) { n.input_resolution = to_int(k, v); }},
          {"num_landmarks", [&](auto& k, auto& v) { n.num_landmarks = to_int(k, v); }},
          {"legacy_sum_skip", [&](auto& k, auto& v) { n.legacy_sum_skip = to_bool(k, v); }},
          {"iterative", [&](auto& k, auto& v) { n.iterative = to_bool(k, v); }},
          {"pass1", [&](auto&, auto& v) { n.pass1 = supervision_from_string(v); }},
          {"pass2", [&](auto&, auto& v) { pass2_given = true; pass2_text = v; }},
          {"heatmap_sigma", [&](auto& k, auto& v) { n.heatmap_sigma = to_double(k, v); }},
          {"bit_i", [&](auto& k, auto& v) { n.quant.bit_i = to_bits(k, v); }},
          {"bit_w", [&](auto& k, auto& v) { n.quant.bit_w = to_bits(k, v); }},
          {"bit_g", [&](auto& k, auto& v) { n.quant.bit_g = to_bits(k, v); }},
          {"weight_mode",
           [&](auto&, auto& v) {
             try {
               n.quant.weight_mode = quant::weight_mode_from_string(v);
             } catch (const quant::QuantError& e) {
               throw ConfigError(e.what());
             }
           }},
          {"skip_first_last", [&](auto& k, auto& v) { n.quant.skip_first_last = to_bool(k, v); }},
          {"seed", [&](auto& k, auto& v) { t.seed = to_u64(k, v); }},
          {"batch_size", [&](auto& k, auto& v) { t.batch_size = to_int(k, v); }},
          {"epochs", [&](auto& k, auto& v) { t.epochs = to_int(k, v); }},
          {"schedule", [&](auto&, auto& v) { t.schedule = schedule_from_string(v); }},
          {"learning_rate", [&](auto& k, auto& v) { t.learning_rate = to_double(k, v); }},
          {"schedule_scale", [&](auto& k, auto& v) { t.schedule_scale = to_double(k, v); }},
          {"train_samples", [&](auto& k, auto& v) { t.train_samples = to_int(k, v); }},
          {"val_samples", [&](auto& k, auto& v) { t.val_samples = to_int(k, v); }},
          {"augment", [&](auto& k, auto& v) { t.augment = to_bool(k, v); }},
          {"pck_threshold", [&](auto& k, auto& v) { t.pck_threshold = to_double(k, v); }},
      };

  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (seen[key]++ > 0) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    if (value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty value for '" + key + "'");
    }
    it->second(key, value);
  }
  if (pass2_given && pass2_text != "none") {
    n.pass2 = supervision_from_string(pass2_text);
  } else if (!pass2_given && n.iterative) {
    n.pass2 = n.pass1;
  }
  n.validate();
  if (t.batch_size < 1 || t.epochs < 0 || t.train_samples < 1 || t.val_samples < 0) {
    throw ConfigError("batch_size, train_samples must be positive; epochs, val_samples non-negative");
  }
  if (!(t.learning_rate > 0) || !(t.schedule_scale > 0)) {
    throw ConfigError("learning_rate and schedule_scale must be positive");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& c) {
  const auto& n = c.net;
  const auto& t = c.train;
  std::ostringstream os;
  os << "num_unets = " << n.num_unets << "\n"
     << "levels = " << n.levels << "\n"
     << "order = " << n.order << "\n"
     << "in_channels = " << n.in_channels << "\n"
     << "stem_channels = " << n.stem_channels << "\n"
     << "bottleneck_width = " << n.bottleneck_width << "\n"
     << "growth = " << n.growth << "\n"
     << "input_resolution = " << n.input_resolution << "\n"
     << "num_landmarks = " << n.num_landmarks << "\n"
     << "legacy_sum_skip = " << (n.legacy_sum_skip ? "true" : "false") << "\n"
     << "iterative = " << (n.iterative ? "true" : "false") << "\n"
     << "pass1 = " << to_string(n.pass1) << "\n"
     << "pass2 = " << (n.pass2 ? to_string(*n.pass2) : "none") << "\n"
     << "heatmap_sigma = " << real_text(n.heatmap_sigma) << "\n"
     << "bit_i = " << bits_text(n.quant.bit_i) << "\n"
     << "bit_w = " << bits_text(n.quant.bit_w) << "\n"
     << "bit_g = " << bits_text(n.quant.bit_g) << "\n"
     << "weight_mode = " << quant::to_string(n.quant.weight_mode) << "\n"
     << "skip_first_last = " << (n.quant.skip_first_last ? "true" : "false") << "\n"
     << "seed = " << t.seed << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "epochs = " << t.epochs << "\n"
     << "schedule = " << to_string(t.schedule) << "\n"
     << "learning_rate = " << real_text(t.learning_rate) << "\n"
     << "schedule_scale = " << real_text(t.schedule_scale) << "\n"
     << "train_samples = " << t.train_samples << "\n"
     << "val_samples = " << t.val_samples << "\n"
     << "augment = " << (t.augment ? "true" : "false") << "\n"
     << "pck_threshold = " << real_text(t.pck_threshold) << "\n";
  return os.str();
}

DUNetConfig stacked_baseline(const DUNetConfig& c) {
  DUNetConfig b = c;
  b.order = 0;
  b.legacy_sum_skip = true;
  b.growth = c.bottleneck_width;
  return b;
}

}  // namespace dunet
