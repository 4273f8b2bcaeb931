#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "dunet/quant.hpp"

namespace dunet {

/// Malformed or inconsistent configuration. The CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Supervision { detection, regression };

std::string to_string(Supervision s);
Supervision supervision_from_string(const std::string& s);

/// Declarative description of a densely connected U-Net stack.
struct DUNetConfig {
  int num_unets = 4;
  /// Top-down blocks per U-Net, mirrored by the same number of bottom-up ones.
  int levels = 4;
  /// How many preceding U-Nets feed each block; 0 is plain stacking.
  int order = 1;
  int in_channels = 3;
  int stem_channels = 128;
  /// 1x1 compression width inside every bottleneck.
  int bottleneck_width = 128;
  /// Features emitted by the 3x3 convolution of every bottleneck.
  int growth = 32;
  /// Largest feature resolution, i.e. after the stride-2 stem and its pool.
  int input_resolution = 64;
  int num_landmarks = 16;
  /// Sum instead of concatenate the within-U-Net skip (classic hourglass).
  bool legacy_sum_skip = false;
  bool iterative = false;
  Supervision pass1 = Supervision::detection;
  std::optional<Supervision> pass2;
  double heatmap_sigma = 1.0;
  quant::QuantScheme quant;

  int image_resolution() const { return input_resolution * 4; }
  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  bool operator==(const DUNetConfig&) const = default;
};

enum class Schedule { pose, face, constant };

std::string to_string(Schedule s);

/// Training-side settings that share the config file with the network.
struct TrainSettings {
  std::uint64_t seed = 1;
  int batch_size = 16;
  int epochs = 10;
  Schedule schedule = Schedule::face;
  double learning_rate = 2.5e-4;
  /// Epoch scale applied to the schedule milestones (1 = full-length schedule).
  double schedule_scale = 1.0;
  int train_samples = 64;
  int val_samples = 16;
  bool augment = true;
  double pck_threshold = 0.5;

  bool operator==(const TrainSettings&) const = default;
};

struct ExperimentConfig {
  DUNetConfig net;
  TrainSettings train;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys, duplicate
/// keys and unparsable values raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const ExperimentConfig& c);

/// Stacked-U-Net reference: order 0, summed skips, and blocks that emit the
/// full bottleneck width instead of a small growth.
DUNetConfig stacked_baseline(const DUNetConfig& c);

}  // namespace dunet
