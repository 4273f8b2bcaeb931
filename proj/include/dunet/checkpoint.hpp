#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dunet/config.hpp"
#include "dunet/engine.hpp"

namespace dunet {

/// Layout: "DUNETCKP", u32 version, u32 length + config text, u32 array
/// count, then per array u32 length + name, u64 count, f64 values. All
/// integers and reals little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ExperimentConfig config;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;
};

std::string encode_checkpoint(const ExperimentConfig& config, const Network& net);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config,
                     const Network& net);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameters and batchnorm statistics into `net` by name.
void restore(Network& net, const Checkpoint& ckpt);

}  // namespace dunet
