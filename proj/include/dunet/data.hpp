#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace dunet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Position in the unit square, x to the right and y down.
struct Landmark {
  double x = 0.0;
  double y = 0.0;
  bool visible = true;

  bool operator==(const Landmark&) const = default;
};

/// x' = m[0] x + m[1] y + m[2], y' = m[3] x + m[4] y + m[5] in unit-square
/// coordinates.
struct Affine {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Landmark apply(const Landmark& p) const;
  bool operator==(const Affine&) const = default;
};

struct AugmentParams {
  double scale = 1.0;
  double angle_deg = 0.0;
  bool flip = false;
};

/// Record of the transform that produced an augmented sample.
struct Augmentation {
  AugmentParams params;
  Affine affine;
  /// out[i] came from source landmark permutation[i].
  std::vector<int> permutation;
};

struct Sample {
  int channels = 3;
  int resolution = 0;
  /// C x H x W, values in [0, 1].
  std::vector<double> image;
  std::vector<Landmark> landmarks;
  /// Normalizer for metrics, in unit-square lengths (inter-ocular distance).
  double reference_length = 0.0;
  std::optional<Augmentation> augmentation;

  bool operator==(const Sample& o) const {
    return channels == o.channels && resolution == o.resolution && image == o.image &&
           landmarks == o.landmarks && reference_length == o.reference_length;
  }
};

struct Dataset {
  int channels = 3;
  int resolution = 0;
  int num_landmarks = 0;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

/// Randomized elliptical faces. Landmark order: left eye, right eye, nose,
/// mouth left, mouth right, then left/right contour pairs and a chin point.
/// Stored values are exactly representable as 32-bit floats.
Dataset generate(std::uint64_t seed, int count, int num_landmarks, int resolution,
                 int channels = 3);
Sample generate_sample(std::uint64_t seed, int index, int num_landmarks, int resolution,
                       int channels = 3);

/// Left/right identity swap applied by a horizontal flip.
std::vector<int> flip_permutation(int num_landmarks);

/// Forward map about the image centre: scale, rotate, then mirror.
Affine augment_affine(const AugmentParams& p);

/// Bilinear image resampling, exact landmark affine, out-of-frame landmarks
/// marked invisible.
Sample apply_augment(const Sample& s, const AugmentParams& p);
/// Draws scale in [0.75, 1.25], angle in [-30, 30] and a fair flip.
AugmentParams draw_augment(std::mt19937_64& rng);
Sample augment(const Sample& s, std::mt19937_64& rng);

/// Directory with manifest.txt and samples.bin (little-endian f32 records).
void write_dataset(const std::filesystem::path& dir, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace dunet
