#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dunet/config.hpp"
#include "dunet/data.hpp"
#include "dunet/engine.hpp"
#include "dunet/io.hpp"
#include "dunet/metrics.hpp"

namespace dunet {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// K x R x R Gaussians, peak 1 at the pixel containing each landmark.
/// Invisible or out-of-square landmarks give all-zero maps.
std::vector<double> render_heatmaps(const Points& landmarks, int resolution, double sigma);

struct Decoded {
  Landmark point;
  /// Set when the map was flat and the centre was returned.
  bool flagged = false;
};

/// Argmax per map plus a quarter-pixel step toward the larger horizontal and
/// vertical neighbour. No step when that neighbour ties the peak.
std::vector<Decoded> decode(std::span<const double> maps, int num_maps, int height, int width);

/// Expected pixel-centre position under a per-map softmax.
Points soft_argmax(std::span<const double> maps, int num_maps, int height, int width);
/// dmaps from d(x, y) per map, accumulating.
void soft_argmax_backward(std::span<const double> maps, int num_maps, int height, int width,
                          std::span<const double> dcoords, std::span<double> dmaps);

struct Targets {
  /// B x K x R x R.
  Tensor heatmaps;
  std::vector<Points> coords;
};

Targets make_targets(std::span<const Sample> batch, int resolution, double sigma);

/// Supervision of head `index` of a graph built from `config`.
Supervision head_supervision(const DUNetConfig& config, int index);

/// Detection: mean squared error over all heatmap pixels. Regression: mean
/// squared error over the coordinates of visible landmarks. Fills `grad`
/// with d(loss)/d(head) when given.
double head_loss(const Tensor& head, const Targets& targets, Supervision sup,
                 Tensor* grad = nullptr);

struct LossResult {
  std::vector<double> per_head;
  double total = 0.0;
  std::vector<Tensor> grads;
};

LossResult loss(std::span<const Tensor> heads, const Targets& targets,
                const DUNetConfig& config);

/// Landmarks read off one head for every sample of the batch.
std::vector<Points> head_points(const Tensor& head, Supervision sup);

class RMSprop {
 public:
  static constexpr double kAlpha = 0.99;
  static constexpr double kEps = 1e-8;

  /// v = a v + (1 - a) g^2; p -= lr g / (sqrt(v) + eps).
  void step(std::vector<Tensor>& params, double lr);
  const std::vector<std::vector<double>>& state() const { return square_avg_; }

 private:
  std::vector<std::vector<double>> square_avg_;
};

/// (first epoch, learning rate) rows of the piecewise-constant schedule.
/// Milestones are multiplied by `scale` and rounded, at least epoch 1.
std::vector<std::pair<int, double>> schedule_table(Schedule s, double base_lr, double scale);
double learning_rate(Schedule s, double base_lr, double scale, int epoch);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_nme;
  std::optional<double> val_pck;
};

struct RunReport {
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
  std::optional<EvalResult> final_eval;
};

CsvTable log_table(const RunReport& r);

/// Synthetic train and validation splits sized by config.train, at the
/// network's image resolution, from streams derived from the seed.
std::pair<Dataset, Dataset> synth_splits(const ExperimentConfig& config);

class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& config, ExecMode mode = ExecMode::naive);

  Network& network() { return net_; }
  const Network& network() const { return net_; }
  const ExperimentConfig& config() const { return config_; }

  /// One forward/backward/update on `batch`; returns the summed loss.
  double step(std::span<const Sample> batch, double lr);

  /// Runs config.train.epochs epochs; validates after each one when `val`
  /// has samples.
  RunReport train(const Dataset& train, const Dataset* val = nullptr);

  std::vector<Points> predict(const Dataset& d);
  EvalResult evaluate(const Dataset& d);

 private:
  Tensor batch_input(std::span<const Sample> batch) const;

  ExperimentConfig config_;
  ExecMode mode_;
  Network net_;
  RMSprop opt_;
  int epoch_ = 0;
};

}  // namespace dunet
