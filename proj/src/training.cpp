#include "dunet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dunet/graph.hpp"

namespace dunet {

std::vector<double> render_heatmaps(const Points& landmarks, int resolution, double sigma) {
  if (resolution < 1) throw TrainError("heatmap resolution must be positive");
  if (!(sigma > 0)) throw TrainError("heatmap sigma must be positive");
  const int R = resolution;
  std::vector<double> out(landmarks.size() * R * R, 0.0);
  for (std::size_t k = 0; k < landmarks.size(); ++k) {
    const auto& p = landmarks[k];
    if (!p.visible || p.x < 0 || p.x > 1 || p.y < 0 || p.y > 1) continue;
    const int pj = std::min(R - 1, static_cast<int>(p.x * R));
    const int pi = std::min(R - 1, static_cast<int>(p.y * R));
    double* map = out.data() + k * R * R;
    for (int i = 0; i < R; ++i) {
      for (int j = 0; j < R; ++j) {
        const double d2 = (i - pi) * (i - pi) + (j - pj) * (j - pj);
        map[i * R + j] = std::exp(-d2 / (2 * sigma * sigma));
      }
    }
  }
  return out;
}

std::vector<Decoded> decode(std::span<const double> maps, int num_maps, int height, int width) {
  if (num_maps < 0 || height < 1 || width < 1 ||
      maps.size() != static_cast<std::size_t>(num_maps) * height * width) {
    throw TrainError("decode: map extents do not match the data");
  }
  std::vector<Decoded> out;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int k = 0; k < num_maps; ++k) {
    const double* m = maps.data() + k * plane;
    const auto* lo = std::min_element(m, m + plane);
    const auto* hi = std::max_element(m, m + plane);
    if (*lo == *hi) {
      out.push_back({{0.5, 0.5, true}, true});
      continue;
    }
    const auto idx = static_cast<int>(hi - m);
    const int i = idx / width, j = idx % width;
    const double peak = *hi;
    auto step = [peak](std::optional<double> before, std::optional<double> after) {
      const double b = before.value_or(-INFINITY), a = after.value_or(-INFINITY);
      if (std::max(a, b) == peak || a == b) return 0.0;
      return a > b ? 0.25 : -0.25;
    };
    auto at = [&](int y, int x) -> std::optional<double> {
      if (y < 0 || x < 0 || y >= height || x >= width) return std::nullopt;
      return m[y * width + x];
    };
    const double dx = step(at(i, j - 1), at(i, j + 1));
    const double dy = step(at(i - 1, j), at(i + 1, j));
    out.push_back({{(j + 0.5 + dx) / width, (i + 0.5 + dy) / height, true}, false});
  }
  return out;
}

Points soft_argmax(std::span<const double> maps, int num_maps, int height, int width) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (maps.size() != plane * num_maps) throw TrainError("soft_argmax: extents mismatch");
  Points out;
  for (int k = 0; k < num_maps; ++k) {
    const double* m = maps.data() + k * plane;
    const double top = *std::max_element(m, m + plane);
    double z = 0, sx = 0, sy = 0;
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j < width; ++j) {
        const double e = std::exp(m[i * width + j] - top);
        z += e;
        sx += e * (j + 0.5) / width;
        sy += e * (i + 0.5) / height;
      }
    }
    out.push_back({sx / z, sy / z, true});
  }
  return out;
}

void soft_argmax_backward(std::span<const double> maps, int num_maps, int height, int width,
                          std::span<const double> dcoords, std::span<double> dmaps) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const auto pts = soft_argmax(maps, num_maps, height, width);
  for (int k = 0; k < num_maps; ++k) {
    const double* m = maps.data() + k * plane;
    double* d = dmaps.data() + k * plane;
    const double top = *std::max_element(m, m + plane);
    double z = 0;
    for (std::size_t p = 0; p < plane; ++p) z += std::exp(m[p] - top);
    const double gx = dcoords[2 * k], gy = dcoords[2 * k + 1];
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j < width; ++j) {
        const double prob = std::exp(m[i * width + j] - top) / z;
        d[i * width + j] += prob * (gx * ((j + 0.5) / width - pts[k].x) +
                                    gy * ((i + 0.5) / height - pts[k].y));
      }
    }
  }
}

Targets make_targets(std::span<const Sample> batch, int resolution, double sigma) {
  Targets t;
  if (batch.empty()) throw TrainError("empty batch");
  const int K = static_cast<int>(batch.front().landmarks.size());
  t.heatmaps = Tensor(Shape4{static_cast<int>(batch.size()), K, resolution, resolution});
  auto dst = t.heatmaps.values();
  std::size_t off = 0;
  for (const auto& s : batch) {
    if (static_cast<int>(s.landmarks.size()) != K) throw TrainError("landmark count varies");
    const auto maps = render_heatmaps(s.landmarks, resolution, sigma);
    std::copy(maps.begin(), maps.end(), dst.begin() + off);
    off += maps.size();
    t.coords.push_back(s.landmarks);
  }
  return t;
}

Supervision head_supervision(const DUNetConfig& config, int index) {
  if (index < config.num_unets) return config.pass1;
  return config.pass2.value_or(config.pass1);
}

double head_loss(const Tensor& head, const Targets& targets, Supervision sup, Tensor* grad) {
  const Shape4 hs = head.shape4();
  const auto h = head.values();
  if (grad) *grad = Tensor(hs, 0.0);
  if (sup == Supervision::detection) {
    if (!(targets.heatmaps.shape4() == hs)) throw TrainError("heatmap target shape mismatch");
    const auto t = targets.heatmaps.values();
    double sum = 0.0;
    const double n = static_cast<double>(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double d = h[i] - t[i];
      sum += d * d;
      if (grad) grad->values()[i] = 2.0 * d / n;
    }
    return sum / n;
  }
  if (static_cast<int>(targets.coords.size()) != hs.n) throw TrainError("coord target mismatch");
  const std::size_t plane = static_cast<std::size_t>(hs.c) * hs.h * hs.w;
  int visible = 0;
  for (const auto& s : targets.coords) {
    if (static_cast<int>(s.size()) != hs.c) throw TrainError("coord target mismatch");
    for (const auto& p : s) visible += p.visible ? 1 : 0;
  }
  if (visible == 0) return 0.0;
  const double n = 2.0 * visible;
  double sum = 0.0;
  for (int b = 0; b < hs.n; ++b) {
    const auto maps = h.subspan(b * plane, plane);
    const auto pts = soft_argmax(maps, hs.c, hs.h, hs.w);
    std::vector<double> dc(2 * hs.c, 0.0);
    for (int k = 0; k < hs.c; ++k) {
      const auto& g = targets.coords[b][k];
      if (!g.visible) continue;
      const double ex = pts[k].x - g.x, ey = pts[k].y - g.y;
      sum += ex * ex + ey * ey;
      dc[2 * k] = 2.0 * ex / n;
      dc[2 * k + 1] = 2.0 * ey / n;
    }
    if (grad) {
      soft_argmax_backward(maps, hs.c, hs.h, hs.w, dc, grad->values().subspan(b * plane, plane));
    }
  }
  return sum / n;
}

LossResult loss(std::span<const Tensor> heads, const Targets& targets,
                const DUNetConfig& config) {
  const std::size_t expected =
      static_cast<std::size_t>(config.num_unets) * (config.iterative ? 2 : 1);
  if (heads.size() != expected) {
    throw TrainError("expected " + std::to_string(expected) + " heads, got " +
                     std::to_string(heads.size()));
  }
  LossResult r;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    Tensor g;
    const double v = head_loss(heads[i], targets, head_supervision(config, static_cast<int>(i)), &g);
    r.per_head.push_back(v);
    r.total += v;
    r.grads.push_back(std::move(g));
  }
  return r;
}

std::vector<Points> head_points(const Tensor& head, Supervision sup) {
  const Shape4 hs = head.shape4();
  const std::size_t plane = static_cast<std::size_t>(hs.c) * hs.h * hs.w;
  std::vector<Points> out;
  for (int b = 0; b < hs.n; ++b) {
    const auto maps = head.values().subspan(b * plane, plane);
    if (sup == Supervision::regression) {
      out.push_back(soft_argmax(maps, hs.c, hs.h, hs.w));
    } else {
      Points p;
      for (const auto& d : decode(maps, hs.c, hs.h, hs.w)) p.push_back(d.point);
      out.push_back(std::move(p));
    }
  }
  return out;
}

void RMSprop::step(std::vector<Tensor>& params, double lr) {
  if (square_avg_.empty()) {
    for (const auto& p : params) square_avg_.emplace_back(p.size(), 0.0);
  }
  if (square_avg_.size() != params.size()) throw TrainError("optimizer state does not match");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = square_avg_[i];
    auto w = params[i].values();
    const auto g = std::as_const(params[i]).grad();
    if (g.empty()) continue;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = kAlpha * v[j] + (1 - kAlpha) * g[j] * g[j];
      w[j] -= lr * g[j] / (std::sqrt(v[j]) + kEps);
    }
  }
}

std::vector<std::pair<int, double>> schedule_table(Schedule s, double base_lr, double scale) {
  if (!(base_lr > 0) || !(scale > 0)) throw TrainError("schedule needs positive lr and scale");
  auto at = [scale](int e) { return std::max(1, static_cast<int>(std::lround(e * scale))); };
  switch (s) {
    case Schedule::pose:
      return {{0, base_lr}, {at(100), base_lr / 5}};
    case Schedule::face:
      return {{0, base_lr}, {at(30), base_lr / 5}, {at(60), base_lr / 10}, {at(90), base_lr / 20}};
    case Schedule::constant:
      return {{0, base_lr}};
  }
  return {{0, base_lr}};
}

double learning_rate(Schedule s, double base_lr, double scale, int epoch) {
  double lr = base_lr;
  for (const auto& [start, v] : schedule_table(s, base_lr, scale)) {
    if (epoch >= start) lr = v;
  }
  return lr;
}

CsvTable log_table(const RunReport& r) {
  CsvTable t;
  t.kind = "train-log";
  t.columns = {"epoch", "lr", "train_loss", "val_nme", "val_pck"};
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const auto& e : r.epochs) {
    t.rows.push_back({std::to_string(e.epoch), format_real(e.lr), format_real(e.train_loss),
                      opt(e.val_nme), opt(e.val_pck)});
  }
  return t;
}

std::pair<Dataset, Dataset> synth_splits(const ExperimentConfig& config) {
  const auto& n = config.net;
  const auto& t = config.train;
  Dataset train = generate(mix_seed(t.seed, 101), t.train_samples, n.num_landmarks,
                           n.image_resolution(), n.in_channels);
  Dataset val;
  val.channels = n.in_channels;
  val.resolution = n.image_resolution();
  val.num_landmarks = n.num_landmarks;
  if (t.val_samples > 0) {
    val = generate(mix_seed(t.seed, 202), t.val_samples, n.num_landmarks, n.image_resolution(),
                   n.in_channels);
  }
  return {std::move(train), std::move(val)};
}

Trainer::Trainer(const ExperimentConfig& config, ExecMode mode)
    : config_(config), mode_(mode), net_(build_graph(config.net), config.train.seed) {}

Tensor Trainer::batch_input(std::span<const Sample> batch) const {
  const auto& n = config_.net;
  const int img = n.image_resolution();
  Tensor x(Shape4{static_cast<int>(batch.size()), n.in_channels, img, img});
  auto dst = x.values();
  std::size_t off = 0;
  for (const auto& s : batch) {
    if (s.resolution != img || s.channels != n.in_channels) {
      throw TrainError("sample is " + std::to_string(s.channels) + "x" +
                       std::to_string(s.resolution) + ", network expects " +
                       std::to_string(n.in_channels) + "x" + std::to_string(img));
    }
    std::copy(s.image.begin(), s.image.end(), dst.begin() + off);
    off += s.image.size();
  }
  return x;
}

double Trainer::step(std::span<const Sample> batch, double lr) {
  net_.set_training(true);
  const auto heads = net_.forward(batch_input(batch), mode_);
  const auto targets = make_targets(batch, config_.net.input_resolution, config_.net.heatmap_sigma);
  auto l = loss(heads, targets, config_.net);
  if (!std::isfinite(l.total)) throw TrainError("non-finite loss");
  net_.backward(l.grads);
  opt_.step(net_.params(), lr);
  return l.total;
}

RunReport Trainer::train(const Dataset& train, const Dataset* val) {
  if (train.samples.empty()) throw TrainError("training set is empty");
  const auto& t = config_.train;
  RunReport report;
  std::vector<int> order(train.samples.size());
  for (int e = 0; e < t.epochs; ++e, ++epoch_) {
    const double lr = learning_rate(t.schedule, t.learning_rate, t.schedule_scale, epoch_);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle(mix_seed(t.seed, 0x5100000000ULL + epoch_));
    std::shuffle(order.begin(), order.end(), shuffle);
    double sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += t.batch_size) {
      std::vector<Sample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + t.batch_size); ++i) {
        const auto& s = train.samples[order[i]];
        if (t.augment) {
          std::mt19937_64 rng(mix_seed(t.seed, (0xA000000000ULL + epoch_) * 1000003ULL + order[i]));
          batch.push_back(augment(s, rng));
        } else {
          batch.push_back(s);
        }
      }
      double l = 0.0;
      try {
        l = step(batch, lr);
      } catch (const EngineError& err) {
        throw TrainError("training diverged at epoch " + std::to_string(epoch_) + ": " +
                         err.what());
      } catch (const TrainError& err) {
        throw TrainError("training diverged at epoch " + std::to_string(epoch_) + ": " +
                         err.what());
      }
      report.step_losses.push_back(l);
      sum += l;
      ++steps;
    }
    EpochLog log{epoch_, lr, sum / steps, std::nullopt, std::nullopt};
    if (val && !val->samples.empty()) {
      const auto r = evaluate(*val);
      log.val_nme = r.nme;
      log.val_pck = r.mean_pck;
      report.final_eval = r;
    }
    report.epochs.push_back(log);
  }
  return report;
}

std::vector<Points> Trainer::predict(const Dataset& d) {
  net_.set_training(false);
  const int last = static_cast<int>(net_.graph().head_values.size()) - 1;
  const Supervision sup = head_supervision(config_.net, last);
  std::vector<Points> out;
  const std::size_t bs = static_cast<std::size_t>(config_.train.batch_size);
  for (std::size_t b = 0; b < d.samples.size(); b += bs) {
    const auto n = std::min(bs, d.samples.size() - b);
    const auto heads = net_.forward(batch_input(std::span(d.samples).subspan(b, n)), mode_);
    for (auto& p : head_points(heads.back(), sup)) out.push_back(std::move(p));
  }
  net_.set_training(true);
  return out;
}

EvalResult Trainer::evaluate(const Dataset& d) {
  const auto pred = predict(d);
  std::vector<Points> gt;
  std::vector<double> ref;
  for (const auto& s : d.samples) {
    gt.push_back(s.landmarks);
    ref.push_back(s.reference_length);
  }
  return dunet::evaluate(pred, gt, ref, config_.train.pck_threshold);
}

}  // namespace dunet
