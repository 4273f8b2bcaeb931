#include "dunet/metrics.hpp"

#include <cmath>

namespace dunet {

namespace {

void check_shapes(std::span<const Points> pred, std::span<const Points> gt,
                  std::span<const double> ref) {
  if (pred.size() != gt.size() || gt.size() != ref.size()) {
    throw MetricError("prediction, ground truth and normalizer counts differ");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i].size() != gt[i].size()) throw MetricError("landmark counts differ");
    if (!(ref[i] > 0)) throw MetricError("normalizer must be positive");
  }
}

double dist(const Landmark& a, const Landmark& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::optional<double> sample_error(const Points& p, const Points& g, double ref) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g[k].visible) continue;
    sum += dist(p[k], g[k]) / ref;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return 100.0 * sum / n;
}

}  // namespace

std::optional<double> pck(std::span<const Points> pred, std::span<const Points> gt,
                          std::span<const double> reference, double threshold) {
  check_shapes(pred, gt, reference);
  if (!(threshold >= 0)) throw MetricError("threshold must be non-negative");
  long hit = 0, total = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t k = 0; k < gt[i].size(); ++k) {
      if (!gt[i][k].visible) continue;
      ++total;
      if (dist(pred[i][k], gt[i][k]) <= threshold * reference[i]) ++hit;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / total;
}

double nme(std::span<const Points> pred, std::span<const Points> gt,
           std::span<const double> interocular) {
  check_shapes(pred, gt, interocular);
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (auto e = sample_error(pred[i], gt[i], interocular[i])) {
      sum += *e;
      ++n;
    }
  }
  if (n == 0) throw MetricError("no visible landmarks to score");
  return sum / n;
}

EvalResult evaluate(std::span<const Points> pred, std::span<const Points> gt,
                    std::span<const double> reference, double threshold) {
  check_shapes(pred, gt, reference);
  EvalResult r;
  const std::size_t K = gt.empty() ? 0 : gt.front().size();
  std::vector<long> hit(K, 0), total(K, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i].size() != K) throw MetricError("landmark count varies across samples");
    for (std::size_t k = 0; k < K; ++k) {
      if (!gt[i][k].visible) continue;
      ++total[k];
      if (dist(pred[i][k], gt[i][k]) <= threshold * reference[i]) ++hit[k];
    }
    r.sample_nme.push_back(sample_error(pred[i], gt[i], reference[i]));
  }
  for (std::size_t k = 0; k < K; ++k) {
    r.landmark_pck.push_back(total[k] ? std::optional<double>(double(hit[k]) / total[k])
                                      : std::nullopt);
  }
  r.mean_pck = pck(pred, gt, reference, threshold);
  r.nme = nme(pred, gt, reference);
  return r;
}

}  // namespace dunet
