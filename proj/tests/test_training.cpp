#include <doctest.h>

#include <cmath>

#include "dunet/training.hpp"
#include "support.hpp"

using namespace dunet;
using dunet::test::tiny_net;

namespace {

ExperimentConfig tiny_experiment(DUNetConfig net) {
  ExperimentConfig c;
  c.net = net;
  c.train.batch_size = 4;
  c.train.epochs = 2;
  c.train.train_samples = 8;
  c.train.val_samples = 4;
  c.train.learning_rate = 1e-3;
  c.train.schedule = Schedule::constant;
  return c;
}

}  // namespace

TEST_CASE("heatmap peak and falloff") {
  const int R = 16;
  const auto m = render_heatmaps({{(5 + 0.5) / R, (9 + 0.5) / R, true}}, R, 1.0);
  REQUIRE(m.size() == R * R);
  CHECK(m[9 * R + 5] == 1.0);
  CHECK(m[9 * R + 6] == doctest::Approx(0.6065).epsilon(1e-4));
  CHECK(m[8 * R + 5] == doctest::Approx(std::exp(-0.5)));
  CHECK(*std::max_element(m.begin(), m.end()) == 1.0);
  const auto z = render_heatmaps({{0.5, 0.5, false}, {1.5, 0.5, true}}, R, 1.0);
  CHECK(std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; }));
  CHECK_THROWS_AS(render_heatmaps({}, R, 0.0), TrainError);
}

TEST_CASE("decode cases") {
  const int R = 8;
  std::vector<double> m(R * R, 0.0);
  m[3 * R + 4] = 1.0;
  auto d = decode(m, 1, R, R);
  CHECK_FALSE(d[0].flagged);
  CHECK(d[0].point.x == (4 + 0.5) / R);
  CHECK(d[0].point.y == (3 + 0.5) / R);
  m[3 * R + 5] = 0.5;
  m[2 * R + 4] = 0.25;
  d = decode(m, 1, R, R);
  CHECK(d[0].point.x == (4 + 0.75) / R);
  CHECK(d[0].point.y == (3 + 0.25) / R);
  m[3 * R + 3] = 0.5;  // equal neighbours
  d = decode(m, 1, R, R);
  CHECK(d[0].point.x == (4 + 0.5) / R);
  m[3 * R + 5] = 1.0;  // plateau
  d = decode(m, 1, R, R);
  CHECK(d[0].point.x == (4 + 0.5) / R);
  std::vector<double> flat(R * R, 0.3);
  d = decode(flat, 1, R, R);
  CHECK(d[0].flagged);
  CHECK(d[0].point.x == 0.5);
  CHECK_THROWS_AS(decode(flat, 2, R, R), TrainError);
}

TEST_CASE("render then decode lands within one pixel") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int R : {8, 16, 64}) {
    for (int t = 0; t < 40; ++t) {
      const Landmark p{u(rng), u(rng), true};
      const auto d = decode(render_heatmaps({p}, R, 1.0), 1, R, R);
      CHECK(std::abs(d[0].point.x - p.x) * R <= 1.0);
      CHECK(std::abs(d[0].point.y - p.y) * R <= 1.0);
    }
  }
}

TEST_CASE("soft-argmax gradient matches finite differences") {
  const int K = 2, H = 5, W = 6;
  auto maps = dunet::test::randn(K * H * W, 3, 2.0);
  const auto dc = dunet::test::randn(2 * K, 4);
  auto f = [&] {
    const auto p = soft_argmax(maps, K, H, W);
    double s = 0;
    for (int k = 0; k < K; ++k) s += dc[2 * k] * p[k].x + dc[2 * k + 1] * p[k].y;
    return s;
  };
  const auto num = dunet::test::numeric_grad(maps, f);
  std::vector<double> an(maps.size(), 0.0);
  soft_argmax_backward(maps, K, H, W, dc, an);
  CHECK(dunet::test::rel_err(an, num) < 1e-7);
}

TEST_CASE("losses have closed forms and sum over heads") {
  auto net = tiny_net(2, 2, 1);
  const auto data = generate(1, 2, net.num_landmarks, net.image_resolution());
  const auto targets = make_targets(data.samples, net.input_resolution, net.heatmap_sigma);
  Tensor zero(targets.heatmaps.shape4(), 0.0);
  double sq = 0;
  for (double v : targets.heatmaps.values()) sq += v * v;
  CHECK(head_loss(zero, targets, Supervision::detection) ==
        doctest::Approx(sq / static_cast<double>(zero.size())));
  CHECK(head_loss(targets.heatmaps, targets, Supervision::detection) == 0.0);

  // a uniform map soft-argmaxes to the image centre
  double reg = 0;
  for (const auto& s : targets.coords)
    for (const auto& p : s) reg += (p.x - 0.5) * (p.x - 0.5) + (p.y - 0.5) * (p.y - 0.5);
  reg /= 2.0 * 2 * net.num_landmarks;
  CHECK(head_loss(zero, targets, Supervision::regression) == doctest::Approx(reg));

  Tensor g;
  auto h = Tensor(targets.heatmaps.shape4(), 0.0);
  auto hv = dunet::test::randn(h.size(), 9);
  std::copy(hv.begin(), hv.end(), h.values().begin());
  for (auto sup : {Supervision::detection, Supervision::regression}) {
    head_loss(h, targets, sup, &g);
    std::vector<double> x(hv);
    auto f = [&] {
      std::copy(x.begin(), x.end(), h.values().begin());
      return head_loss(h, targets, sup);
    };
    const auto num = dunet::test::numeric_grad(x, f);
    const auto an = std::as_const(g).values();
    CHECK(dunet::test::rel_err(std::vector<double>(an.begin(), an.end()), num) < 1e-6);
    std::copy(hv.begin(), hv.end(), h.values().begin());
  }

  const std::vector<Tensor> heads{zero, targets.heatmaps};
  const auto l = loss(heads, targets, net);
  CHECK(l.total == l.per_head[0] + l.per_head[1]);
  CHECK(l.per_head[1] == 0.0);
  CHECK_THROWS_AS(loss(std::vector<Tensor>{zero}, targets, net), TrainError);
  net.iterative = true;
  net.pass2 = Supervision::regression;
  CHECK(head_supervision(net, 1) == Supervision::detection);
  CHECK(head_supervision(net, 2) == Supervision::regression);
  CHECK_THROWS_AS(loss(heads, targets, net), TrainError);
}

TEST_CASE("learning-rate schedules") {
  const auto pose = schedule_table(Schedule::pose, 2.5e-4, 1.0);
  REQUIRE(pose.size() == 2);
  CHECK(pose[1] == std::pair<int, double>{100, 5e-5});
  CHECK(learning_rate(Schedule::pose, 2.5e-4, 1.0, 99) == 2.5e-4);
  CHECK(learning_rate(Schedule::pose, 2.5e-4, 1.0, 100) == 5e-5);
  const auto face = schedule_table(Schedule::face, 2.5e-4, 0.1);
  REQUIRE(face.size() == 4);
  CHECK(face[1].first == 3);
  CHECK(face[2].first == 6);
  CHECK(face[3].first == 9);
  CHECK(face[3].second == 2.5e-4 / 20);
  CHECK(schedule_table(Schedule::face, 1.0, 0.001)[1].first == 1);
  CHECK(learning_rate(Schedule::constant, 0.1, 1.0, 1000) == 0.1);
  CHECK_THROWS_AS(schedule_table(Schedule::pose, 0.0, 1.0), TrainError);
}

TEST_CASE("rmsprop update") {
  std::vector<Tensor> p{Tensor(std::vector<int>{2}, 1.0)};
  p[0].grad()[0] = 0.5;
  p[0].grad()[1] = -2.0;
  RMSprop opt;
  opt.step(p, 0.01);
  CHECK(p[0].values()[0] == doctest::Approx(1 - 0.01 * 0.5 / (std::sqrt(0.01 * 0.25) + 1e-8)));
  CHECK(p[0].values()[1] == doctest::Approx(1 + 0.01 * 2.0 / (std::sqrt(0.01 * 4.0) + 1e-8)));
  CHECK(opt.state()[0][1] == doctest::Approx(0.04));
}

TEST_CASE("training is deterministic for a seed") {
  const auto c = tiny_experiment(tiny_net(2, 2, 1));
  const auto [tr, va] = synth_splits(c);
  Trainer a(c), b(c);
  const auto ra = a.train(tr, &va);
  const auto rb = b.train(tr, &va);
  CHECK(ra.step_losses == rb.step_losses);
  CHECK(format_csv(log_table(ra)) == format_csv(log_table(rb)));
  for (std::size_t i = 0; i < a.network().params().size(); ++i) {
    const auto x = std::as_const(a.network().params()[i]).values();
    const auto y = std::as_const(b.network().params()[i]).values();
    CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }
  auto d = c;
  d.train.seed = 2;
  Trainer other(d);
  CHECK(other.train(synth_splits(d).first).step_losses != ra.step_losses);
}

TEST_CASE("naive and efficient training agree bit for bit") {
  auto c = tiny_experiment(tiny_net(3, 2, 2));
  c.train.epochs = 1;
  const auto [tr, va] = synth_splits(c);
  Trainer a(c, ExecMode::naive), b(c, ExecMode::efficient);
  CHECK(a.train(tr).step_losses == b.train(tr).step_losses);
}

TEST_CASE("single batch loss falls") {
  auto c = tiny_experiment(tiny_net(2, 2, 1));
  c.train.augment = false;
  const auto data = generate(3, 4, c.net.num_landmarks, c.net.image_resolution());
  Trainer t(c);
  const double first = t.step(data.samples, 1e-3);
  double last = first;
  for (int i = 0; i < 60; ++i) last = t.step(data.samples, 1e-3);
  CHECK(last < first / 2);
}

TEST_CASE("binary-weight training stays finite") {
  auto c = tiny_experiment(tiny_net(2, 2, 1));
  c.net.quant = {8, 1, 8, quant::WeightMode::binary, true};
  c.train.augment = false;
  const auto data = generate(4, 4, c.net.num_landmarks, c.net.image_resolution());
  Trainer t(c);
  for (int i = 0; i < 30; ++i) CHECK(std::isfinite(t.step(data.samples, 1e-3)));
}

TEST_CASE("iterative regression training and evaluation") {
  auto c = tiny_experiment(tiny_net(2, 2, 1));
  c.net.iterative = true;
  c.net.pass2 = Supervision::regression;
  c.train.epochs = 1;
  const auto [tr, va] = synth_splits(c);
  Trainer t(c, ExecMode::efficient);
  const auto r = t.train(tr, &va);
  REQUIRE(r.final_eval);
  CHECK(std::isfinite(r.final_eval->nme));
  CHECK(t.predict(va).size() == va.samples.size());
}
