#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dunet/engine.hpp"
#include "dunet/graph.hpp"
#include "dunet/quant.hpp"
#include "support.hpp"

using namespace dunet;
using namespace dunet::quant;

namespace {

// Nearest point of the sigma grid, ties away from zero, then clip.
double grid_oracle(double x, int k) {
  const double s = std::pow(2.0, 1 - k);
  double best = 0.0, best_d = INFINITY;
  for (int m = -(1 << (k + 2)); m <= (1 << (k + 2)); ++m) {
    const double g = m * s;
    const double d = std::abs(x - g);
    if (d < best_d || (d == best_d && std::abs(g) > std::abs(best))) {
      best = g;
      best_d = d;
    }
  }
  return std::min(std::max(best, -1.0 + s), 1.0 - s);
}

}  // namespace

TEST_CASE("binarize") {
  CHECK(binarize(0.5) == 1.0);
  CHECK(binarize(-2.0) == -1.0);
  CHECK(binarize(0.0) == 1.0);
  CHECK(binarize(-0.0) == 1.0);
  const auto x = dunet::test::randn(200, 5, 2.0);
  const auto b = binarize(x);
  CHECK(binarize(b) == b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK((b[i] == 1.0 || b[i] == -1.0));
    if (x[i] != 0) CHECK(binarize(-x[i]) == -b[i]);
  }
  CHECK_THROWS_AS(binarize(NAN), QuantError);
}

TEST_CASE("ternarize") {
  const std::vector<double> w{0.4, -0.8, 0.2, 1.0};
  const auto t = ternarize(w);
  CHECK(t.delta == doctest::Approx(0.42));
  CHECK(t.values == std::vector<double>{0, -1, 0, 1});

  const auto z = ternarize(std::vector<double>(5, 0.0));
  CHECK(z.delta == 0.0);
  CHECK(z.values == std::vector<double>(5, 0.0));

  const auto r = dunet::test::randn(300, 6);
  const auto base = ternarize(r);
  for (double c : {0.25, 3.0, 17.0}) {
    std::vector<double> s(r.size());
    std::transform(r.begin(), r.end(), s.begin(), [c](double v) { return c * v; });
    const auto scaled = ternarize(s);
    CHECK(scaled.delta == doctest::Approx(c * base.delta));
    CHECK(scaled.values == base.values);
  }
  for (double v : base.values) CHECK((v == -1 || v == 0 || v == 1));
  CHECK_THROWS_AS(ternarize(std::vector<double>{}), QuantError);
}

TEST_CASE("sigma") {
  CHECK(sigma(1) == 1.0);
  CHECK(sigma(2) == 0.5);
  CHECK(sigma(8) == 0.0078125);
  CHECK_THROWS_AS(sigma(0), QuantError);
}

TEST_CASE("quantize_linear examples") {
  for (int k = 1; k <= 16; ++k) CHECK(quantize_linear(0.0, k) == 0.0);
  CHECK(quantize_linear(0.3, 2) == 0.5);
  CHECK(quantize_linear(0.99, 8) == 0.9921875);
  CHECK(quantize_linear(-0.99, 8) == -0.9921875);
  CHECK(quantize_linear(0.25, 2) == 0.5);  // half rounds away from zero
  CHECK(quantize_linear(-0.25, 2) == -0.5);
  CHECK_THROWS_AS(quantize_linear(INFINITY, 4), QuantError);
}

TEST_CASE("quantize_linear matches the nearest-grid oracle for k <= 4") {
  for (int k = 1; k <= 4; ++k) {
    const int steps = 40000;
    for (int i = 0; i <= steps; ++i) {
      const double x = -2.0 + 4.0 * i / steps;
      REQUIRE(quantize_linear(x, k) == grid_oracle(x, k));
    }
  }
}

TEST_CASE("quantize_linear properties") {
  const auto x = dunet::test::randn(2000, 7, 1.5);
  for (int k : {1, 2, 3, 4, 6, 8, 12}) {
    const double s = sigma(k);
    double prev = -INFINITY;
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    for (double v : sorted) {
      const double q = quantize_linear(v, k);
      CHECK(q >= prev);
      prev = q;
      CHECK(quantize_linear(q, k) == q);
      CHECK(q >= -1.0 + s);
      CHECK(q <= 1.0 - s);
      CHECK(std::fmod(q / s, 1.0) == 0.0);
      CHECK(quantize_linear(-v, k) == -q);
    }
  }
}

TEST_CASE("scale_alpha") {
  CHECK(scale_alpha(std::vector<double>{1, -1, 1, -1}) == 1.0);
  CHECK(scale_alpha(std::vector<double>{0.5, -0.5}) == 0.5);
  CHECK(quantize_weights(std::vector<double>{0.5, -0.5}, WeightMode::binary_alpha) ==
        std::vector<double>{0.5, -0.5});
  const auto w = dunet::test::randn(50, 8);
  std::vector<double> cw(w.size());
  std::transform(w.begin(), w.end(), cw.begin(), [](double v) { return 2.5 * v; });
  CHECK(scale_alpha(cw) == doctest::Approx(2.5 * scale_alpha(w)));
  CHECK_THROWS_AS(scale_alpha(std::vector<double>{}), QuantError);
}

TEST_CASE("quantize_gradient") {
  CHECK(quantize_gradient(std::vector<double>(4, 0.0), 8) == std::vector<double>(4, 0.0));
  std::vector<double> unit{1.0, -0.3, 0.12, 0.5};
  CHECK(quantize_gradient(unit, 3) == quantize_linear(unit, 3));
  const auto g = dunet::test::randn(500, 9, 0.01);
  double s = 0;
  for (double v : g) s = std::max(s, std::abs(v));
  for (int k : {2, 4, 8}) {
    const auto q = quantize_gradient(g, k);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(g[i]) <= s * (1 - sigma(k))) {
        CHECK(std::abs(q[i] - g[i]) <= s * sigma(k) / 2 * (1 + 1e-12));
      }
    }
  }
}

TEST_CASE("straight-through window") {
  CHECK(ste_pass(0.0));
  CHECK(ste_pass(1.0));
  CHECK(ste_pass(-1.0));
  CHECK_FALSE(ste_pass(1.0001));
  CHECK_FALSE(ste_pass(-3.0));
}

TEST_CASE("scheme validation") {
  QuantScheme s;
  CHECK(s.is_full());
  CHECK_NOTHROW(s.validate());
  s = {8, 1, 8, WeightMode::binary, true};
  CHECK_NOTHROW(s.validate());
  s.bit_g = 6;
  CHECK_THROWS_AS(s.validate(), QuantError);
  s = {32, 2, 32, WeightMode::binary, true};
  CHECK_THROWS_AS(s.validate(), QuantError);
  s = {32, 1, 32, WeightMode::ternary, true};
  CHECK_THROWS_AS(s.validate(), QuantError);
  s = {0, 32, 32, WeightMode::full, true};
  CHECK_THROWS_AS(s.validate(), QuantError);
  CHECK(weight_mode_from_string("binary-alpha") == WeightMode::binary_alpha);
  CHECK_THROWS_AS(weight_mode_from_string("quaternary"), QuantError);
}

TEST_CASE("attach with a full scheme is the identity") {
  const auto c = dunet::test::tiny_net();
  const auto plain = compile(c);
  const auto same = attach(plain, QuantScheme{});
  CHECK(dump_graph(same) == dump_graph(plain));
  CHECK(same.ops.size() == plain.ops.size());
  Network a(plain, 3), b(same, 3);
  Tensor x(Shape4{2, 3, 32, 32});
  x.storage() = dunet::test::randn(x.size(), 4);
  const auto ya = a.forward(x, ExecMode::naive);
  const auto yb = b.forward(x, ExecMode::naive);
  REQUIRE(ya.size() == yb.size());
  for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("attached weight quantizers") {
  auto c = dunet::test::tiny_net();
  for (auto mode : {WeightMode::binary, WeightMode::binary_alpha, WeightMode::ternary}) {
    QuantScheme s{32, mode == WeightMode::ternary ? 2 : 1, 32, mode, true};
    c.quant = s;
    const auto g = build_graph(c);
    Network net(g, 11);
    int exempt = 0, quantized = 0;
    for (std::size_t i = 0; i < g.ops.size(); ++i) {
      const auto& op = g.ops[i];
      if (op.kind != OpKind::conv2d) continue;
      const auto kind = g.blocks[op.block].kind;
      if (kind == BlockKind::stem || kind == BlockKind::head) {
        CHECK(op.weight_quant == WeightMode::full);
        ++exempt;
        continue;
      }
      ++quantized;
      REQUIRE(op.weight_quant == mode);
      const auto w = net.effective_weights(static_cast<int>(i));
      const double a = scale_alpha(net.params()[op.params[0]].values());
      std::set<double> levels(w.begin(), w.end());
      for (double v : levels) {
        if (mode == WeightMode::binary) CHECK((v == 1.0 || v == -1.0));
        if (mode == WeightMode::binary_alpha) CHECK((v == a || v == -a));
        if (mode == WeightMode::ternary) CHECK((v == 1.0 || v == 0.0 || v == -1.0));
      }
    }
    CHECK(exempt == 1 + c.num_unets);
    CHECK(quantized > 0);
  }
  c.quant = {32, 1, 32, WeightMode::binary, false};
  const auto all = build_graph(c);
  for (const auto& op : all.ops) {
    if (op.kind == OpKind::conv2d) CHECK(op.weight_quant == WeightMode::binary);
  }
}

TEST_CASE("dataflow quantizers sit after every block output") {
  auto c = dunet::test::tiny_net();
  c.quant = {8, 1, 8, WeightMode::binary, true};
  const auto g = build_graph(c);
  int q = 0, bottlenecks = 0;
  for (const auto& op : g.ops) {
    if (op.kind == OpKind::quantize) {
      ++q;
      CHECK(op.act_bits == 8);
      CHECK(op.grad_bits == 8);
    }
  }
  for (const auto& b : g.blocks) {
    if (b.kind == BlockKind::top_down || b.kind == BlockKind::bottom_up) ++bottlenecks;
  }
  CHECK(q == bottlenecks);
  CHECK_THROWS_AS(attach(g, QuantScheme{8, 1, 6, WeightMode::binary, true}), QuantError);
}
