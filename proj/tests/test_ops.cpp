#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dunet/ops.hpp"
#include "dunet/tensor.hpp"
#include "support.hpp"

using namespace dunet;
using dunet::test::dot;
using dunet::test::numeric_grad;
using dunet::test::randn;
using dunet::test::rel_err;

TEST_CASE("tensor shape and gradient slot") {
  Tensor t(std::vector<int>{2, 3, 4, 5}, 1.5);
  CHECK(t.size() == 120);
  CHECK(t.shape4() == Shape4{2, 3, 4, 5});
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == 120);
  CHECK(std::all_of(t.grad().begin(), t.grad().end(), [](double g) { return g == 0; }));
  CHECK_THROWS_AS(Tensor(std::vector<int>{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(std::vector<int>{2, 2}, std::vector<double>(3)), ShapeError);
  t[7] = NAN;
  CHECK_THROWS_AS(t.check_finite("t"), EngineError);
}

TEST_CASE("mix_seed gives distinct streams") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}

TEST_CASE("conv2d output extent") {
  ops::Conv2dSpec s{3, 8, 7, 2, 3, false};
  CHECK(ops::conv2d_output_shape({1, 3, 64, 64}, s) == Shape4{1, 8, 32, 32});
  ops::Conv2dSpec t{2, 2, 3, 1, 0, false};
  CHECK(ops::conv2d_output_shape({1, 2, 5, 7}, t) == Shape4{1, 2, 3, 5});
  CHECK_THROWS_AS(ops::conv2d_output_shape({1, 3, 5, 5}, t), ShapeError);
}

TEST_CASE("conv2d against a direct loop") {
  const Shape4 xs{2, 3, 6, 5};
  for (auto spec : {ops::Conv2dSpec{3, 4, 3, 1, 1, true}, ops::Conv2dSpec{3, 4, 3, 2, 1, false},
                    ops::Conv2dSpec{3, 4, 1, 1, 0, true}, ops::Conv2dSpec{3, 2, 7, 2, 3, false}}) {
    const auto x = randn(xs.size(), 1);
    const auto w = randn(spec.out_channels * 3 * spec.kernel * spec.kernel, 2);
    std::vector<double> b = spec.bias ? randn(spec.out_channels, 3) : std::vector<double>{};
    const auto ys = ops::conv2d_output_shape(xs, spec);
    std::vector<double> y(ys.size());
    ops::conv2d_forward(x, xs, w, b, spec, 0.5, y);
    const int k = spec.kernel;
    for (int n = 0; n < ys.n; ++n)
      for (int o = 0; o < ys.c; ++o)
        for (int i = 0; i < ys.h; ++i)
          for (int j = 0; j < ys.w; ++j) {
            double acc = 0;
            for (int c = 0; c < 3; ++c)
              for (int u = 0; u < k; ++u)
                for (int v = 0; v < k; ++v) {
                  const int yi = i * spec.stride - spec.pad + u, xj = j * spec.stride - spec.pad + v;
                  if (yi < 0 || xj < 0 || yi >= xs.h || xj >= xs.w) continue;
                  acc += x[((n * 3 + c) * xs.h + yi) * xs.w + xj] * w[((o * 3 + c) * k + u) * k + v];
                }
            acc *= 0.5;
            if (spec.bias) acc += b[o];
            CHECK(y[((n * ys.c + o) * ys.h + i) * ys.w + j] == doctest::Approx(acc).epsilon(1e-12));
          }
  }
}

TEST_CASE("conv2d gradients match finite differences on a 5x5 input") {
  const Shape4 xs{2, 2, 5, 5};
  for (auto spec : {ops::Conv2dSpec{2, 3, 3, 1, 1, true}, ops::Conv2dSpec{2, 3, 3, 2, 1, false},
                    ops::Conv2dSpec{2, 3, 1, 1, 0, true}}) {
    auto x = randn(xs.size(), 11);
    auto w = randn(3 * 2 * spec.kernel * spec.kernel, 12);
    auto b = randn(spec.bias ? 3 : 0, 13);
    const auto ys = ops::conv2d_output_shape(xs, spec);
    const auto r = randn(ys.size(), 14);
    const double scale = 0.7;
    auto f = [&] {
      std::vector<double> y(ys.size());
      ops::conv2d_forward(x, xs, w, b, spec, scale, y);
      return dot(r, y);
    };
    std::vector<double> dx(x.size()), dw(w.size()), db(b.size());
    ops::conv2d_backward(x, xs, w, r, spec, scale, dx, dw, db);
    CHECK(rel_err(dx, numeric_grad(x, f)) < 1e-4);
    CHECK(rel_err(dw, numeric_grad(w, f)) < 1e-4);
    if (spec.bias) CHECK(rel_err(db, numeric_grad(b, f)) < 1e-4);
  }
}

TEST_CASE("batchnorm normalizes and differentiates") {
  const Shape4 xs{4, 3, 3, 2};
  auto x = randn(xs.size(), 21, 3.0);
  for (auto& v : x) v += 5.0;
  auto gamma = randn(3, 22);
  auto beta = randn(3, 23);
  std::vector<double> ones(3, 1.0), zeros(3, 0.0), y(xs.size());
  ops::batchnorm_forward_train(x, xs, ones, zeros, y);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    int cnt = 0;
    for (int n = 0; n < xs.n; ++n)
      for (std::size_t p = 0; p < xs.plane(); ++p) {
        m += y[(n * 3 + c) * xs.plane() + p];
        ++cnt;
      }
    m /= cnt;
    for (int n = 0; n < xs.n; ++n)
      for (std::size_t p = 0; p < xs.plane(); ++p) {
        const double d = y[(n * 3 + c) * xs.plane() + p] - m;
        v += d * d;
      }
    v /= cnt;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-5);
  }

  const auto r = randn(xs.size(), 24);
  auto f = [&] {
    std::vector<double> out(xs.size());
    ops::batchnorm_forward_train(x, xs, gamma, beta, out);
    return dot(r, out);
  };
  const auto st = ops::batchnorm_forward_train(x, xs, gamma, beta, y);
  std::vector<double> dx(x.size()), dg(3), db(3);
  ops::batchnorm_backward(x, xs, gamma, st, r, dx, dg, db);
  CHECK(rel_err(dx, numeric_grad(x, f, 1e-5)) < 1e-4);
  CHECK(rel_err(dg, numeric_grad(gamma, f)) < 1e-4);
  CHECK(rel_err(db, numeric_grad(beta, f)) < 1e-4);

  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  ops::batchnorm_update_running(xs, st, rm, rv);
  for (int c = 0; c < 3; ++c) CHECK(rm[c] == doctest::Approx(0.1 * st.mean[c]));
}

TEST_CASE("relu, pooling and upsampling gradients") {
  const Shape4 xs{2, 2, 4, 6};
  auto x = randn(xs.size(), 31);
  {
    const auto r = randn(xs.size(), 32);
    auto f = [&] {
      std::vector<double> y(x.size());
      ops::relu_forward(x, y);
      return dot(r, y);
    };
    std::vector<double> y(x.size()), dx(x.size());
    ops::relu_forward(x, y);
    ops::relu_backward(y, r, dx);
    CHECK(rel_err(dx, numeric_grad(x, f)) < 1e-4);
  }
  {
    const Shape4 ys{2, 2, 2, 3};
    const auto r = randn(ys.size(), 33);
    auto f = [&] {
      std::vector<double> y(ys.size());
      ops::maxpool2_forward(x, xs, y);
      return dot(r, y);
    };
    std::vector<double> y(ys.size()), dx(x.size());
    const auto arg = ops::maxpool2_forward(x, xs, y);
    ops::maxpool2_backward(arg, r, dx);
    CHECK(rel_err(dx, numeric_grad(x, f)) < 1e-4);
  }
  {
    const Shape4 ys{2, 2, 8, 12};
    const auto r = randn(ys.size(), 34);
    auto f = [&] {
      std::vector<double> y(ys.size());
      ops::upsample2_forward(x, xs, y);
      return dot(r, y);
    };
    std::vector<double> dx(x.size());
    ops::upsample2_backward(r, xs, dx);
    CHECK(rel_err(dx, numeric_grad(x, f)) < 1e-4);
  }
}

TEST_CASE("maxpool ties route to the first element") {
  const Shape4 xs{1, 1, 2, 2};
  std::vector<double> x{3, 3, 3, 3}, y(1), dx(4);
  const auto arg = ops::maxpool2_forward(x, xs, y);
  ops::maxpool2_backward(arg, std::vector<double>{1.0}, dx);
  CHECK(dx == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("concat adjoint is exact slicing") {
  const std::vector<Shape4> shapes{{2, 1, 3, 3}, {2, 4, 3, 3}, {2, 2, 3, 3}};
  std::vector<std::vector<double>> parts;
  for (int i = 0; i < 3; ++i) parts.push_back(randn(shapes[i].size(), 40 + i));
  std::vector<std::span<const double>> views(parts.begin(), parts.end());
  std::vector<double> y(2 * 7 * 9);
  ops::concat_forward(views, shapes, y);
  CHECK(y[9] == parts[1][0]);
  CHECK(y[7 * 9] == parts[0][9]);

  const auto dy = randn(y.size(), 50);
  std::vector<std::vector<double>> dp;
  for (const auto& s : shapes) dp.emplace_back(s.size(), 0.0);
  std::vector<std::span<double>> dviews(dp.begin(), dp.end());
  ops::concat_backward(dy, shapes, dviews);
  std::vector<std::span<const double>> back(dp.begin(), dp.end());
  std::vector<double> again(y.size());
  ops::concat_forward(back, shapes, again);
  CHECK(again == dy);

  const std::vector<Shape4> bad{{2, 1, 3, 3}, {2, 1, 2, 3}};
  std::vector<std::span<const double>> two(parts.begin(), parts.begin() + 2);
  CHECK_THROWS_AS(ops::concat_forward(two, bad, y), ShapeError);
}
