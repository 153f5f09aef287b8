// Copyright 2026 The N2UQ Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "n2uq/errors.hpp"
#include "n2uq/stochastic.hpp"
#include "n2uq/tensor.hpp"

using namespace n2uq;
using Mat = Matrix<double>;

namespace {

Mat random_matrix(Index r, Index c, std::uint64_t seed) {
  CounterRng rng(seed);
  Mat m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = 2.0 * rng.uniform() - 1.0;
  return m;
}

// Central differences of a scalar function of one matrix argument.
Mat numeric_grad(const std::function<double(const Mat&)>& f, Mat x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (Index k = 0; k < x.size(); ++k) {
    const double keep = x.data()[k];
    x.data()[k] = keep + h;
    const double up = f(x);
    x.data()[k] = keep - h;
    const double down = f(x);
    x.data()[k] = keep;
    g.data()[k] = (up - down) / (2 * h);
  }
  return g;
}

double max_rel_err(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (Index k = 0; k < a.size(); ++k) {
    const double s = std::max({std::abs(a.data()[k]), std::abs(b.data()[k]), 1e-8});
    worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]) / s);
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul forward") {
  Tape<double> tape;
  Mat b(2, 2);
  b << 1, 2, 3, 4;
  auto y = matmul(tape.leaf(Mat::Identity(2, 2)), tape.leaf(b));
  CHECK(y.value() == b);

  Mat p(2, 2), q(2, 2), want(2, 2);
  p << 1, 0, 0, 0;
  q << 5, 6, 7, 8;
  want << 5, 6, 0, 0;
  CHECK(matmul(tape.leaf(p), tape.leaf(q)).value() == want);

  CHECK_THROWS_AS(matmul(tape.leaf(Mat::Ones(2, 3)), tape.leaf(Mat::Ones(2, 3))), DimensionError);
}

TEST_CASE("matmul gradient matches central differences") {
  const Mat a0 = random_matrix(4, 4, 1), b0 = random_matrix(4, 4, 2), w = random_matrix(4, 4, 3);
  // loss = sum(w .* (A B))
  Tape<double> tape;
  auto a = tape.leaf(a0, true), b = tape.leaf(b0, true);
  tape.backward(sum(cwise_product(matmul(a, b), tape.leaf(w))));
  const Mat ga = numeric_grad([&](const Mat& x) { return (x * b0).cwiseProduct(w).sum(); }, a0);
  const Mat gb = numeric_grad([&](const Mat& x) { return (a0 * x).cwiseProduct(w).sum(); }, b0);
  CHECK(max_rel_err(a.grad(), ga) < 1e-6);
  CHECK(max_rel_err(b.grad(), gb) < 1e-6);
}

TEST_CASE("backward on simple reductions") {
  Tape<double> tape;
  Mat v(1, 3);
  v << 1, 2, 3;
  auto x = tape.leaf(v, true);
  tape.backward(sum(x));
  CHECK(x.grad() == Mat::Ones(1, 3));

  Tape<double> t2;
  auto x2 = t2.leaf(v, true);
  t2.backward(sum(cwise_product(x2, x2)));
  Mat want(1, 3);
  want << 2, 4, 6;
  CHECK(x2.grad() == want);
}

TEST_CASE("fan-out gradients are summed") {
  const Mat x0 = random_matrix(3, 2, 9);
  Tape<double> tape;
  auto x = tape.leaf(x0, true);
  // y = sum(x^2) + sum(3x) along two branches of the same leaf
  auto y = sum(square(x)) + sum(scale(x, 3.0));
  tape.backward(y);
  const Mat fd = numeric_grad([](const Mat& m) { return m.array().square().sum() + 3.0 * m.sum(); }, x0);
  CHECK(max_rel_err(x.grad(), fd) < 1e-8);
}

TEST_CASE("backward runs each node once") {
  Tape<double> tape;
  auto x = tape.leaf(random_matrix(2, 2, 4), true);
  auto h = square(x);
  auto y = sum(h + h);
  tape.backward(y);
  CHECK(tape.backward_calls(h) == 1);
  CHECK(tape.backward_calls(y) == 1);
}

TEST_CASE("backward contract errors") {
  Tape<double> tape;
  auto x = tape.leaf(Mat::Ones(2, 2), true);
  CHECK_THROWS_AS(tape.backward(square(x)), ContractError);  // non-scalar loss

  Tape<double> bad;
  auto u = bad.leaf(Mat::Ones(1, 2), true);
  auto v = bad.record("bad", Mat::Ones(1, 1), {u}, [](const Mat&) { return std::vector<Mat>{Mat::Ones(2, 2)}; });
  CHECK_THROWS_AS(bad.backward(v), DimensionError);  // gradient shape differs from input
  CHECK_THROWS_AS(bad.record("nobackward", Mat::Ones(1, 1), {u}, {}), ContractError);
}

TEST_CASE("composite ops match central differences") {
  const Mat x0 = random_matrix(2, 6, 11), v0 = random_matrix(1, 3, 12), w = random_matrix(2, 6, 13);
  Tape<double> tape;
  auto x = tape.leaf(x0, true), v = tape.leaf(v0, true);
  auto y = mean(cwise_product(mul_channelwise(add_channelwise(x, v, 2), v, 2), tape.leaf(w)));
  tape.backward(y);
  auto f = [&](const Mat& xx, const Mat& vv) {
    double s = 0;
    for (Index r = 0; r < 2; ++r) {
      for (Index c = 0; c < 6; ++c) s += (xx(r, c) + vv(0, c / 2)) * vv(0, c / 2) * w(r, c);
    }
    return s / 12.0;
  };
  CHECK(max_rel_err(x.grad(), numeric_grad([&](const Mat& m) { return f(m, v0); }, x0)) < 1e-7);
  CHECK(max_rel_err(v.grad(), numeric_grad([&](const Mat& m) { return f(x0, m); }, v0)) < 1e-7);
}

TEST_CASE("softmax cross entropy gradient") {
  const Mat z0 = random_matrix(3, 4, 21);
  const std::vector<int> labels{0, 3, 1};
  Tape<double> tape;
  auto z = tape.leaf(z0, true);
  tape.backward(softmax_cross_entropy(z, labels));
  auto f = [&](const Mat& m) {
    double s = 0;
    for (Index r = 0; r < m.rows(); ++r) {
      const double mx = m.row(r).maxCoeff();
      s += std::log((m.row(r).array() - mx).exp().sum()) + mx - m(r, labels[static_cast<std::size_t>(r)]);
    }
    return s / static_cast<double>(m.rows());
  };
  CHECK(max_rel_err(z.grad(), numeric_grad(f, z0)) < 1e-7);
  const int bad_label[] = {0, 4, 1};
  CHECK_THROWS(softmax_cross_entropy(tape.leaf(z0), std::span<const int>(bad_label)));
}

TEST_CASE("im2col lowering gradient") {
  const Index c = 2, h = 3, wd = 4;
  const Mat x0 = random_matrix(2, c * h * wd, 31);
  const Mat w = random_matrix(2 * h * wd, c * 9, 32);
  Tape<double> tape;
  auto x = tape.leaf(x0, true);
  auto cols = im2col3x3(x, c, h, wd);
  CHECK(cols.rows() == 2 * h * wd);
  CHECK(cols.cols() == c * 9);
  tape.backward(sum(cwise_product(cols, tape.leaf(w))));
  auto f = [&](const Mat& m) { return im2col3x3_values(m, c, h, wd).cwiseProduct(w).sum(); };
  CHECK(max_rel_err(x.grad(), numeric_grad(f, x0)) < 1e-7);
}

TEST_CASE("custom node uses the supplied backward verbatim") {
  SUBCASE("round with identity backward") {
    Tape<double> tape;
    Mat v(1, 3);
    v << 0.2, 1.7, -2.6;
    auto x = tape.leaf(v, true);
    auto y = custom_node<double>([](const auto& in) { return Mat(in[0]->array().round()); },
                                 [](const Mat& g, const auto&, const Mat&) { return std::vector<Mat>{g}; }, {x});
    Mat want(1, 3);
    want << 0, 2, -3;
    CHECK(y.value() == want);
    CHECK(tape.is_custom_gradient(y));
    tape.backward(sum(scale(y, 2.0)));
    CHECK(x.grad() == Mat::Constant(1, 3, 2.0));
  }
  SUBCASE("sign with clipped-window backward") {
    Tape<double> tape;
    Mat v(1, 4);
    v << -1.5, -0.5, 0.3, 2.0;
    auto x = tape.leaf(v, true);
    auto y = custom_node<double>(
        [](const auto& in) { return Mat(in[0]->unaryExpr([](double t) { return t >= 0 ? 1.0 : -1.0; })); },
        [](const Mat& g, const auto& in, const Mat&) {
          return std::vector<Mat>{
              g.cwiseProduct(in[0]->unaryExpr([](double t) { return std::abs(t) < 1.0 ? 1.0 : 0.0; }))};
        },
        {x});
    tape.backward(sum(y));
    Mat want(1, 4);
    want << 0, 1, 1, 0;
    CHECK(x.grad() == want);
  }
  SUBCASE("contract errors") {
    Tape<double> tape;
    CHECK_THROWS_AS(custom_node<double>({}, {}, {tape.leaf(Mat::Ones(1, 1))}), ContractError);
    CHECK_THROWS_AS(custom_node<double>([](const auto&) { return Mat::Ones(1, 1); }, {}, {}), ContractError);
  }
}

TEST_CASE("reshape and transpose round-trip gradients") {
  const Mat x0 = random_matrix(2, 3, 41), w = random_matrix(6, 1, 42);
  Tape<double> tape;
  auto x = tape.leaf(x0, true);
  tape.backward(sum(cwise_product(reshape(transpose(x), 6, 1), tape.leaf(w))));
  auto f = [&](const Mat& m) {
    Mat t = m.transpose();
    return Eigen::Map<const Mat>(t.data(), 6, 1).cwiseProduct(w).sum();
  };
  CHECK(max_rel_err(x.grad(), numeric_grad(f, x0)) < 1e-8);
  CHECK_THROWS_AS(reshape(x, 4, 2), DimensionError);
}
