#include <cmath>

#include "avr/error.hpp"
#include "avr/nn/layers.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace avr;
using namespace avr::nn;

namespace {

double weighted_sum(const Tensor64& out, const Tensor64& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

// Checks d(sum(w * f(x)))/dx against central differences for every element.
void check_gradient(const std::function<double()>& loss, Tensor64& x, const Tensor64& analytic, double tol = 1e-4) {
  REQUIRE(analytic.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double numeric = oracle::central_difference(loss, x, i);
    CHECK(oracle::relative_error(analytic[i], numeric) < tol);
  }
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("conv1d examples") {
  const Tensor64 input({1, 4}, {1, 2, 3, 4});
  const Tensor64 kernel({1, 1, 3}, {1, 0, -1});
  const Tensor64 out = conv1d_forward(input, kernel, Tensor64({1}));
  CHECK(out.shape() == Shape{1, 2});
  CHECK(out[0] == -2.0);
  CHECK(out[1] == -2.0);

  SplitMix64 rng(1);
  const Tensor64 row = oracle::random_tensor({1, 9}, rng);
  const Tensor64 interior = conv1d_forward(row, Tensor64({1, 1, 3}, {0, 1, 0}), Tensor64({1}));
  for (std::size_t t = 0; t < 7; ++t) CHECK(interior[t] == row[t + 1]);

  CHECK_THROWS_AS(conv1d_forward(Tensor64({1, 2}), kernel, Tensor64({1})), std::invalid_argument);
  CHECK_THROWS_AS(conv1d_forward(Tensor64({2, 5}), kernel, Tensor64({1})), std::invalid_argument);
}

TEST_CASE("conv1d matches the naive oracle") {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + rng.below(4), o = 1 + rng.below(5), k = 1 + rng.below(4);
    const std::size_t l = k + rng.below(12);
    const Tensor64 x = oracle::random_tensor({c, l}, rng);
    const Tensor64 w = oracle::random_tensor({o, c, k}, rng);
    const Tensor64 b = oracle::random_tensor({o}, rng);
    const Tensor64 got = conv1d_forward(x, w, b);
    const Tensor64 want = oracle::conv1d(x, w, b);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
  }
}

TEST_CASE("conv1d backward") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 1 + rng.below(3), o = 1 + rng.below(3);
    Tensor64 x = oracle::random_tensor({c, 8}, rng);
    Tensor64 w = oracle::random_tensor({o, c, 3}, rng);
    Tensor64 b = oracle::random_tensor({o}, rng);
    const Tensor64 up = oracle::random_tensor({o, 6}, rng);
    const auto grads = conv1d_backward(x, w, up);
    auto loss = [&] { return weighted_sum(conv1d_forward(x, w, b), up); };
    check_gradient(loss, x, grads.input);
    check_gradient(loss, w, grads.kernels);
    check_gradient(loss, b, grads.bias);
    for (std::size_t oc = 0; oc < o; ++oc) {
      double s = 0.0;
      for (std::size_t t = 0; t < 6; ++t) s += up.at(oc, t);
      CHECK(grads.bias[oc] == doctest::Approx(s).epsilon(1e-12));
    }
  }
  SplitMix64 rng2(4);
  const auto zero = conv1d_backward(oracle::random_tensor({1, 8}, rng2), oracle::random_tensor({2, 1, 3}, rng2),
                                    Tensor64({2, 6}));
  for (double v : zero.input.data()) CHECK(v == 0.0);
  for (double v : zero.kernels.data()) CHECK(v == 0.0);
  for (double v : zero.bias.data()) CHECK(v == 0.0);
}

TEST_CASE("dense forward and backward") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor64 x = oracle::random_tensor({7}, rng);
    Tensor64 w = oracle::random_tensor({4, 7}, rng);
    Tensor64 b = oracle::random_tensor({4}, rng);
    const Tensor64 out = dense_forward(x, w, b);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = b[r];
      for (std::size_t c = 0; c < 7; ++c) s += w.at(r, c) * x[c];
      CHECK(out[r] == doctest::Approx(s).epsilon(1e-12));
    }
    const Tensor64 up = oracle::random_tensor({4}, rng);
    const auto grads = dense_backward(x, w, up);
    auto loss = [&] { return weighted_sum(dense_forward(x, w, b), up); };
    check_gradient(loss, x, grads.input);
    check_gradient(loss, w, grads.weight);
    check_gradient(loss, b, grads.bias);
  }
  CHECK_THROWS_AS(dense_forward(Tensor64({3}), Tensor64({2, 4}), Tensor64({2})), std::invalid_argument);
}

TEST_CASE("relu") {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor64 x = oracle::random_tensor({12}, rng);
    for (auto& v : x.storage()) {
      if (std::abs(v) < 1e-3) v = 0.5;
    }
    const Tensor64 up = oracle::random_tensor({12}, rng);
    const Tensor64 grad = relu_backward(x, up);
    check_gradient([&] { return weighted_sum(relu_forward(x), up); }, x, grad);
  }
}

TEST_CASE("softmax") {
  const Tensor64 half = softmax(Tensor64({2}, {0.0, 0.0}));
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);
  const Tensor64 p = softmax(Tensor64({2}, {std::log(3.0), 0.0}));
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-12));
  const Tensor64 big = softmax(Tensor64({2}, {1000.0, 0.0}));
  CHECK(big[0] == 1.0);
  CHECK(std::isfinite(big[1]));

  SplitMix64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    const Tensor64 z = oracle::random_tensor({n}, rng, 5.0);
    const Tensor64 got = softmax(z);
    const auto want = oracle::softmax(std::vector<double>(z.data().begin(), z.data().end()));
    double total = 0.0;
    Tensor64 shifted = z;
    const double c = rng.uniform(-50, 50);
    for (auto& v : shifted.storage()) v += c;
    const Tensor64 moved = softmax(shifted);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(got[i] - want[i]) < 1e-9);
      CHECK(got[i] > 0.0);
      CHECK(got[i] < 1.0);
      CHECK(std::abs(moved[i] - got[i]) < 1e-9);
      total += got[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("global average pooling") {
  SplitMix64 rng(8);
  Tensor64 x = oracle::random_tensor({64, 11}, rng);
  const Tensor64 pooled = global_avg_pool(x);
  REQUIRE(pooled.shape() == Shape{64});
  for (std::size_t c = 0; c < 64; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < 11; ++t) s += x.at(c, t);
    CHECK(pooled[c] == doctest::Approx(s / 11).epsilon(1e-12));
  }
  const Tensor64 up = oracle::random_tensor({64}, rng);
  check_gradient([&] { return weighted_sum(global_avg_pool(x), up); }, x, global_avg_pool_backward(up, 11));
}

TEST_CASE("dropout") {
  SplitMix64 rng(9);
  const Tensor64 x = oracle::random_tensor({50}, rng);
  const auto eval = dropout_forward(x, 0.2, Mode::eval, rng);
  CHECK(eval.output == x);

  const auto train = dropout_forward(x, 0.2, Mode::train, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK((train.mask[i] == 0.0 || train.mask[i] == doctest::Approx(1.25)));
    CHECK(train.output[i] == doctest::Approx(x[i] * train.mask[i]));
  }
  const Tensor64 up = oracle::random_tensor({50}, rng);
  const Tensor64 back = dropout_backward(train.mask, up);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(up[i] * train.mask[i]));

  // Inverted scaling keeps the expectation: 10,000 samples within 3 standard errors.
  const Tensor64 unit({10000}, 1.0);
  const auto sampled = dropout_forward(unit, 0.2, Mode::train, rng);
  double mean = 0.0;
  for (double v : sampled.output.data()) mean += v;
  mean /= 10000.0;
  const double standard_error = std::sqrt(0.2 / 0.8) / std::sqrt(10000.0);
  CHECK(std::abs(mean - 1.0) < 3 * standard_error);

  CHECK_THROWS_AS(dropout_forward(x, 1.0, Mode::train, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout_forward(x, -0.1, Mode::train, rng), std::invalid_argument);
}

TEST_CASE("lstm examples") {
  SplitMix64 rng(10);
  const Tensor64 wx({16, 3}), wh({16, 4}), b({16});
  const Tensor64 input = oracle::random_tensor({6, 3}, rng);
  const auto out = lstm_forward(input, {wx, wh, b}, Tensor64({4}), Tensor64({4}));
  for (double v : out.h_seq.data()) CHECK(v == 0.0);
  for (double v : out.c_last.data()) CHECK(v == 0.0);

  // One step, H = 1, saturated i/f/o gates and b_g = 0: c1 = c0, h1 = tanh(c0).
  const Tensor64 wx1({4, 1}), wh1({4, 1});
  const Tensor64 b1({4}, {100.0, 100.0, 0.0, 100.0});
  const Tensor64 c0({1}, {0.7});
  const auto step = lstm_forward(Tensor64({1, 1}, {0.3}), {wx1, wh1, b1}, Tensor64({1}, {0.2}), c0);
  CHECK(step.c_last[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(step.h_last[0] == doctest::Approx(std::tanh(0.7)).epsilon(1e-12));

  const Tensor64 h0 = oracle::random_tensor({4}, rng), c0r = oracle::random_tensor({4}, rng);
  const auto empty = lstm_forward(Tensor64({0, 3}), {wx, wh, b}, h0, c0r);
  CHECK(empty.h_seq.size() == 0);
  CHECK(empty.h_last == h0);
  CHECK(empty.c_last == c0r);
}

TEST_CASE("lstm backward through time") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor64 x = oracle::random_tensor({5, 3}, rng);
    Tensor64 wx = oracle::random_tensor({16, 3}, rng, 0.5);
    Tensor64 wh = oracle::random_tensor({16, 4}, rng, 0.5);
    Tensor64 b = oracle::random_tensor({16}, rng, 0.5);
    Tensor64 h0 = oracle::random_tensor({4}, rng);
    Tensor64 c0 = oracle::random_tensor({4}, rng);
    const Tensor64 up_seq = oracle::random_tensor({5, 4}, rng);
    const Tensor64 up_h = oracle::random_tensor({4}, rng);
    const Tensor64 up_c = oracle::random_tensor({4}, rng);
    auto loss = [&] {
      const auto out = lstm_forward(x, {wx, wh, b}, h0, c0);
      return weighted_sum(out.h_seq, up_seq) + weighted_sum(out.h_last, up_h) + weighted_sum(out.c_last, up_c);
    };
    LstmCache cache;
    lstm_forward(x, {wx, wh, b}, h0, c0, &cache);
    const auto grads = lstm_backward(cache, {wx, wh, b}, up_seq, up_h, up_c);
    check_gradient(loss, x, grads.input);
    check_gradient(loss, wx, grads.input_weights);
    check_gradient(loss, wh, grads.recurrent_weights);
    check_gradient(loss, b, grads.bias);
    check_gradient(loss, h0, grads.h0);
    check_gradient(loss, c0, grads.c0);
  }
}

TEST_CASE("lstm backward edge cases") {
  SplitMix64 rng(12);
  const Tensor64 x = oracle::random_tensor({5, 3}, rng);
  const Tensor64 wx = oracle::random_tensor({16, 3}, rng), wh = oracle::random_tensor({16, 4}, rng);
  const Tensor64 b = oracle::random_tensor({16}, rng);
  LstmCache cache;
  lstm_forward(x, {wx, wh, b}, Tensor64({4}), Tensor64({4}), &cache);
  const auto zero = lstm_backward(cache, {wx, wh, b}, Tensor64({5, 4}), Tensor64({4}), Tensor64({4}));
  for (double v : zero.input_weights.data()) CHECK(v == 0.0);
  for (double v : zero.input.data()) CHECK(v == 0.0);

  const auto last_only = lstm_backward(cache, {wx, wh, b}, {}, oracle::random_tensor({4}, rng), {});
  CHECK(last_only.input.shape() == Shape{5, 3});
  CHECK(last_only.input.all_finite());
  double last_row = 0.0;
  for (std::size_t d = 0; d < 3; ++d) last_row += std::abs(last_only.input.at(4, d));
  CHECK(last_row > 0.0);

  CHECK_THROWS_AS(lstm_backward(LstmCache{}, {wx, wh, b}, {}, Tensor64({4}), {}), std::logic_error);
}

TEST_CASE("finite checks raise divergence") {
  const bool saved = finite_checks_enabled();
  set_finite_checks(true);
  const Tensor64 x({1, 4}, {1, std::numeric_limits<double>::quiet_NaN(), 0, 0});
  CHECK_THROWS_AS(conv1d_forward(x, Tensor64({1, 1, 3}, 1.0), Tensor64({1})), DivergenceError);
  set_finite_checks(saved);
}

}
