#include <vector>

#include "avr/metrics.hpp"
#include "avr/random.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace avr;
using namespace avr::metrics;

TEST_SUITE("metrics") {

TEST_CASE("worked examples") {
  const std::vector<int> preds{0, 1, 1, 1}, labels{0, 0, 1, 1};
  CHECK(accuracy(preds, labels) == 0.75);
  const auto cm = confusion(preds, labels);
  CHECK(cm.f1(0) == doctest::Approx(2.0 / 3.0));
  CHECK(cm.f1(1) == doctest::Approx(0.8));
  CHECK(macro_f1(preds, labels) == doctest::Approx(0.733333).epsilon(1e-6));

  CHECK(accuracy(labels, labels) == 1.0);
  CHECK(macro_f1(labels, labels) == 1.0);
  const std::vector<int> flipped{1, 1, 0, 0};
  CHECK(accuracy(flipped, labels) == 0.0);

  const std::vector<int> all_humor{1, 1, 1, 1};
  CHECK(confusion(all_humor, labels).f1(0) == 0.0);
  CHECK(macro_f1(all_humor, labels) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("input validation") {
  const std::vector<int> a{0, 1}, b{0}, empty, bad{0, 2};
  CHECK_THROWS_AS(accuracy(a, b), std::invalid_argument);
  CHECK_THROWS_AS(macro_f1(empty, empty), std::invalid_argument);
  CHECK_THROWS_AS(accuracy(bad, a), std::invalid_argument);
}

TEST_CASE("random instances match the brute-force oracle") {
  SplitMix64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.below(2));
      y[i] = static_cast<int>(rng.below(2));
    }
    const double acc = accuracy(p, y), f1 = macro_f1(p, y);
    CHECK(std::abs(acc - oracle::accuracy(p, y)) < 1e-9);
    CHECK(std::abs(f1 - oracle::macro_f1(p, y)) < 1e-9);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);
    const auto cm = confusion(p, y);
    CHECK(cm.total() == n);
    const double micro_recall =
        static_cast<double>(cm.counts[0][0] + cm.counts[1][1]) / static_cast<double>(cm.total());
    CHECK(std::abs(acc - micro_recall) < 1e-12);
  }
}

}
