#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "semfuse/metrics.hpp"

using namespace semfuse;

namespace {

PredictionSet make(int k, const std::vector<std::vector<double>>& probs, const std::vector<int>& gt) {
  PredictionSet p(k);
  for (std::size_t i = 0; i < gt.size(); ++i) p.add(probs[i], gt[i]);
  return p;
}

PredictionSet random_set(int k, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(0.5, 1.0);
  PredictionSet p(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& v : s) sum += (v = g(rng) + 1e-12);
    for (auto& v : s) v /= sum;
    p.add(s, static_cast<int>(rng() % static_cast<std::uint64_t>(k)));
  }
  return p;
}

// Brute-force oracle for the grouped calibration error: groups keyed by
// (bin, group id), weights relative to the group-class size.
double oracle_grouped(const PredictionSet& p, int bins, int mode) {
  const int k = p.class_count();
  if (mode == 0 || mode == 1) {
    double total = 0.0;
    for (int c = (mode == 0 ? -1 : 0); c < (mode == 0 ? 0 : k); ++c) {
      for (int b = 0; b < bins; ++b) {
        double conf = 0, acc = 0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (confidence_bin(p.conf(i), bins) != b) continue;
          if (mode == 1 && p.pred(i) != c) continue;
          conf += p.conf(i);
          acc += p.pred(i) == p.gt(i);
          ++n;
        }
        if (n) total += std::abs(acc - conf) / static_cast<double>(p.size());
      }
    }
    return total;
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::size_t nc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) nc += p.gt(i) == c;
    if (!nc) continue;
    ++present;
    double e = 0.0;
    for (int b = 0; b < bins; ++b) {
      double conf = 0, acc = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.gt(i) != c || confidence_bin(p.conf(i), bins) != b) continue;
        conf += p.conf(i);
        acc += p.pred(i) == p.gt(i);
      }
      e += std::abs(acc - conf) / static_cast<double>(nc);
    }
    sum += e;
  }
  return sum / present;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("confidence bins") {
  CHECK(confidence_bin(0.0, 10) == 0);
  CHECK(confidence_bin(0.1, 10) == 1);
  CHECK(confidence_bin(0.8, 10) == 8);
  CHECK(confidence_bin(0.99, 10) == 9);
  CHECK(confidence_bin(1.0, 10) == 9);
}

TEST_CASE("hand-binned ECE") {
  const auto p = make(2, {{0.8, 0.2}, {0.6, 0.4}}, {0, 1});
  CHECK(compute_ece(p, 10) == doctest::Approx(0.4).epsilon(1e-15));
  // Predicted classes coincide, so TL-ECE partitions like ECE.
  CHECK(compute_tl_ece(p, 10) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("perfect and matched predictors") {
  const auto perfect = make(3, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 1, 2});
  CHECK(compute_ece(perfect) == 0.0);
  CHECK(compute_tl_ece(perfect) == 0.0);
  CHECK(compute_mece(perfect) == 0.0);
  CHECK(compute_brier(perfect) == 0.0);
  CHECK(compute_nll(perfect) == 0.0);
  CHECK(compute_miou(perfect) == 1.0);

  // Uniform K = 4 output, one in four correct.
  const std::vector<double> u{0.25, 0.25, 0.25, 0.25};
  const auto m = make(4, {u, u, u, u}, {0, 1, 2, 3});
  CHECK(compute_ece(m) == doctest::Approx(0.0));
}

TEST_CASE("TL-ECE with disjoint bins equals ECE") {
  const auto p = make(2, {{0.95, 0.05}, {0.9, 0.1}, {0.3, 0.7}, {0.4, 0.6}}, {0, 1, 1, 1});
  CHECK(compute_tl_ece(p, 10) == doctest::Approx(compute_ece(p, 10)).epsilon(1e-15));
}

TEST_CASE("majority-class predictor mECE") {
  std::vector<std::vector<double>> probs(10, {0.9, 0.1});
  std::vector<int> gt(10, 0);
  gt[9] = 1;
  const auto p = make(2, probs, gt);
  CHECK(compute_mece(p, 15) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(compute_ece(p, 15) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("brier and nll") {
  const auto u = make(2, {{0.5, 0.5}}, {1});
  CHECK(compute_brier(u) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(compute_nll(u) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const auto wrong = make(2, {{1.0, 0.0}}, {1});
  CHECK(compute_brier(wrong) == 2.0);
  CHECK(compute_nll(wrong) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("mIoU") {
  const std::vector<double> a{1, 0}, b{0, 1};
  CHECK(compute_miou(make(2, {a, b, b, b}, {0, 0, 1, 1})) == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  CHECK(compute_miou(make(2, {b, a}, {0, 1})) == 0.0);
}

TEST_CASE("degenerate inputs") {
  PredictionSet empty(2);
  CHECK_THROWS(compute_ece(empty));
  CHECK_THROWS(compute_mece(empty));
  CHECK_THROWS(compute_brier(empty));
  PredictionSet p(2);
  CHECK_THROWS(p.add(std::vector<double>{0.5, 0.6}, 0));
  CHECK_THROWS(p.add(std::vector<double>{0.5, 0.5}, 2));
}

TEST_CASE("metrics match brute-force oracles on random sets") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_set(static_cast<int>(2 + seed % 5), 300, seed);
    CHECK(compute_ece(p) == doctest::Approx(oracle_grouped(p, 15, 0)).epsilon(1e-12));
    CHECK(compute_tl_ece(p) == doctest::Approx(oracle_grouped(p, 15, 1)).epsilon(1e-12));
    CHECK(compute_mece(p) == doctest::Approx(oracle_grouped(p, 15, 2)).epsilon(1e-12));
  }
}

TEST_CASE("ranges, reordering and class permutation") {
  const auto p = random_set(4, 500, 42);
  const auto s = summarize(p);
  for (double v : {s.ece, s.tl_ece, s.mece}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(s.brier >= 0.0);
  CHECK(s.brier <= 2.0);

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(order.begin(), order.end(), rng);
  const std::vector<int> perm{2, 0, 3, 1};
  PredictionSet shuffled(4), permuted(4);
  for (std::size_t i : order) shuffled.add(p.probs(i), p.gt(i));
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::vector<double> q(4);
    for (int k = 0; k < 4; ++k) q[static_cast<std::size_t>(perm[k])] = p.probs(i)[k];
    permuted.add(q, perm[p.gt(i)]);
  }
  CHECK(compute_ece(shuffled) == doctest::Approx(s.ece).epsilon(1e-12));
  CHECK(compute_mece(shuffled) == doctest::Approx(s.mece).epsilon(1e-12));
  CHECK(compute_mece(permuted) == doctest::Approx(s.mece).epsilon(1e-12));
  CHECK(compute_miou(permuted) == doctest::Approx(s.miou).epsilon(1e-12));
}

TEST_CASE("reliability tables re-aggregate exactly") {
  const auto p = random_set(3, 400, 7);
  const auto none = reliability_table(p, 15, Conditioning::kNone);
  const auto pred = reliability_table(p, 15, Conditioning::kPredictedClass);
  const auto gt = reliability_table(p, 15, Conditioning::kGroundTruthClass);
  CHECK(none.rows.size() == 15);
  CHECK(gt.rows.size() == 45);
  CHECK(none.calibration_error() == compute_ece(p, 15));
  CHECK(pred.calibration_error() == compute_tl_ece(p, 15));
  CHECK(gt.calibration_error() == compute_mece(p, 15));
  std::size_t total = 0;
  bool saw_empty = false;
  for (const auto& r : gt.rows) {
    total += r.count;
    saw_empty |= r.count == 0;
  }
  CHECK(total == p.size());
  CHECK(saw_empty);
}

}
