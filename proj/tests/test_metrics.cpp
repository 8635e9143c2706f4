#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "al/error.hpp"
#include "al/metrics.hpp"
#include "test_support.hpp"

using namespace al;
using namespace al::test;

namespace {

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Metrics, UniformAndOracle) {
  const std::size_t n = 50, k = 10;
  DTensor uniform({n, k}, 0.1);
  DTensor oracle({n, k});
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = (i * 7) % k;
    oracle[i * k + labels[i]] = 1.0;
  }
  EXPECT_NEAR(log_loss(uniform, labels), std::log(10.0), 1e-9);
  EXPECT_EQ(log_loss(oracle, labels), 0.0);
  EXPECT_EQ(accuracy(oracle, labels), 100.0);
  // single precision 0.1f is off by a relative 1.5e-8
  EXPECT_NEAR(log_loss(Tensor({n, k}, 0.1f), labels), std::log(10.0), 1e-7);
}

TEST(Metrics, HandComputedThreeClips) {
  DTensor p({3, 3}, std::vector<double>{0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4});
  std::vector<std::size_t> y{0, 1, 0};
  // (0.356674943938732 + 0.223143551314210 + 1.203972804325936) / 3
  EXPECT_NEAR(log_loss(p, y), 0.5945970998596261, 1e-9);
  EXPECT_NEAR(accuracy(p, y), 200.0 / 3.0, 1e-12);
}

TEST(Metrics, ClampAndTies) {
  DTensor p({1, 2}, std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(log_loss(p, std::vector<std::size_t>{1}), -std::log(1e-15), 1e-9);
  DTensor tie({1, 3}, std::vector<double>{0.4, 0.4, 0.2});
  EXPECT_EQ(accuracy(tie, std::vector<std::size_t>{0}), 100.0);
  EXPECT_EQ(accuracy(tie, std::vector<std::size_t>{1}), 0.0);
  EXPECT_THROW(log_loss(p, std::vector<std::size_t>{2}), ParameterError);
  EXPECT_THROW(accuracy(p, std::vector<std::size_t>{0, 1}), DimensionError);
}

TEST(Metrics, RangeOnRandomPredictions) {
  Rng rng = make_rng(110, "metrics");
  for (int trial = 0; trial < 50; ++trial) {
    Tensor p = random_distribution(rng, 20, 10);
    std::vector<std::size_t> y;
    for (int i = 0; i < 20; ++i) y.push_back(uniform_index(rng, 10));
    const double acc = accuracy(p, y), ll = log_loss(p, y);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 100.0);
    EXPECT_GE(ll, 0.0);
  }
}

TEST(Metrics, GroupedAccuracy) {
  Tensor p({4, 2}, std::vector<float>{1, 0, 0, 1, 1, 0, 1, 0});
  std::vector<std::size_t> y{0, 1, 1, 0};
  std::vector<std::string> g{"a", "a", "b", "b"};
  auto acc = grouped_accuracy(p, y, g);
  EXPECT_EQ(acc.at("a"), 100.0);
  EXPECT_EQ(acc.at("b"), 50.0);
}

TEST(Report, CsvRoundTrip) {
  MetricsRow r;
  r.experiment = "e1";
  r.system = "sic+lth(t=2,wr=0.5000,small_weights)";
  r.checkpoints = "a.alck;b.alck";
  r.dtype = "int8";
  r.nonzero = 12345;
  r.size_kb = 12.0556640625;
  r.compression = 41.84912345678901;
  r.weights_remaining = 0.25;
  r.accuracy = 87.33333333333333;
  r.log_loss = 0.41234567890123456;
  r.seen_accuracy = 91.25;
  r.unseen_accuracy = 80.1;
  r.device_accuracy = {{"a", 90.0}, {"s1", 81.5}};
  r.wall_time_s = 3.5;
  MetricsRow q = r;
  q.experiment = "e2";
  const auto path = tmp("al_report.csv");
  write_report(path, {r, q});
  auto back = read_report(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], r);
  EXPECT_EQ(back[1], q);
  MetricsRow slow = r;
  slow.wall_time_s = 99.0;
  EXPECT_TRUE(same_results(r, slow));
  slow.accuracy += 1e-12;
  EXPECT_FALSE(same_results(r, slow));
  std::filesystem::remove(path);
}

TEST(Report, ProbabilityDumpRecomputes) {
  Rng rng = make_rng(111, "dump");
  Tensor p = random_distribution(rng, 30, 10);
  std::vector<std::size_t> y;
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) {
    y.push_back(uniform_index(rng, 10));
    ids.push_back("clip-" + std::to_string(i));
  }
  const auto path = tmp("al_probs.csv");
  write_probs(path, ids, y, p);
  ProbDump d = read_probs(path);
  EXPECT_EQ(d.ids, ids);
  EXPECT_EQ(d.labels, y);
  EXPECT_TRUE(bit_equal(d.probs, p));
  EXPECT_EQ(log_loss(d.probs, d.labels), log_loss(p, y));
  std::filesystem::remove(path);
}
