#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "al/distill.hpp"
#include "al/error.hpp"
#include "al/ops.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace al;
using namespace al::test;

namespace {

DTensor one_hot(Rng& rng, std::size_t n, std::size_t k) {
  DTensor y({n, k});
  for (std::size_t i = 0; i < n; ++i) y[i * k + uniform_index(rng, k)] = 1.0;
  return y;
}

double loss_value(const DTensor& s, const DTensor& t, const DTensor& y, DistillConfig cfg) {
  DTape tape;
  return distill_loss(tape.constant(s), t, y, cfg).value().item();
}

}  // namespace

TEST(DistillLoss, Endpoints) {
  Rng rng = make_rng(80, "ends");
  DTensor s = random_tensor<double>(rng, {6, 10}, -3, 3), t = random_tensor<double>(rng, {6, 10}, -3, 3);
  DTensor y = one_hot(rng, 6, 10);
  EXPECT_NEAR(loss_value(s, t, y, {2.0, 0.0}), ce_oracle(s, y), 1e-9);
  EXPECT_NEAR(loss_value(s, s, y, {2.0, 1.0}), 0.0, 1e-9);
  EXPECT_NEAR(loss_value(s, s, y, {7.5, 1.0}), 0.0, 1e-9);
}

TEST(DistillLoss, ComposedValueMatchesOracle) {
  Rng rng = make_rng(81, "compose");
  for (int trial = 0; trial < 20; ++trial) {
    DTensor s = random_tensor<double>(rng, {5, 10}, -4, 4), t = random_tensor<double>(rng, {5, 10}, -4, 4);
    DTensor y = one_hot(rng, 5, 10);
    const double expect = 0.5 * ce_oracle(s, y) + 0.5 * 4.0 * kl_oracle(t, s, 2.0);
    EXPECT_NEAR(loss_value(s, t, y, {2.0, 0.5}), expect, 1e-6);
    // float path agrees closely too
    Tape ft;
    double f = distill_loss(ft.constant(s.cast<float>()), t.cast<float>(), y.cast<float>(), {2.0, 0.5}).value().item();
    EXPECT_NEAR(f, expect, 1e-4);
  }
}

TEST(DistillLoss, LinearInBetaAndNonNegative) {
  Rng rng = make_rng(82, "beta");
  for (int trial = 0; trial < 20; ++trial) {
    DTensor s = random_tensor<double>(rng, {4, 10}, -3, 3), t = random_tensor<double>(rng, {4, 10}, -3, 3);
    DTensor y = one_hot(rng, 4, 10);
    const double l0 = loss_value(s, t, y, {2.0, 0.0}), l1 = loss_value(s, t, y, {2.0, 1.0});
    EXPECT_NEAR(loss_value(s, t, y, {2.0, 0.5}), 0.5 * (l0 + l1), 1e-9);
    EXPECT_GE(l0, 0.0);
    EXPECT_GE(l1, 0.0);
  }
}

TEST(DistillLoss, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(83, "fd");
  DTensor t = random_tensor<double>(rng, {4, 10}, -3, 3);
  DTensor y = one_hot(rng, 4, 10);
  DTensor s = random_tensor<double>(rng, {4, 10}, -3, 3);
  for (double beta : {0.0, 0.5, 1.0}) {
    auto r = grad_check({s}, [&](DTape&, const std::vector<DVar>& v) { return distill_loss(v[0], t, y, {2.0, beta}); });
    EXPECT_EQ(r.failed, 0u) << "beta " << beta << " worst " << r.worst;
    EXPECT_EQ(r.checked, 40u);
  }
}

TEST(DistillLoss, NoGradientToTeacher) {
  Rng rng = make_rng(84, "teacher-grad");
  Tape tape;
  Tensor t = random_tensor(rng, {3, 10});
  Var s = tape.leaf(random_tensor(rng, {3, 10}), true, "student");
  Var loss = distill_loss(s, t, random_distribution(rng, 3, 10), {2.0, 0.5});
  auto grads = tape.backward(loss);
  EXPECT_EQ(grads.size(), 1u);
  EXPECT_TRUE(grads.count("student"));
}

TEST(DistillLoss, Validation) {
  Tape tape;
  Var s = tape.constant(Tensor({2, 3}));
  EXPECT_THROW(distill_loss(s, Tensor({2, 3}), Tensor({2, 3}, 1.0f / 3), {0.0, 0.5}), ParameterError);
  EXPECT_THROW(distill_loss(s, Tensor({2, 3}), Tensor({2, 3}, 1.0f / 3), {2.0, 1.5}), ParameterError);
  EXPECT_THROW(distill_loss(s, Tensor({2, 4}), Tensor({2, 3}, 1.0f / 3), {2.0, 0.5}), DimensionError);
  Batch b;
  b.targets = Tensor({2, 3}, 1.0f / 3);
  ModelOutput out{s, std::nullopt};
  EXPECT_THROW(distill_loss_fn({})(tape, out, b), InputError);
}

TEST(TeacherCache, DeterministicAndComplete) {
  ArchSpec spec = sic_preset({8, 8, 3}, 5);
  auto [m, p] = build_model(spec, 85);
  Rng rng = make_rng(85, "cache");
  Tensor x = random_tensor(rng, {12, 8, 8, 3}, 0, 1);
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) ids.push_back("clip" + std::to_string(i));
  TeacherCache a = TeacherCache::build(m, p, x, ids), b = TeacherCache::build(m, p, x, ids);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(a.fingerprint(), p.digest());
  EXPECT_TRUE(bit_equal(a.lookup(ids), b.lookup(ids)));
  // cached rows against a fresh forward on a random subset
  std::vector<std::size_t> pick;
  for (int i = 0; i < 10; ++i) pick.push_back(uniform_index(rng, 12));
  std::vector<std::string> sub;
  for (auto i : pick) sub.push_back(ids[i]);
  Tensor fresh = predict(m, p, gather_rows(x, pick)).logits;
  Tensor cached = a.lookup(sub);
  double worst = 0.0;
  for (std::size_t i = 0; i < fresh.numel(); ++i) worst = std::max(worst, std::fabs(double(fresh[i]) - cached[i]));
  // batch composition changes the summation order only
  EXPECT_LT(worst, 1e-5);
  try {
    a.lookup({"clip3", "nope-17"});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("nope-17"), std::string::npos);
  }
}

TEST(TeacherCache, SaveLoad) {
  TeacherCache c(3, sha256("teacher"));
  c.insert("x", std::vector<float>{1, 2, 3});
  c.insert("y", std::vector<float>{-1, 0, 4});
  EXPECT_THROW(c.insert("x", std::vector<float>{0, 0, 0}), InputError);
  auto path = (std::filesystem::temp_directory_path() / "al_teacher_cache.alt").string();
  c.save(path);
  TeacherCache back = TeacherCache::load(path);
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
  EXPECT_TRUE(bit_equal(back.lookup({"y", "x"}), c.lookup({"y", "x"})));
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".ids");
}
