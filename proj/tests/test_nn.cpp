#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "al/error.hpp"
#include "al/nn.hpp"
#include "al/ops.hpp"
#include "test_support.hpp"

using namespace al;
using namespace al::test;

namespace {

ArchSpec toy_spec() {
  ArchSpec s;
  s.name = "toy";
  s.input_shape = {8, 8, 2};
  s.stem = StemSpec{4, 3, 2, false};
  s.blocks = {InceptionBlockSpec{2, 3, 2, 1, true}};
  s.head.num_classes = 5;
  return s;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  Tensor t({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i * k + labels[i]] = 1.0f;
  return t;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Arch, PresetsHaveExpectedBlockCounts) {
  EXPECT_EQ(sic_preset().blocks.size(), 2u);
  EXPECT_EQ(lic_preset().blocks.size(), 3u);
  auto sic = make_model(sic_preset());
  std::set<std::string> blocks;
  for (const auto& p : sic.params) {
    if (p.name.rfind("block", 0) == 0) blocks.insert(p.name.substr(0, p.name.find('/')));
  }
  EXPECT_EQ(blocks.size(), 2u);
  EXPECT_THROW(arch_preset("huge", {32, 32, 3}, 10), ParameterError);
}

TEST(Arch, PresetSizesNearTargets) {
  // float32 sizes in KB of the dense presets
  double sic_kb = make_model(sic_preset()).num_params() * 4 / 1024.0;
  double lic_kb = make_model(lic_preset()).num_params() * 4 / 1024.0;
  EXPECT_NEAR(sic_kb, 503.0, 10.0);
  EXPECT_NEAR(lic_kb, 3434.0, 60.0);
}

TEST(Arch, ToyParamCountByHand) {
  auto m = make_model(toy_spec());
  // stem 3*3*2*4+4; block on 4 channels: 1x1->2, 3x3->3, 5x5->2, proj->1; head 8->5
  std::size_t expect = (3 * 3 * 2 * 4 + 4) + (1 * 1 * 4 * 2 + 2) + (3 * 3 * 4 * 3 + 3) + (5 * 5 * 4 * 2 + 2) +
                       (1 * 1 * 4 * 1 + 1) + (8 * 5 + 5);
  EXPECT_EQ(m.num_params(), expect);
}

TEST(Arch, ValidationNamesField) {
  ArchSpec s = toy_spec();
  s.blocks[0].branch5x5 = 0;
  try {
    make_model(s);
    FAIL() << "expected ParameterError";
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("branch5x5"), std::string::npos);
  }
}

TEST(Arch, JsonRoundTrip) {
  ArchSpec s = lic_preset();
  s.head.aux_classes = 3;
  EXPECT_EQ(arch_from_json(arch_to_json(s)), s);
  EXPECT_THROW(arch_from_json("{\"name\": 1}"), FormatError);
}

TEST(Arch, MultiTaskSharesTrunkNames) {
  ArchSpec a = sic_preset();
  ArchSpec b = a;
  b.head.aux_classes = 3;
  std::set<std::string> na, nb;
  for (const auto& p : make_model(a).params) na.insert(p.name);
  for (const auto& p : make_model(b).params) nb.insert(p.name);
  std::set<std::string> extra;
  for (const auto& n : nb) {
    if (!na.count(n)) extra.insert(n);
  }
  for (const auto& n : na) EXPECT_TRUE(nb.count(n)) << n;
  EXPECT_EQ(extra, (std::set<std::string>{"head/aux/kernel", "head/aux/bias"}));
}

TEST(Arch, PrunableMeansHiddenKernels) {
  auto m = make_model(sic_preset());
  for (const auto& p : m.params) {
    bool expect = p.role == ParamRole::kernel && !p.output_layer;
    EXPECT_EQ(p.prunable, expect) << p.name;
  }
}

TEST(BuildModel, Deterministic) {
  auto [m1, p1] = build_model(sic_preset(), 42);
  auto [m2, p2] = build_model(sic_preset(), 42);
  auto [m3, p3] = build_model(sic_preset(), 43);
  EXPECT_TRUE(params_bit_equal(p1, p2));
  EXPECT_EQ(p1.digest(), p2.digest());
  EXPECT_FALSE(params_bit_equal(p1, p3));
  for (const auto& info : m1.params) {
    const Tensor& t = p1.at(info.name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (info.role == ParamRole::kernel) {
        ASSERT_NE(t[i], 0.0f);
      } else {
        ASSERT_EQ(t[i], 0.0f);
      }
    }
  }
}

TEST(Forward, ZeroParamsGiveZeroLogits) {
  auto [m, p] = build_model(toy_spec(), 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (auto& v : p.tensor(i).data()) v = 0.0f;
  }
  Rng rng = make_rng(1, "x");
  Tape tape;
  auto out = forward(m, p, tape, random_tensor(rng, {3, 8, 8, 2}));
  for (float v : out.logits.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, RejectsWrongInputShape) {
  auto [m, p] = build_model(toy_spec(), 1);
  Tape tape;
  EXPECT_THROW(forward(m, p, tape, Tensor({1, 8, 7, 2})), DimensionError);
  EXPECT_THROW(forward(m, p, tape, Tensor({8, 8, 2})), DimensionError);
}

TEST(Forward, OnesMaskIsIdentity) {
  auto [m, p] = build_model(toy_spec(), 2);
  PruneMask mask;
  for (const auto& name : m.prunable_names()) mask.add_ones(name, p.at(name).shape());
  Rng rng = make_rng(2, "x");
  Tensor x = random_tensor(rng, {4, 8, 8, 2});
  Tape t1, t2;
  ForwardOptions with;
  with.mask = &mask;
  Tensor a = forward(m, p, t1, x).logits.value();
  Tensor b = forward(m, p, t2, x, with).logits.value();
  EXPECT_TRUE(bit_equal(a, b));
}

TEST(Forward, MaskMatchesManualZeroing) {
  auto [m, p] = build_model(toy_spec(), 3);
  PruneMask mask;
  for (const auto& name : m.prunable_names()) mask.add_ones(name, p.at(name).shape());
  auto& keep = mask.at("stem/conv/kernel").keep;
  std::fill(keep.begin(), keep.end(), 0);
  ParamStore manual = snapshot_params(p);
  for (auto& v : manual.at("stem/conv/kernel").data()) v = 0.0f;
  Rng rng = make_rng(3, "x");
  Tensor x = random_tensor(rng, {4, 8, 8, 2});
  Tape t1, t2;
  ForwardOptions with;
  with.mask = &mask;
  Tensor a = forward(m, p, t1, x, with).logits.value();
  Tensor b = forward(m, manual, t2, x).logits.value();
  EXPECT_LE(max_abs_diff(a, b), 1e-6f);
}

TEST(Forward, MultiTaskAuxHead) {
  ArchSpec s = toy_spec();
  s.head.aux_classes = 3;
  auto [m, p] = build_model(s, 4);
  Tape tape;
  auto out = forward(m, p, tape, Tensor({2, 8, 8, 2}, 0.5f));
  ASSERT_TRUE(out.aux_logits.has_value());
  EXPECT_EQ(out.aux_logits->shape(), (Shape{2, 3}));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 5}));
}

TEST(Forward, PredictMatchesSingleForward) {
  auto [m, p] = build_model(toy_spec(), 5);
  Rng rng = make_rng(5, "x");
  Tensor x = random_tensor(rng, {10, 8, 8, 2});
  Tape tape;
  Tensor a = forward(m, p, tape, x).logits.value();
  Tensor b = predict(m, p, x, {}, 3).logits;
  EXPECT_LE(max_abs_diff(a, b), 1e-6f);
}

namespace {

struct ModelFdResult {
  std::size_t checked = 0;
  std::size_t passed = 0;
};

// SIC preset, two clips, double precision, 12 sampled coordinates per tensor
ModelFdResult sic_model_fd(double h) {
  auto [m, p] = build_model(sic_preset(), 6);
  Rng rng = make_rng(6, "x");
  DTensor x = random_tensor<double>(rng, {2, 32, 32, 3}, 0.0, 1.0);
  DTensor y = one_hot({1, 7}, 10).cast<double>();
  std::map<std::string, DTensor> params;
  for (const auto& info : m.params) {
    DTensor t = p.at(info.name).cast<double>();
    // nonzero biases so every path is exercised
    if (info.role == ParamRole::bias) {
      for (auto& v : t.data()) v = uniform(rng, -0.1, 0.1);
    }
    params.emplace(info.name, t);
  }
  auto loss_at = [&](const std::map<std::string, DTensor>& ps) {
    DTape tape;
    auto out = forward_f64(m, ps, tape, x);
    return cross_entropy(out.logits, y).value().item();
  };
  DTape tape;
  ForwardOptions fo;
  fo.requires_grad = true;
  auto out = forward_f64(m, params, tape, x, fo);
  auto grads = tape.backward(cross_entropy(out.logits, y));

  ModelFdResult r;
  for (const auto& info : m.params) {
    const DTensor& g = grads.at(info.name);
    const std::size_t samples = std::min<std::size_t>(g.numel(), 12);
    for (std::size_t s = 0; s < samples; ++s) {
      std::size_t j = uniform_index(rng, g.numel());
      auto plus = params, minus = params;
      plus.at(info.name)[j] += h;
      minus.at(info.name)[j] -= h;
      double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      ++r.checked;
      if (rel_error(g[j], numeric) <= 1e-2) ++r.passed;
    }
  }
  return r;
}

}  // namespace

TEST(Forward, ModelGradientMatchesFiniteDifferences) {
  auto r = sic_model_fd(1e-3);
  EXPECT_GE(r.checked, 200u);
  EXPECT_GE(static_cast<double>(r.passed) / r.checked, 0.99) << r.passed << "/" << r.checked;
}

TEST(Forward, ModelGradientMatchesSmallStepDifferences) {
  // a step far below the ReLU/max-pool switching scale
  auto r = sic_model_fd(1e-6);
  EXPECT_GE(r.checked, 200u);
  EXPECT_EQ(r.passed, r.checked);
}

TEST(Forward, DoublePathMatchesFloat) {
  auto [m, p] = build_model(sic_preset(), 7);
  Rng rng = make_rng(7, "x");
  Tensor x = random_tensor(rng, {3, 32, 32, 3}, 0.0, 1.0);
  std::map<std::string, DTensor> params;
  for (const auto& info : m.params) params.emplace(info.name, p.at(info.name).cast<double>());
  Tape t1;
  DTape t2;
  Tensor a = forward(m, p, t1, x).logits.value();
  DTensor b = forward_f64(m, params, t2, x.cast<double>()).logits.value();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(Schedule, Examples) {
  LrSchedule s;
  s.cycle_length = 100;
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 100), 1e-5);
  EXPECT_NEAR(lr_at(s, 50), 1e-5 + 0.5 * (0.1 - 1e-5), 1e-12);
  EXPECT_TRUE(is_cycle_end(s, 100));
  EXPECT_FALSE(is_cycle_end(s, 99));
}

TEST(Schedule, RestartsAtMaxWithGrowingCycles) {
  LrSchedule s;
  s.cycle_length = 10;
  s.restart_multiplier = 2.0;
  // cycles cover 11, 21, 41 steps
  EXPECT_DOUBLE_EQ(lr_at(s, 11), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 31), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(s, 32), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 72), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(s, 73), 0.1);
  for (std::uint64_t t = 0; t < 500; ++t) {
    double lr = lr_at(s, t);
    EXPECT_GE(lr, 1e-5);
    EXPECT_LE(lr, 0.1);
  }
}

TEST(Training, ZeroEpochsRejected) {
  auto [m, p] = build_model(toy_spec(), 1);
  TensorBatchSource data(Tensor({4, 8, 8, 2}), one_hot({0, 1, 2, 3}, 5));
  SgdOptions o;
  o.epochs = 0;
  EXPECT_THROW(sgd_train(m, p, data, cross_entropy_loss(), o), ParameterError);
}

TEST(Training, LearnsLinearMap) {
  ArchSpec s;
  s.input_shape = {1, 1, 1};
  s.head.num_classes = 1;
  auto [m, p] = build_model(s, 9);
  Rng rng = make_rng(9, "data");
  Tensor x({64, 1, 1, 1}), y({64, 1});
  for (std::size_t i = 0; i < 64; ++i) {
    x[i] = static_cast<float>(uniform(rng, -1.0, 1.0));
    y[i] = 2.0f * x[i];
  }
  TensorBatchSource data(x, y);
  LossFn mse = [](Tape&, const ModelOutput& out, const Batch& b) {
    return mean(square(sub(out.logits, out.logits.tape().constant(b.targets))));
  };
  SgdOptions o;
  o.epochs = 30;
  o.batch_size = 8;
  auto r = sgd_train(m, p, data, mse, o);
  EXPECT_NEAR(r.params.at("head/main/kernel")[0], 2.0f, 1e-2);
  EXPECT_NEAR(r.params.at("head/main/bias")[0], 0.0f, 1e-2);
}

TEST(Training, MemorizesSmallSet) {
  ArchSpec s = toy_spec();
  auto [m, p] = build_model(s, 10);
  Rng rng = make_rng(10, "data");
  Tensor x = random_tensor(rng, {50, 8, 8, 2}, 0.0, 1.0);
  std::vector<std::size_t> labels(50);
  for (auto& l : labels) l = uniform_index(rng, 5);
  TensorBatchSource data(x, one_hot(labels, 5));
  SgdOptions o;
  o.epochs = 200;
  o.batch_size = 10;
  o.seed = 10;
  auto r = sgd_train(m, p, data, cross_entropy_loss(), o);
  EXPECT_LT(r.epochs.back().mean_loss, 0.1);
  // the lowest-lr step is the last one here, so its weights are returned
  EXPECT_EQ(r.selected_step, r.steps - 1);
}

TEST(Training, MaskedCoordinatesStayZero) {
  auto [m, p] = build_model(toy_spec(), 11);
  PruneMask mask;
  Rng rng = make_rng(11, "mask");
  for (const auto& name : m.prunable_names()) {
    std::vector<std::uint8_t> keep(p.at(name).numel());
    for (auto& k : keep) k = uniform01(rng) < 0.5;
    mask.add(name, p.at(name).shape(), keep);
  }
  Tensor x = random_tensor(rng, {20, 8, 8, 2}, 0.0, 1.0);
  std::vector<std::size_t> labels(20);
  for (auto& l : labels) l = uniform_index(rng, 5);
  TensorBatchSource data(x, one_hot(labels, 5));
  // every step is checked by training one step at a time
  ParamStore cur = p;
  SgdOptions o;
  o.epochs = 1;
  o.batch_size = 20;
  for (int step = 0; step < 10; ++step) {
    o.seed = static_cast<std::uint64_t>(step);
    cur = sgd_train(m, cur, data, cross_entropy_loss(), o, &mask).params;
    for (const auto& e : mask.entries()) {
      const Tensor& w = cur.at(e.name);
      for (std::size_t j = 0; j < e.keep.size(); ++j) {
        if (!e.keep[j]) {
          ASSERT_EQ(w[j], 0.0f);
        }
      }
    }
  }
}

TEST(Training, OnesMaskBitIdenticalToNoMask) {
  auto [m, p] = build_model(toy_spec(), 12);
  PruneMask mask;
  for (const auto& name : m.prunable_names()) mask.add_ones(name, p.at(name).shape());
  Rng rng = make_rng(12, "data");
  Tensor x = random_tensor(rng, {30, 8, 8, 2}, 0.0, 1.0);
  std::vector<std::size_t> labels(30);
  for (auto& l : labels) l = uniform_index(rng, 5);
  TensorBatchSource data(x, one_hot(labels, 5));
  SgdOptions o;
  o.epochs = 3;
  o.batch_size = 8;
  o.seed = 5;
  auto a = sgd_train(m, p, data, cross_entropy_loss(), o);
  auto b = sgd_train(m, p, data, cross_entropy_loss(), o, &mask);
  auto c = sgd_train(m, p, data, cross_entropy_loss(), o);
  EXPECT_TRUE(params_bit_equal(a.params, b.params));
  EXPECT_TRUE(params_bit_equal(a.params, c.params));
}

TEST(Training, NonFiniteLossNamesStep) {
  auto [m, p] = build_model(toy_spec(), 13);
  Tensor x({4, 8, 8, 2}, 1.0f);
  p.at("head/main/bias")[0] = std::numeric_limits<float>::quiet_NaN();
  TensorBatchSource data(x, one_hot({0, 1, 2, 3}, 5));
  SgdOptions o;
  try {
    sgd_train(m, p, data, cross_entropy_loss(), o);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Snapshot, UnchangedByTraining) {
  auto [m, p] = build_model(toy_spec(), 14);
  ParamStore snap = snapshot_params(p);
  Digest before = snap.digest();
  EXPECT_TRUE(params_bit_equal(snapshot_params(snap), snap));
  Rng rng = make_rng(14, "data");
  Tensor x = random_tensor(rng, {40, 8, 8, 2}, 0.0, 1.0);
  std::vector<std::size_t> labels(40);
  for (auto& l : labels) l = uniform_index(rng, 5);
  TensorBatchSource data(x, one_hot(labels, 5));
  SgdOptions o;
  o.epochs = 250;
  o.batch_size = 10;  // 4 steps per epoch, 1000 steps
  auto r = sgd_train(m, p, data, cross_entropy_loss(), o);
  EXPECT_EQ(r.steps, 1000u);
  EXPECT_EQ(snap.digest(), before);
  EXPECT_EQ(p.digest(), before);
  EXPECT_FALSE(params_bit_equal(r.params, snap));
}
