#include <gtest/gtest.h>

#include <cmath>

#include "al/error.hpp"
#include "al/prune.hpp"
#include "al/sizing.hpp"
#include "test_support.hpp"

using namespace al;
using namespace al::test;

TEST(Sizing, Arithmetic) {
  EXPECT_DOUBLE_EQ(size_kb(128768, 4), 503.0);
  EXPECT_NEAR(size_kb(1000, 1, 10), 1040.0 / 1024.0, 1e-12);
  EXPECT_DOUBLE_EQ(compression_rate(400.0, 100.0), 4.0);
  EXPECT_DOUBLE_EQ(compression_rate(7.5, 7.5), 1.0);
  EXPECT_THROW(compression_rate(1.0, 0.0), ParameterError);
  // 0.67% of 503 KB
  double pruned = 503.0 * 0.0067;
  EXPECT_NEAR(pruned, 3.4, 0.05);
  EXPECT_NEAR(compression_rate(503.0, pruned), 149.0, 1.0);
}

TEST(Sizing, CountsDenseModel) {
  auto [m, p] = build_model(sic_preset(), 1);
  std::size_t biases = 0;
  for (const auto& info : m.params) {
    if (info.role == ParamRole::bias) biases += shape_numel(info.shape);
  }
  // biases start at zero, every kernel entry is nonzero
  EXPECT_EQ(count_nonzero(p), m.num_params() - biases);
  for (const auto& info : m.params) {
    if (info.role == ParamRole::bias) {
      for (auto& v : p.at(info.name).data()) v = 0.01f;
    }
  }
  EXPECT_EQ(count_nonzero(p), m.num_params());
}

TEST(Sizing, MaskedHalf) {
  auto [m, p] = build_model(sic_preset(), 2);
  PruneMask mask = compute_mask(p, initial_mask(m), {MaskStrategy::small_weights, 0.5});
  const std::size_t unprunable_nonzero = count_nonzero(p) - mask.total_prunable();
  EXPECT_NEAR(static_cast<double>(count_nonzero(p, &mask) - unprunable_nonzero), mask.total_prunable() / 2.0,
              static_cast<double>(mask.size()));
  ParamStore r = rewind(p, p, mask);
  EXPECT_EQ(count_nonzero(r), static_cast<std::size_t>(std::llround(weights_remaining(mask) * mask.total_prunable())) +
                                  unprunable_nonzero);
}

TEST(Sizing, PartitionIdentity) {
  Rng rng = make_rng(3, "part");
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore p;
    p.add("a", random_tensor(rng, {97}));
    p.add("b", random_tensor(rng, {3, 11}));
    PruneMask mask;
    std::vector<std::uint8_t> ka(97), kb(33);
    for (auto& k : ka) k = uniform01(rng) < 0.4;
    for (auto& k : kb) k = uniform01(rng) < 0.7;
    mask.add("a", {97}, ka);
    mask.add("b", {3, 11}, kb);
    PruneMask complement = mask;
    for (auto& k : complement.at("a").keep) k = !k;
    for (auto& k : complement.at("b").keep) k = !k;
    EXPECT_DOUBLE_EQ(size_kb(p, &mask) + size_kb(p, &complement), size_kb(p));
  }
}

TEST(Sizing, QuantizeThenCountMatchesMaskedCount) {
  auto [m, p] = build_model(sic_preset(), 4);
  PruneMask mask = compute_mask(p, initial_mask(m), {MaskStrategy::small_weights, 0.8});
  QuantizedParams q = quantize_weights(p, &mask);
  ParamStore masked = rewind(p, p, mask);
  // zero in, zero out; nonzero weights below half a step are the only loss
  std::size_t tiny = 0;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    const Tensor& t = masked.tensor(i);
    float s = q.at(masked.names()[i]).scale;
    for (float v : t.data()) tiny += v != 0.0f && std::fabs(v) < s / 2;
  }
  EXPECT_EQ(count_nonzero(q), count_nonzero(masked) - tiny);
  EXPECT_EQ(count_nonzero(q, &mask), count_nonzero(q));
  EXPECT_NEAR(size_kb(q), (count_nonzero(q) + 4.0 * q.size()) / 1024.0, 1e-12);
}

TEST(Sizing, DenseFloatToInt8Ratio) {
  auto [m, p] = build_model(sic_preset(), 5);
  QuantizedParams q = quantize_weights(p);
  double ratio = compression_rate(size_kb(p), size_kb(q));
  // weights below half a step drop out, so slightly above 4 is possible
  EXPECT_DOUBLE_EQ(ratio, 4.0 * count_nonzero(p) / (count_nonzero(q) + 4.0 * q.size()));
  EXPECT_GE(ratio, 3.9);
}

TEST(Sizing, Reports) {
  auto [m, p] = build_model(sic_preset(), 6);
  SizeReport f = size_report("dense", p, nullptr, size_kb(p));
  EXPECT_EQ(f.dtype, "float32");
  EXPECT_DOUBLE_EQ(f.compression, 1.0);
  SizeReport q = size_report("int8", quantize_weights(p), nullptr, f.kb);
  EXPECT_EQ(q.dtype, "int8");
  EXPECT_GT(q.compression, 3.9);
}
