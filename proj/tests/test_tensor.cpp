#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "al/error.hpp"
#include "al/ops.hpp"
#include "al/tensor.hpp"
#include "test_support.hpp"

using namespace al;
using namespace al::test;

namespace {

using DLossFn = std::function<DVar(DTape&, const std::vector<DVar>&)>;

void expect_grads(const std::vector<DTensor>& inputs, const DLossFn& f, double tol = 1e-3) {
  auto r = grad_check(inputs, f, 1e-3, tol);
  EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst << " over " << r.checked << " coords";
}

// keeps values off the relu kink and separates pooling candidates
DTensor spread(Rng& rng, Shape shape) {
  DTensor t(shape);
  std::vector<std::size_t> idx(t.numel());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle(idx, rng);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    double v = -1.0 + 2.0 * (static_cast<double>(idx[i]) + 0.5) / static_cast<double>(idx.size());
    t[i] = v;
  }
  return t;
}

}  // namespace

TEST(TensorBasics, ShapeAndData) {
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), DimensionError);
  EXPECT_THROW(t.item(), DimensionError);
  EXPECT_THROW(t.set_grad(std::vector<float>(5)), DimensionError);
  t.set_grad(std::vector<float>(6, 1.0f));
  EXPECT_TRUE(t.grad().has_value());
}

TEST(TensorBasics, SerializationRoundTrip) {
  Rng rng = make_rng(3, "ser");
  Tensor t = random_tensor(rng, {3, 4, 5});
  std::stringstream ss;
  write_tensor(ss, t);
  Tensor back = read_tensor(ss);
  EXPECT_TRUE(bit_equal(t, back));

  std::stringstream bad;
  write_tensor(bad, t);
  std::string raw = bad.str();
  std::stringstream trunc(raw.substr(0, raw.size() - 3));
  EXPECT_THROW(read_tensor(trunc), FormatError);
}

TEST(TensorBasics, SerializationHeaderLayout) {
  Tensor t({2, 1}, std::vector<float>{1.0f, -1.0f});
  std::stringstream ss;
  write_tensor(ss, t);
  std::string s = ss.str();
  ASSERT_EQ(s.size(), 4u + 2 * 4u + 4u + 2 * 4u);
  auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3])) << 24;
  };
  EXPECT_EQ(u32(0), 2u);
  EXPECT_EQ(u32(4), 2u);
  EXPECT_EQ(u32(8), 1u);
  EXPECT_EQ(u32(12), 0u);  // f32 tag
  EXPECT_EQ(u32(16), 0x3f800000u);
}

TEST(Conv2d, OneByOneKernelScales) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 3, 3, 1}, 1.0f));
  Var k = tape.constant(Tensor({1, 1, 1, 1}, 2.0f));
  Var y = conv2d(x, k, 1, Padding::valid);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 1}));
  for (float v : y.value().data()) EXPECT_EQ(v, 2.0f);
}

TEST(Conv2d, FullWindowSum) {
  Tape tape;
  Tensor in({1, 3, 3, 1});
  for (std::size_t i = 0; i < 9; ++i) in[i] = static_cast<float>(i + 1);
  Var y = conv2d(tape.constant(in), tape.constant(Tensor({3, 3, 1, 1}, 1.0f)), 1, Padding::valid);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value()[0], 45.0f);
}

TEST(Conv2d, MatchesNaiveLoopsOnFixedCase) {
  Rng rng = make_rng(11, "conv");
  Tensor x = random_tensor(rng, {1, 5, 5, 2});
  Tensor k = random_tensor(rng, {3, 3, 2, 4});
  Tape tape;
  Var y = conv2d(tape.constant(x), tape.constant(k), 1, Padding::valid);
  Tensor ref = naive_conv2d(x, k, 1, Padding::valid);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-6);
}

TEST(Conv2d, MatchesNaiveLoopsOnRandomShapes) {
  Rng rng = make_rng(12, "conv-shapes");
  std::size_t checked = 0;
  for (int trial = 0; checked < 200; ++trial) {
    std::size_t n = 1 + uniform_index(rng, 2), h = 1 + uniform_index(rng, 9), w = 1 + uniform_index(rng, 9);
    std::size_t c = 1 + uniform_index(rng, 4), f = 1 + uniform_index(rng, 4);
    std::size_t kh = 1 + uniform_index(rng, 5), kw = 1 + uniform_index(rng, 5);
    std::size_t stride = 1 + uniform_index(rng, 3);
    Padding pad = uniform_index(rng, 2) ? Padding::same : Padding::valid;
    if (pad == Padding::valid && (kh > h || kw > w)) {
      Tape tape;
      EXPECT_THROW(conv2d(tape.constant(Tensor({n, h, w, c})), tape.constant(Tensor({kh, kw, c, f})), stride, pad),
                   DimensionError);
      continue;
    }
    Tensor x = random_tensor(rng, {n, h, w, c});
    Tensor k = random_tensor(rng, {kh, kw, c, f});
    Tape tape;
    Var y = conv2d(tape.constant(x), tape.constant(k), stride, pad);
    Tensor ref = naive_conv2d(x, k, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape()) << "trial " << trial;
    for (std::size_t i = 0; i < ref.numel(); ++i) ASSERT_NEAR(y.value()[i], ref[i], 1e-5) << "trial " << trial;
    ++checked;
  }
}

TEST(Conv2d, RejectsShapeMismatch) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 4, 4, 2}));
  EXPECT_THROW(conv2d(x, tape.constant(Tensor({3, 3, 3, 1})), 1, Padding::same), DimensionError);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor({5, 5, 2, 1})), 1, Padding::valid), DimensionError);
}

TEST(Conv2d, OutputDimFormula) {
  Rng rng = make_rng(13, "dims");
  for (int i = 0; i < 500; ++i) {
    std::size_t in = 1 + uniform_index(rng, 40), k = 1 + uniform_index(rng, 7), s = 1 + uniform_index(rng, 4);
    EXPECT_EQ(conv_out_dim(in, k, s, Padding::same), (in + s - 1) / s);
    if (k <= in) {
      std::size_t count = 0;
      for (std::size_t start = 0; start + k <= in; start += s) ++count;
      EXPECT_EQ(conv_out_dim(in, k, s, Padding::valid), count);
    }
  }
}

TEST(Softmax, Examples) {
  Tape tape;
  Var a = softmax_temperature(tape.constant(Tensor({1, 3}, 0.0f)), 2.5);
  for (float v : a.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
  Var b = softmax_temperature(tape.constant(Tensor({1, 2}, std::vector<float>{std::log(2.0f), 0.0f})), 1.0);
  EXPECT_NEAR(b.value()[0], 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(b.value()[1], 1.0 / 3.0, 1e-6);
  // 1/(1+e^-0.01) at tau 1000; the 1e-3 band around uniform is reached from tau 2500 on
  Var c = softmax_temperature(tape.constant(Tensor({1, 2}, std::vector<float>{10.0f, 0.0f})), 1000.0);
  EXPECT_NEAR(c.value()[0], 1.0 / (1.0 + std::exp(-0.01)), 1e-6);
  Var d = softmax_temperature(tape.constant(Tensor({1, 2}, std::vector<float>{10.0f, 0.0f})), 1e4);
  EXPECT_NEAR(d.value()[0], 0.5, 1e-3);
  EXPECT_NEAR(d.value()[1], 0.5, 1e-3);
  EXPECT_THROW(softmax_temperature(tape.constant(Tensor({1, 2})), 0.0), ParameterError);
  EXPECT_THROW(softmax_temperature(tape.constant(Tensor({1, 2})), -1.0), ParameterError);
}

TEST(Softmax, LargeLogitsStayNormalized) {
  Rng rng = make_rng(14, "big");
  Tape tape;
  Tensor logits = random_tensor(rng, {64, 10}, -1e4, 1e4);
  for (double tau : {0.5, 1.0, 2.0, 7.0}) {
    Var p = softmax_temperature(tape.constant(logits), tau);
    for (std::size_t r = 0; r < 64; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 10; ++k) {
        float v = p.value()[r * 10 + k];
        EXPECT_GE(v, 0.0f);
        EXPECT_TRUE(std::isfinite(v));
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(KlDivergence, Examples) {
  Tape tape;
  Var same = kl_divergence(tape.constant(Tensor({1, 2}, 0.5f)), tape.constant(Tensor({1, 2}, 0.5f)));
  EXPECT_NEAR(same.value().item(), 0.0, 1e-12);
  Var ln2 = kl_divergence(tape.constant(Tensor({1, 2}, std::vector<float>{1.0f, 0.0f})),
                          tape.constant(Tensor({1, 2}, 0.5f)));
  EXPECT_NEAR(ln2.value().item(), std::numbers::ln2, 1e-6);
  EXPECT_THROW(kl_divergence(tape.constant(Tensor({1, 2})), tape.constant(Tensor({1, 3}))), DimensionError);
}

TEST(KlDivergence, MatchesDirectSum) {
  Rng rng = make_rng(15, "kl");
  for (int trial = 0; trial < 20; ++trial) {
    DTensor p = random_distribution<double>(rng, 3, 6), q = random_distribution<double>(rng, 3, 6);
    DTape tape;
    double got = kl_divergence(tape.constant(p), tape.constant(q)).value().item();
    double expect = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) expect += p[i] * std::log(p[i] / q[i]);
    expect /= 3.0;
    EXPECT_NEAR(got, expect, 1e-6);
    EXPECT_GE(got, 0.0);
    DTape t2;
    EXPECT_LE(kl_divergence(t2.constant(p), t2.constant(p)).value().item(), 1e-9);
  }
}

TEST(CrossEntropy, Examples) {
  Tape tape;
  Var a = cross_entropy(tape.constant(Tensor({1, 2}, std::vector<float>{1000.0f, 0.0f})),
                        Tensor({1, 2}, std::vector<float>{1.0f, 0.0f}));
  EXPECT_NEAR(a.value().item(), 0.0, 1e-6);
  Var b = cross_entropy(tape.constant(Tensor({1, 2}, 0.0f)), Tensor({1, 2}, std::vector<float>{0.0f, 1.0f}));
  EXPECT_NEAR(b.value().item(), std::numbers::ln2, 1e-6);

  Var c = cross_entropy(tape.constant(Tensor({1, 2}, std::vector<float>{1.0f, -1.0f})), Tensor({1, 2}, 0.5f));
  double lse = std::log(std::exp(1.0) + std::exp(-1.0));
  double ce0 = lse - 1.0, ce1 = lse + 1.0;
  EXPECT_NEAR(c.value().item(), 0.5 * (ce0 + ce1), 1e-6);
}

TEST(CrossEntropy, RejectsUnnormalizedLabels) {
  Tape tape;
  Var logits = tape.constant(Tensor({2, 2}));
  EXPECT_THROW(cross_entropy(logits, Tensor({2, 2}, 1.0f)), ValidationError);
  EXPECT_THROW(cross_entropy(logits, Tensor({2, 2}, std::vector<float>{1.5f, -0.5f, 0.5f, 0.5f})),
               ValidationError);
  EXPECT_THROW(cross_entropy(logits, Tensor({2, 3})), DimensionError);
}

TEST(Backward, LinearAndSquare) {
  Tape t1;
  Var w = t1.leaf(Tensor({2, 3}, 0.7f), true, "w");
  auto g = t1.backward(sum(w));
  for (float v : g.at("w").data()) EXPECT_EQ(v, 1.0f);

  Tape t2;
  Var u = t2.leaf(Tensor({2}, std::vector<float>{1.0f, -2.0f}), true, "u");
  auto g2 = t2.backward(sum(square(u)));
  EXPECT_EQ(g2.at("u")[0], 2.0f);
  EXPECT_EQ(g2.at("u")[1], -4.0f);
}

TEST(Backward, Errors) {
  Tape tape;
  Var w = tape.leaf(Tensor({3}, 1.0f), true, "w");
  Var c = tape.leaf(Tensor({3}, 2.0f), false, "c");
  EXPECT_THROW(tape.backward(mul(w, c)), DimensionError);
  auto g = tape.backward(sum(mul(w, c)));
  EXPECT_EQ(g.count("c"), 0u);
  EXPECT_EQ(g.at("w")[0], 2.0f);
  EXPECT_THROW(tape.backward(sum(w)), Error);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  Var w = tape.leaf(Tensor({2}, std::vector<float>{3.0f, -1.0f}), true, "w");
  auto g = tape.backward(sum(add(mul(w, w), scale(w, 4.0))));
  EXPECT_EQ(g.at("w")[0], 10.0f);
  EXPECT_EQ(g.at("w")[1], 2.0f);
}

TEST(GradCheck, Elementwise) {
  Rng rng = make_rng(20, "gc");
  DTensor a = spread(rng, {3, 4}), b = spread(rng, {3, 4});
  expect_grads({a, b}, [](DTape& t, const auto& v) { return weighted_sum(t, add(v[0], v[1])); });
  expect_grads({a, b}, [](DTape& t, const auto& v) { return weighted_sum(t, sub(v[0], v[1])); });
  expect_grads({a, b}, [](DTape& t, const auto& v) { return weighted_sum(t, mul(v[0], v[1])); });
  expect_grads({a}, [](DTape& t, const auto& v) { return weighted_sum(t, scale(v[0], -1.7)); });
  expect_grads({a}, [](DTape& t, const auto& v) { return weighted_sum(t, square(v[0])); });
  expect_grads({a}, [](DTape&, const auto& v) { return mean(v[0]); });
  expect_grads({a}, [](DTape& t, const auto& v) { return weighted_sum(t, relu(v[0])); });
}

TEST(GradCheck, DenseLayer) {
  Rng rng = make_rng(21, "dense");
  DTensor x = random_tensor<double>(rng, {4, 5}), w = random_tensor<double>(rng, {5, 3}),
          b = random_tensor<double>(rng, {3});
  expect_grads({x, w, b}, [](DTape& t, const auto& v) { return weighted_sum(t, add_bias(matmul(v[0], v[1]), v[2])); });
}

TEST(GradCheck, Convolution) {
  Rng rng = make_rng(22, "conv-gc");
  struct Case {
    std::size_t h, w, c, k, f, stride;
    Padding pad;
  };
  for (Case cs : {Case{5, 6, 2, 3, 3, 1, Padding::same}, Case{5, 5, 2, 3, 2, 2, Padding::valid},
                  Case{6, 5, 3, 5, 2, 1, Padding::same}, Case{4, 4, 3, 1, 4, 1, Padding::same},
                  Case{7, 6, 2, 3, 2, 2, Padding::same}}) {
    DTensor x = random_tensor<double>(rng, {2, cs.h, cs.w, cs.c});
    DTensor k = random_tensor<double>(rng, {cs.k, cs.k, cs.c, cs.f});
    expect_grads({x, k}, [cs](DTape& t, const auto& v) { return weighted_sum(t, conv2d(v[0], v[1], cs.stride, cs.pad)); });
  }
}

TEST(GradCheck, Pooling) {
  Rng rng = make_rng(23, "pool");
  DTensor x = spread(rng, {2, 5, 6, 3});
  expect_grads({x}, [](DTape& t, const auto& v) { return weighted_sum(t, max_pool2d(v[0], 3, 1, Padding::same)); });
  expect_grads({x}, [](DTape& t, const auto& v) { return weighted_sum(t, max_pool2d(v[0], 2, 2, Padding::valid)); });
  expect_grads({x}, [](DTape& t, const auto& v) { return weighted_sum(t, global_avg_pool(v[0])); });
}

TEST(GradCheck, Concat) {
  Rng rng = make_rng(24, "concat");
  DTensor a = random_tensor<double>(rng, {2, 3, 2}), b = random_tensor<double>(rng, {2, 3, 4});
  expect_grads({a, b}, [](DTape& t, const auto& v) { return weighted_sum(t, concat_last<double>({v[0], v[1], v[0]})); });
}

TEST(GradCheck, SoftmaxAndLosses) {
  Rng rng = make_rng(25, "losses");
  DTensor logits = random_tensor<double>(rng, {4, 5}, -3.0, 3.0);
  DTensor labels = random_distribution<double>(rng, 4, 5);
  DTensor p = random_distribution<double>(rng, 4, 5), q = random_distribution<double>(rng, 4, 5);
  expect_grads({logits}, [](DTape& t, const auto& v) { return weighted_sum(t, softmax_temperature(v[0], 2.0)); });
  expect_grads({logits}, [](DTape& t, const auto& v) { return weighted_sum(t, log_softmax(v[0])); });
  expect_grads({logits}, [labels](DTape&, const auto& v) { return cross_entropy(v[0], labels); });
  expect_grads({p, q}, [](DTape&, const auto& v) { return kl_divergence(v[0], v[1]); });
}

TEST(GradCheck, CoversAtLeastTwoHundredCoordinates) {
  Rng rng = make_rng(26, "count");
  DTensor x = random_tensor<double>(rng, {2, 6, 6, 3}), k = random_tensor<double>(rng, {3, 3, 3, 4});
  auto r = grad_check({x, k}, [](DTape& t, const auto& v) { return weighted_sum(t, conv2d(v[0], v[1], 1, Padding::same)); });
  EXPECT_GE(r.checked, 200u);
  EXPECT_EQ(r.failed, 0u);
}

TEST(Ops, FiniteOnFiniteInputs) {
  Rng rng = make_rng(27, "finite");
  Tape tape;
  Var x = tape.constant(random_tensor(rng, {2, 8, 8, 3}, -50, 50));
  Var k = tape.constant(random_tensor(rng, {3, 3, 3, 4}));
  Var y = global_avg_pool(max_pool2d(relu(conv2d(x, k, 1, Padding::same)), 2, 2, Padding::valid));
  Var ls = log_softmax(scale(y, 100.0));
  EXPECT_TRUE(all_finite(ls.value()));
}
