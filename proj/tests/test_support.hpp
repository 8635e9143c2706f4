#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "al/autograd.hpp"
#include "al/ops.hpp"
#include "al/rng.hpp"
#include "al/tensor.hpp"

namespace al::test {

template <typename T = float>
BasicTensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

/// Rows that are valid probability distributions.
template <typename T = float>
BasicTensor<T> random_distribution(Rng& rng, std::size_t rows, std::size_t k) {
  BasicTensor<T> t({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double v = uniform(rng, 0.05, 1.0);
      t[r * k + j] = static_cast<T>(v);
      s += v;
    }
    for (std::size_t j = 0; j < k; ++j) t[r * k + j] = static_cast<T>(t[r * k + j] / s);
  }
  return t;
}

inline double rel_error(double a, double b, double floor = 1e-3) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

using DTape = BasicTape<double>;
using DVar = BasicVar<double>;
using DTensor = BasicTensor<double>;
using LossBuilder = std::function<DVar(DTape&, const std::vector<DVar>&)>;

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

/// Central differences on every coordinate of every input (or on up to
/// `max_coords` sampled ones per input).
inline GradCheckResult grad_check(const std::vector<DTensor>& inputs, const LossBuilder& build, double h = 1e-3,
                                  double tol = 1e-3, std::size_t max_coords = 0, std::uint64_t seed = 1) {
  std::vector<std::vector<double>> analytic;
  {
    DTape tape;
    std::vector<DVar> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], true, "in" + std::to_string(i)));
    auto grads = tape.backward(build(tape, vars));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto& g = grads.at("in" + std::to_string(i));
      analytic.emplace_back(g.data().begin(), g.data().end());
    }
  }
  auto eval = [&](const std::vector<DTensor>& xs) {
    DTape tape;
    std::vector<DVar> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return build(tape, vars).value().item();
  };
  GradCheckResult res;
  Rng rng = make_rng(seed, "gradcheck");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> coords(inputs[i].numel());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (max_coords && coords.size() > max_coords) {
      shuffle(coords, rng);
      coords.resize(max_coords);
    }
    for (std::size_t j : coords) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      double numeric = (eval(plus) - eval(minus)) / (2 * h);
      double err = rel_error(analytic[i][j], numeric);
      res.worst = std::max(res.worst, err);
      ++res.checked;
      if (err > tol) ++res.failed;
    }
  }
  return res;
}

/// sum(out * r) with a fixed random r, so every output coordinate carries
/// a distinct upstream gradient.
inline DVar weighted_sum(DTape& tape, DVar out, std::uint64_t seed = 7) {
  Rng rng = make_rng(seed, "weights");
  DTensor r = random_tensor<double>(rng, out.shape());
  return sum(mul(out, tape.constant(r)));
}

/// Direct 7-loop NHWC convolution with TF-style padding.
template <typename T>
BasicTensor<T> naive_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& k, std::size_t stride, Padding pad) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), f = k.dim(3);
  const auto ph = pad_amount(h, kh, stride, pad), pw = pad_amount(w, kw, stride, pad);
  const std::size_t oh = (h + ph.total - kh) / stride + 1, ow = (w + pw.total - kw) / stride + 1;
  BasicTensor<T> out({n, oh, ow, f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < f; ++o) {
          double acc = 0.0;
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj)
              for (std::size_t ci = 0; ci < c; ++ci) {
                long yi = static_cast<long>(i * stride + di) - static_cast<long>(ph.before);
                long xj = static_cast<long>(j * stride + dj) - static_cast<long>(pw.before);
                if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(w)) continue;
                acc += static_cast<double>(x[((b * h + yi) * w + xj) * c + ci]) *
                       static_cast<double>(k[((di * kw + dj) * c + ci) * f + o]);
              }
          out[((b * oh + i) * ow + j) * f + o] = static_cast<T>(acc);
        }
  return out;
}

}  // namespace al::test
