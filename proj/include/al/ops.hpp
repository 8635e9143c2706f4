#pragma once

#include <cstddef>
#include <vector>

#include "al/autograd.hpp"

// Differentiable operations. Every op is instantiated for float (training
// and inference) and double (finite-difference checks). Image tensors use
// NHWC layout; convolution kernels are [kh, kw, in_channels, filters].
namespace al {

enum class Padding { valid, same };

struct PadAmount {
  std::size_t before = 0;
  std::size_t total = 0;
};

/// TensorFlow-style padding: "same" yields ceil(in/stride) outputs and puts
/// the odd pixel after.
PadAmount pad_amount(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);
/// floor((in + pad - kernel) / stride) + 1; throws when the kernel exceeds
/// the padded input.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

template <typename T> BasicVar<T> add(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> scale(BasicVar<T> a, double factor);
template <typename T> BasicVar<T> square(BasicVar<T> a);
/// Sum of all elements as a [1] tensor (double accumulation).
template <typename T> BasicVar<T> sum(BasicVar<T> a);
template <typename T> BasicVar<T> mean(BasicVar<T> a);

template <typename T> BasicVar<T> relu(BasicVar<T> x);
/// x[..., C] + bias[C].
template <typename T> BasicVar<T> add_bias(BasicVar<T> x, BasicVar<T> bias);
/// [N, D] x [D, F] -> [N, F].
template <typename T> BasicVar<T> matmul(BasicVar<T> x, BasicVar<T> w);

template <typename T>
BasicVar<T> conv2d(BasicVar<T> input, BasicVar<T> kernel, std::size_t stride, Padding padding);
template <typename T>
BasicVar<T> max_pool2d(BasicVar<T> input, std::size_t window, std::size_t stride, Padding padding);
/// [N, H, W, C] -> [N, C].
template <typename T> BasicVar<T> global_avg_pool(BasicVar<T> input);
/// Concatenates along the last axis; all leading dims must agree.
template <typename T> BasicVar<T> concat_last(const std::vector<BasicVar<T>>& parts);

/// softmax(logits / tau) along the last axis, max-subtracted.
template <typename T> BasicVar<T> softmax_temperature(BasicVar<T> logits, double tau);
template <typename T> BasicVar<T> log_softmax(BasicVar<T> logits);

/// Mean over rows of sum_k p ln(p / max(q, eps)), eps = 1e-12.
template <typename T> BasicVar<T> kl_divergence(BasicVar<T> p, BasicVar<T> q);
/// Mean over rows of -sum_k labels * log_softmax(logits). Labels may be
/// one-hot or soft but every row must sum to one.
template <typename T>
BasicVar<T> cross_entropy(BasicVar<T> logits, const BasicTensor<T>& labels);

inline constexpr double kLogEps = 1e-12;

}  // namespace al
