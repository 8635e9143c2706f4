#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "al/mask.hpp"
#include "al/nn.hpp"
#include "al/tensor.hpp"

namespace al {

/// Symmetric int8 tensor: value = scale * q, zero-point 0.
struct QuantizedTensor {
  Shape shape;
  std::vector<std::int8_t> values;
  float scale = 1.0f;

  Tensor dequantize() const;
};

/// max|x| / 127, or 1 for an all-zero input.
float symmetric_scale(std::span<const float> x);
/// round(x / scale), halves away from zero, clamped to [-127, 127].
std::int8_t quantize_value(float x, float scale);

/// Throws NumericError naming `name` on a non-finite value.
QuantizedTensor quantize_tensor(const Tensor& t, const std::string& name = "tensor");

class QuantizedParams {
 public:
  void add(std::string name, QuantizedTensor q);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const QuantizedTensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }
  const QuantizedTensor& tensor(std::size_t i) const { return tensors_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<QuantizedTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Quantizes every tensor, kernels and biases alike. Masked-out
/// coordinates are zeroed first.
QuantizedParams quantize_weights(const ParamStore& params, const PruneMask* mask = nullptr);
ParamStore dequantize_params(const QuantizedParams& q);

struct ActivationQuant {
  std::vector<std::int8_t> values;
  float scale = 1.0f;
};

/// Per-call scale from the batch's own range.
ActivationQuant dynamic_activation_scale(const Tensor& activations);
/// Quantize then dequantize with the dynamic scale.
Tensor fake_quantize(const Tensor& activations);

struct QuantForwardOptions {
  bool quantize_activations = true;
  std::size_t batch_size = 64;
};

/// Inference on dequantized weights with every conv/dense input passed
/// through fake_quantize. Throws ParameterError if a model tensor is
/// missing from `q`.
Predictions quantized_forward(const Model& model, const QuantizedParams& q, const Tensor& inputs,
                              const QuantForwardOptions& options = {});

/// Nonzero int8 values (1 byte each) plus a 4-byte scale per tensor.
std::size_t quantized_size_bytes(const QuantizedParams& q, const PruneMask* mask = nullptr);

}  // namespace al
