#include "al/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "al/error.hpp"

namespace al {

Tensor QuantizedTensor::dequantize() const {
  std::vector<float> v(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) v[i] = scale * static_cast<float>(values[i]);
  return Tensor(shape, std::move(v));
}

float symmetric_scale(std::span<const float> x) {
  float m = 0.0f;
  for (float v : x) m = std::max(m, std::fabs(v));
  return m > 0.0f ? m / 127.0f : 1.0f;
}

std::int8_t quantize_value(float x, float scale) {
  double q = std::round(static_cast<double>(x) / static_cast<double>(scale));
  return static_cast<std::int8_t>(std::clamp(q, -127.0, 127.0));
}

QuantizedTensor quantize_tensor(const Tensor& t, const std::string& name) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError("cannot quantize " + name + ": non-finite value at index " + std::to_string(i));
    }
  }
  QuantizedTensor q;
  q.shape = t.shape();
  q.scale = symmetric_scale(t.data());
  q.values.resize(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) q.values[i] = quantize_value(t[i], q.scale);
  return q;
}

void QuantizedParams::add(std::string name, QuantizedTensor q) {
  if (contains(name)) throw ParameterError("duplicate quantized tensor " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(q));
}

const QuantizedTensor& QuantizedParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("missing quantized tensor " + name);
  return tensors_[it->second];
}

QuantizedParams quantize_weights(const ParamStore& params, const PruneMask* mask) {
  QuantizedParams out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names()[i];
    if (mask && mask->contains(name)) {
      Tensor t = params.tensor(i);
      const auto& keep = mask->at(name).keep;
      if (keep.size() != t.numel()) throw DimensionError("mask shape mismatch for " + name);
      for (std::size_t j = 0; j < keep.size(); ++j) {
        if (!keep[j]) t[j] = 0.0f;
      }
      out.add(name, quantize_tensor(t, name));
    } else {
      out.add(name, quantize_tensor(params.tensor(i), name));
    }
  }
  return out;
}

ParamStore dequantize_params(const QuantizedParams& q) {
  ParamStore out;
  for (std::size_t i = 0; i < q.size(); ++i) out.add(q.names()[i], q.tensor(i).dequantize());
  return out;
}

ActivationQuant dynamic_activation_scale(const Tensor& activations) {
  ActivationQuant a;
  for (std::size_t i = 0; i < activations.numel(); ++i) {
    if (!std::isfinite(activations[i])) throw NumericError("non-finite activation");
  }
  a.scale = symmetric_scale(activations.data());
  a.values.resize(activations.numel());
  for (std::size_t i = 0; i < activations.numel(); ++i) a.values[i] = quantize_value(activations[i], a.scale);
  return a;
}

Tensor fake_quantize(const Tensor& activations) {
  ActivationQuant a = dynamic_activation_scale(activations);
  std::vector<float> v(a.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.scale * static_cast<float>(a.values[i]);
  return Tensor(activations.shape(), std::move(v));
}

Predictions quantized_forward(const Model& model, const QuantizedParams& q, const Tensor& inputs,
                              const QuantForwardOptions& options) {
  ParamStore deq;
  for (const auto& p : model.params) {
    const QuantizedTensor& t = q.at(p.name);
    if (t.shape != p.shape) throw DimensionError("quantized tensor " + p.name + " has wrong shape");
    deq.add(p.name, t.dequantize());
  }
  ForwardOptions fo;
  if (options.quantize_activations) fo.activation_transform = fake_quantize;
  return predict(model, deq, inputs, fo, options.batch_size);
}

std::size_t quantized_size_bytes(const QuantizedParams& q, const PruneMask* mask) {
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto& t = q.tensor(i);
    const std::vector<std::uint8_t>* keep = nullptr;
    if (mask && mask->contains(q.names()[i])) keep = &mask->at(q.names()[i]).keep;
    for (std::size_t j = 0; j < t.values.size(); ++j) {
      if (t.values[j] != 0 && (!keep || (*keep)[j])) bytes += 1;
    }
    bytes += 4;
  }
  return bytes;
}

}  // namespace al
