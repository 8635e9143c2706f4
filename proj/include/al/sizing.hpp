#pragma once

#include <cstddef>
#include <string>

#include "al/mask.hpp"
#include "al/nn.hpp"
#include "al/quantize.hpp"

namespace al {

/// Exact nonzero count; masked-out coordinates count as zero.
std::size_t count_nonzero(const ParamStore& params, const PruneMask* mask = nullptr);
std::size_t count_nonzero(const QuantizedParams& params, const PruneMask* mask = nullptr);

/// nonzero * bytes_per_param / 1024, plus 4 bytes per scale tensor.
double size_kb(std::size_t nonzero, std::size_t bytes_per_param, std::size_t scale_tensors = 0);
/// Float32 weights.
double size_kb(const ParamStore& params, const PruneMask* mask = nullptr);
/// Int8 weights with their per-tensor scales.
double size_kb(const QuantizedParams& params, const PruneMask* mask = nullptr);

/// base / compressed; compressed must be positive.
double compression_rate(double base_kb, double compressed_kb);

struct SizeReport {
  std::string model_id;
  std::string dtype;  // "float32" or "int8"
  std::size_t nonzero = 0;
  double kb = 0.0;
  double compression = 1.0;
};

SizeReport size_report(const std::string& model_id, const ParamStore& params, const PruneMask* mask,
                       double baseline_kb);
SizeReport size_report(const std::string& model_id, const QuantizedParams& params, const PruneMask* mask,
                       double baseline_kb);

}  // namespace al
