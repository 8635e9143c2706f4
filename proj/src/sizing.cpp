#include "al/sizing.hpp"

#include "al/error.hpp"

namespace al {

namespace {

const std::vector<std::uint8_t>* keep_of(const PruneMask* mask, const std::string& name) {
  if (!mask || !mask->contains(name)) return nullptr;
  return &mask->at(name).keep;
}

}  // namespace

std::size_t count_nonzero(const ParamStore& params, const PruneMask* mask) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.tensor(i);
    const auto* keep = keep_of(mask, params.names()[i]);
    for (std::size_t j = 0; j < t.numel(); ++j) {
      if (t[j] != 0.0f && (!keep || (*keep)[j])) ++n;
    }
  }
  return n;
}

std::size_t count_nonzero(const QuantizedParams& params, const PruneMask* mask) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    const auto* keep = keep_of(mask, params.names()[i]);
    for (std::size_t j = 0; j < t.values.size(); ++j) {
      if (t.values[j] != 0 && (!keep || (*keep)[j])) ++n;
    }
  }
  return n;
}

double size_kb(std::size_t nonzero, std::size_t bytes_per_param, std::size_t scale_tensors) {
  return static_cast<double>(nonzero * bytes_per_param + 4 * scale_tensors) / 1024.0;
}

double size_kb(const ParamStore& params, const PruneMask* mask) { return size_kb(count_nonzero(params, mask), 4); }

double size_kb(const QuantizedParams& params, const PruneMask* mask) {
  return size_kb(count_nonzero(params, mask), 1, params.size());
}

double compression_rate(double base_kb, double compressed_kb) {
  if (!(compressed_kb > 0.0)) throw ParameterError("compression rate needs a positive compressed size");
  return base_kb / compressed_kb;
}

SizeReport size_report(const std::string& model_id, const ParamStore& params, const PruneMask* mask,
                       double baseline_kb) {
  SizeReport r{model_id, "float32", count_nonzero(params, mask), 0.0, 1.0};
  r.kb = size_kb(r.nonzero, 4);
  r.compression = r.kb > 0.0 ? baseline_kb / r.kb : 0.0;
  return r;
}

SizeReport size_report(const std::string& model_id, const QuantizedParams& params, const PruneMask* mask,
                       double baseline_kb) {
  SizeReport r{model_id, "int8", count_nonzero(params, mask), 0.0, 1.0};
  r.kb = size_kb(r.nonzero, 1, params.size());
  r.compression = r.kb > 0.0 ? baseline_kb / r.kb : 0.0;
  return r;
}

}  // namespace al
