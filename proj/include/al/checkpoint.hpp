#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "al/features.hpp"
#include "al/hash.hpp"
#include "al/mask.hpp"
#include "al/nn.hpp"
#include "al/quantize.hpp"

namespace al {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// One model on disk. Exactly one of `params` (float32) or `quantized`
/// (int8 with per-tensor scales) holds the current weights.
struct Checkpoint {
  Digest config_hash{};
  ArchSpec arch;
  std::vector<std::string> labels;  // class names of the main head
  std::optional<ParamStore> theta0;
  std::optional<ParamStore> params;
  std::optional<QuantizedParams> quantized;
  std::optional<PruneMask> mask;
  std::optional<FeatureStats> stats;

  double size_kb() const;
  std::size_t nonzero() const;
  std::string dtype() const { return quantized ? "int8" : "float32"; }
};

/// "ALCK", version, config hash, arch json, labels, theta0, dtype-tagged
/// params, mask bitmaps, feature stats, then a SHA-256 of all prior bytes.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
/// FormatError on bad magic, unknown version, truncation or a digest mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace al
