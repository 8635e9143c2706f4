#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "al/tensor.hpp"

namespace al {

enum class MaskStrategy { small_weights, global_small_weights, large_final };

/// Score used to rank weights when a mask is computed.
enum class ScoreFn { final_magnitude, init_magnitude, magnitude_increase };

std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& s);
std::string to_string(ScoreFn s);
ScoreFn parse_score_fn(const std::string& s);

/// Binary keep-masks for the prunable parameters of a model, one entry per
/// parameter name; parameters without an entry are never masked.
class PruneMask {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<std::uint8_t> keep;  // 1 = surviving, 0 = pruned
  };

  void add(std::string name, Shape shape, std::vector<std::uint8_t> keep);
  void add_ones(std::string name, const Shape& shape);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Entry& at(const std::string& name) const;
  Entry& at(const std::string& name);
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t surviving(const std::string& name) const;
  std::size_t total_prunable() const;
  std::size_t total_surviving() const;

  /// Mask as a float tensor of 0/1 values for multiply-before-use.
  Tensor as_tensor(const std::string& name) const;

  MaskStrategy strategy = MaskStrategy::small_weights;
  double rate = 0.0;
  std::size_t rounds = 0;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// True when every entry of `next` is <= the matching entry of `prev`.
bool mask_is_monotone(const PruneMask& prev, const PruneMask& next);

}  // namespace al
