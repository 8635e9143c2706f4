#include "al/mask.hpp"

namespace al {

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::small_weights: return "small_weights";
    case MaskStrategy::global_small_weights: return "global_small_weights";
    case MaskStrategy::large_final: return "large_final";
  }
  return "unknown";
}

MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "small_weights") return MaskStrategy::small_weights;
  if (s == "global_small_weights") return MaskStrategy::global_small_weights;
  if (s == "large_final") return MaskStrategy::large_final;
  throw ParameterError("unknown mask strategy '" + s + "'");
}

std::string to_string(ScoreFn s) {
  switch (s) {
    case ScoreFn::final_magnitude: return "final_magnitude";
    case ScoreFn::init_magnitude: return "init_magnitude";
    case ScoreFn::magnitude_increase: return "magnitude_increase";
  }
  return "unknown";
}

ScoreFn parse_score_fn(const std::string& s) {
  if (s == "final_magnitude") return ScoreFn::final_magnitude;
  if (s == "init_magnitude") return ScoreFn::init_magnitude;
  if (s == "magnitude_increase") return ScoreFn::magnitude_increase;
  throw ParameterError("unknown score function '" + s + "'");
}

void PruneMask::add(std::string name, Shape shape, std::vector<std::uint8_t> keep) {
  if (keep.size() != shape_numel(shape)) {
    throw DimensionError("mask for " + name + " has " + std::to_string(keep.size()) +
                         " entries, shape " + shape_str(shape));
  }
  if (contains(name)) throw ParameterError("duplicate mask entry " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(shape), std::move(keep)});
}

void PruneMask::add_ones(std::string name, const Shape& shape) {
  add(std::move(name), shape, std::vector<std::uint8_t>(shape_numel(shape), 1));
}

const PruneMask::Entry& PruneMask::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("no mask entry for " + name);
  return entries_[it->second];
}

PruneMask::Entry& PruneMask::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("no mask entry for " + name);
  return entries_[it->second];
}

std::size_t PruneMask::surviving(const std::string& name) const {
  std::size_t n = 0;
  for (auto k : at(name).keep) n += k;
  return n;
}

std::size_t PruneMask::total_prunable() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.keep.size();
  return n;
}

std::size_t PruneMask::total_surviving() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    for (auto k : e.keep) n += k;
  }
  return n;
}

Tensor PruneMask::as_tensor(const std::string& name) const {
  const Entry& e = at(name);
  std::vector<float> v(e.keep.begin(), e.keep.end());
  return Tensor(e.shape, std::move(v));
}

bool mask_is_monotone(const PruneMask& prev, const PruneMask& next) {
  for (const auto& e : next.entries()) {
    if (!prev.contains(e.name)) return false;
    const auto& p = prev.at(e.name).keep;
    if (p.size() != e.keep.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (e.keep[i] > p[i]) return false;
    }
  }
  return true;
}

}  // namespace al
