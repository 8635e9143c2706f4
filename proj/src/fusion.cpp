#include "al/fusion.hpp"

#include <cmath>

#include "al/error.hpp"
#include "al/ops.hpp"

namespace al {

void ClassHierarchy::validate() const {
  if (fine.empty() || coarse.empty()) throw ValidationError("hierarchy needs fine and coarse classes");
  if (parent.size() != fine.size()) {
    throw ValidationError("hierarchy: " + std::to_string(fine.size()) + " fine classes but " +
                          std::to_string(parent.size()) + " parent entries");
  }
  std::vector<std::size_t> kids(coarse.size(), 0);
  for (std::size_t q = 0; q < parent.size(); ++q) {
    if (parent[q] >= coarse.size()) throw ValidationError("fine class " + fine[q] + " has no valid parent");
    ++kids[parent[q]];
  }
  for (std::size_t c = 0; c < coarse.size(); ++c) {
    if (kids[c] == 0) throw ValidationError("coarse class " + coarse[c] + " has no children");
  }
}

std::vector<std::size_t> ClassHierarchy::children(std::size_t c) const {
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < parent.size(); ++q) {
    if (parent[q] == c) out.push_back(q);
  }
  return out;
}

std::size_t ClassHierarchy::fine_index(const std::string& name) const {
  for (std::size_t i = 0; i < fine.size(); ++i) {
    if (fine[i] == name) return i;
  }
  throw ValidationError("unknown fine class " + name);
}

std::size_t ClassHierarchy::coarse_index(const std::string& name) const {
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    if (coarse[i] == name) return i;
  }
  throw ValidationError("unknown coarse class " + name);
}

ClassHierarchy ClassHierarchy::from_map(std::vector<std::string> fine, std::vector<std::string> coarse,
                                        const std::map<std::string, std::string>& coarse_of) {
  ClassHierarchy h;
  h.fine = std::move(fine);
  h.coarse = std::move(coarse);
  for (const auto& f : h.fine) {
    auto it = coarse_of.find(f);
    if (it == coarse_of.end()) throw ValidationError("fine class " + f + " has no parent");
    h.parent.push_back(h.coarse_index(it->second));
  }
  for (const auto& [f, c] : coarse_of) h.fine_index(f);
  h.validate();
  return h;
}

ClassHierarchy dcase_hierarchy() {
  return ClassHierarchy::from_map(
      {"airport", "bus", "metro", "metro_station", "park", "public_square", "shopping_mall", "street_pedestrian",
       "street_traffic", "tram"},
      {"indoor", "outdoor", "transportation"},
      {{"airport", "indoor"},
       {"shopping_mall", "indoor"},
       {"metro_station", "indoor"},
       {"street_pedestrian", "outdoor"},
       {"public_square", "outdoor"},
       {"street_traffic", "outdoor"},
       {"park", "outdoor"},
       {"bus", "transportation"},
       {"tram", "transportation"},
       {"metro", "transportation"}});
}

FusedPrediction fuse_predict(std::span<const float> f1, std::span<const float> f2, const ClassHierarchy& h) {
  if (f1.size() != h.coarse.size() || f2.size() != h.fine.size()) {
    throw DimensionError("fuse_predict: expected " + std::to_string(h.coarse.size()) + " coarse and " +
                         std::to_string(h.fine.size()) + " fine scores, got " + std::to_string(f1.size()) +
                         " and " + std::to_string(f2.size()));
  }
  if (h.parent.size() != h.fine.size()) throw ValidationError("hierarchy is missing parent entries");
  FusedPrediction out;
  out.scores.resize(f2.size());
  for (std::size_t q = 0; q < f2.size(); ++q) {
    if (h.parent[q] >= f1.size()) throw ValidationError("fine class " + h.fine[q] + " has no valid parent");
    out.scores[q] = static_cast<double>(f1[h.parent[q]]) * static_cast<double>(f2[q]);
    if (out.scores[q] > out.scores[out.label]) out.label = q;
  }
  return out;
}

Tensor fuse_scores(const Tensor& coarse_probs, const Tensor& fine_probs, const ClassHierarchy& h) {
  if (coarse_probs.rank() != 2 || fine_probs.rank() != 2 || coarse_probs.dim(0) != fine_probs.dim(0)) {
    throw DimensionError("fuse_scores: got " + shape_str(coarse_probs.shape()) + " and " +
                         shape_str(fine_probs.shape()));
  }
  const std::size_t n = fine_probs.dim(0), c = coarse_probs.dim(1), k = fine_probs.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    auto r = fuse_predict(std::span<const float>(coarse_probs.raw() + i * c, c),
                          std::span<const float>(fine_probs.raw() + i * k, k), h);
    for (std::size_t q = 0; q < k; ++q) out[i * k + q] = static_cast<float>(r.scores[q]);
  }
  return out;
}

Tensor renormalize_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("renormalize_rows expects [N, K], got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  Tensor out(scores.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t q = 0; q < k; ++q) s += scores[i * k + q];
    for (std::size_t q = 0; q < k; ++q) {
      out[i * k + q] = s > 0.0 ? static_cast<float>(scores[i * k + q] / s) : 1.0f / static_cast<float>(k);
    }
  }
  return out;
}

Tensor coarse_targets(const Tensor& fine_targets, const ClassHierarchy& h) {
  if (fine_targets.rank() != 2 || fine_targets.dim(1) != h.fine.size()) {
    throw DimensionError("coarse_targets: labels " + shape_str(fine_targets.shape()) + " vs " +
                         std::to_string(h.fine.size()) + " fine classes");
  }
  const std::size_t n = fine_targets.dim(0), k = h.fine.size(), c = h.coarse.size();
  Tensor out({n, c}, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < k; ++q) out[i * c + h.parent[q]] += fine_targets[i * k + q];
  }
  return out;
}

Var mtl_loss(Var fine_logits, Var coarse_logits, const Tensor& fine_labels, const Tensor& coarse_labels, double w,
             const ClassHierarchy* h) {
  if (!(w >= 0.0 && w <= 1.0)) throw ParameterError("MTL weight must lie in [0, 1]");
  if (h) {
    Tensor expect = coarse_targets(fine_labels, *h);
    if (expect.shape() != coarse_labels.shape()) {
      throw ValidationError("coarse labels " + shape_str(coarse_labels.shape()) + " do not match hierarchy " +
                            shape_str(expect.shape()));
    }
    for (std::size_t i = 0; i < expect.numel(); ++i) {
      if (std::fabs(expect[i] - coarse_labels[i]) > 1e-4f) {
        throw ValidationError("coarse label row " + std::to_string(i / expect.dim(1)) +
                              " is not the parent of its fine label");
      }
    }
  }
  Var fine = cross_entropy(fine_logits, fine_labels);
  Var coarse = cross_entropy(coarse_logits, coarse_labels);
  return add(scale(fine, w), scale(coarse, 1.0 - w));
}

Tensor ensemble_average(const std::vector<Tensor>& members) {
  if (members.empty()) throw ParameterError("ensemble_average needs at least one member");
  const Shape& shape = members.front().shape();
  std::vector<double> acc(members.front().numel(), 0.0);
  for (const auto& m : members) {
    if (m.shape() != shape) {
      throw DimensionError("ensemble member shape " + shape_str(m.shape()) + " vs " + shape_str(shape));
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / members.size());
  return out;
}

}  // namespace al
