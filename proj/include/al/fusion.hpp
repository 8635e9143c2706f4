#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "al/autograd.hpp"
#include "al/tensor.hpp"

namespace al {

/// Two-level label tree: every fine class has one coarse parent.
struct ClassHierarchy {
  std::vector<std::string> fine;
  std::vector<std::string> coarse;
  std::vector<std::size_t> parent;  // fine index -> coarse index

  /// Throws ValidationError on a missing parent or a childless coarse class.
  void validate() const;
  std::vector<std::size_t> children(std::size_t coarse_index) const;
  std::size_t fine_index(const std::string& name) const;
  std::size_t coarse_index(const std::string& name) const;

  /// Builds from fine names and a fine -> coarse name map; coarse classes
  /// are ordered as listed in `coarse`.
  static ClassHierarchy from_map(std::vector<std::string> fine, std::vector<std::string> coarse,
                                 const std::map<std::string, std::string>& coarse_of);
};

/// The ten acoustic scenes split into indoor / outdoor / transportation.
ClassHierarchy dcase_hierarchy();

struct FusedPrediction {
  std::size_t label = 0;
  std::vector<double> scores;  // unnormalized
};

/// fused[q] = f1[parent(q)] * f2[q]; argmax with ties to the lowest index.
FusedPrediction fuse_predict(std::span<const float> f1, std::span<const float> f2, const ClassHierarchy& h);

/// Row-wise fusion of coarse [N, C] and fine [N, K] probabilities.
Tensor fuse_scores(const Tensor& coarse_probs, const Tensor& fine_probs, const ClassHierarchy& h);
/// Rows rescaled to sum to one; an all-zero row becomes uniform.
Tensor renormalize_rows(const Tensor& scores);

/// Coarse soft labels [N, C] obtained by summing fine labels per parent.
Tensor coarse_targets(const Tensor& fine_targets, const ClassHierarchy& h);

/// w * CE(fine) + (1 - w) * CE(coarse). When `h` is given the coarse labels
/// must equal the parent-aggregated fine labels (ValidationError otherwise).
Var mtl_loss(Var fine_logits, Var coarse_logits, const Tensor& fine_labels, const Tensor& coarse_labels, double w,
             const ClassHierarchy* h = nullptr);

/// Arithmetic mean of equally-shaped probability tensors.
Tensor ensemble_average(const std::vector<Tensor>& members);

}  // namespace al
