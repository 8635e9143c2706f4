#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "al/autograd.hpp"
#include "al/hash.hpp"
#include "al/nn.hpp"
#include "al/tensor.hpp"

namespace al {

struct DistillConfig {
  double tau = 2.0;
  double beta = 0.5;

  void validate() const;
};

/// (1 - beta) CE(student, labels) + beta tau^2 KL(soft(teacher) || soft(student)).
/// Teacher logits enter the tape as constants.
template <typename T>
BasicVar<T> distill_loss(BasicVar<T> student_logits, const BasicTensor<T>& teacher_logits,
                         const BasicTensor<T>& hard_labels, const DistillConfig& cfg);

/// Loss over batches carrying teacher_logits.
LossFn distill_loss_fn(const DistillConfig& cfg);

/// Teacher logits keyed by clip id, fingerprinted by the teacher parameters.
class TeacherCache {
 public:
  TeacherCache() = default;
  TeacherCache(std::size_t num_classes, Digest teacher_digest);

  /// Runs the teacher once over inputs [N, ...].
  static TeacherCache build(const Model& teacher, const ParamStore& params, const Tensor& inputs,
                            const std::vector<std::string>& ids, std::size_t batch_size = 64);

  void insert(const std::string& id, std::span<const float> logits);
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t size() const { return ids_.size(); }
  std::size_t num_classes() const { return k_; }
  const Digest& fingerprint() const { return digest_; }

  /// Rows for `ids` in order; a missing id raises InputError naming it.
  Tensor lookup(const std::vector<std::string>& ids) const;

  /// Tensor file plus `<path>.ids` (fingerprint line, then one id per line).
  void save(const std::string& path) const;
  static TeacherCache load(const std::string& path);

 private:
  std::size_t k_ = 0;
  Digest digest_{};
  std::vector<std::string> ids_;
  std::vector<float> logits_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace al
