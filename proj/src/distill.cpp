#include "al/distill.hpp"

#include <fstream>

#include "al/error.hpp"
#include "al/ops.hpp"

namespace al {

void DistillConfig::validate() const {
  if (!(tau > 0.0)) throw ParameterError("distill.tau must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("distill.beta must be in [0, 1]");
}

template <typename T>
BasicVar<T> distill_loss(BasicVar<T> student_logits, const BasicTensor<T>& teacher_logits,
                         const BasicTensor<T>& hard_labels, const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("distill_loss: student " + shape_str(student_logits.shape()) + " vs teacher " +
                         shape_str(teacher_logits.shape()));
  }
  auto& tape = student_logits.tape();
  BasicVar<T> ce = cross_entropy(student_logits, hard_labels);
  BasicVar<T> p = softmax_temperature(tape.constant(teacher_logits), cfg.tau);
  BasicVar<T> q = softmax_temperature(student_logits, cfg.tau);
  BasicVar<T> kl = kl_divergence(p, q);
  return add(scale(ce, 1.0 - cfg.beta), scale(kl, cfg.beta * cfg.tau * cfg.tau));
}

template BasicVar<float> distill_loss(BasicVar<float>, const BasicTensor<float>&, const BasicTensor<float>&,
                                      const DistillConfig&);
template BasicVar<double> distill_loss(BasicVar<double>, const BasicTensor<double>&, const BasicTensor<double>&,
                                       const DistillConfig&);

LossFn distill_loss_fn(const DistillConfig& cfg) {
  cfg.validate();
  return [cfg](Tape&, const ModelOutput& out, const Batch& batch) {
    if (!batch.teacher_logits) throw InputError("distillation batch carries no teacher logits");
    return distill_loss(out.logits, *batch.teacher_logits, batch.targets, cfg);
  };
}

TeacherCache::TeacherCache(std::size_t num_classes, Digest teacher_digest) : k_(num_classes), digest_(teacher_digest) {
  if (k_ == 0) throw ParameterError("TeacherCache: zero classes");
}

TeacherCache TeacherCache::build(const Model& teacher, const ParamStore& params, const Tensor& inputs,
                                 const std::vector<std::string>& ids, std::size_t batch_size) {
  if (inputs.dim(0) != ids.size()) throw DimensionError("TeacherCache::build: one id per input row required");
  Tensor logits = predict(teacher, params, inputs, {}, batch_size).logits;
  TeacherCache cache(logits.dim(1), params.digest());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    cache.insert(ids[i], std::span<const float>(logits.raw() + i * cache.k_, cache.k_));
  }
  return cache;
}

void TeacherCache::insert(const std::string& id, std::span<const float> logits) {
  if (logits.size() != k_) throw DimensionError("TeacherCache: logits row of wrong width for '" + id + "'");
  if (index_.count(id)) throw InputError("TeacherCache: duplicate clip id '" + id + "'");
  index_[id] = ids_.size();
  ids_.push_back(id);
  logits_.insert(logits_.end(), logits.begin(), logits.end());
}

Tensor TeacherCache::lookup(const std::vector<std::string>& ids) const {
  if (ids.empty()) throw ParameterError("TeacherCache::lookup: no ids");
  Tensor out({ids.size(), k_});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = index_.find(ids[i]);
    if (it == index_.end()) throw InputError("teacher logits missing for clip '" + ids[i] + "'");
    std::copy(logits_.begin() + static_cast<std::ptrdiff_t>(it->second * k_),
              logits_.begin() + static_cast<std::ptrdiff_t>((it->second + 1) * k_), out.raw() + i * k_);
  }
  return out;
}

void TeacherCache::save(const std::string& path) const {
  if (ids_.empty()) throw ParameterError("TeacherCache::save: empty cache");
  save_tensor_file(path, Tensor({ids_.size(), k_}, logits_));
  std::ofstream os(path + ".ids");
  if (!os) throw InputError("cannot write " + path + ".ids");
  os << to_hex(digest_) << "\n";
  for (const auto& id : ids_) os << id << "\n";
}

TeacherCache TeacherCache::load(const std::string& path) {
  Tensor t = load_tensor_file(path);
  if (t.rank() != 2) throw FormatError(path + ": teacher cache must be rank 2");
  std::ifstream is(path + ".ids");
  if (!is) throw InputError("missing " + path + ".ids");
  std::string hex;
  std::getline(is, hex);
  if (hex.size() != 64) throw FormatError(path + ".ids: bad fingerprint line");
  Digest d{};
  for (std::size_t i = 0; i < 32; ++i) d[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
  TeacherCache cache(t.dim(1), d);
  std::string id;
  std::size_t row = 0;
  while (std::getline(is, id)) {
    if (id.empty()) continue;
    if (row >= t.dim(0)) throw FormatError(path + ".ids: more ids than rows");
    cache.insert(id, std::span<const float>(t.raw() + row * t.dim(1), t.dim(1)));
    ++row;
  }
  if (row != t.dim(0)) throw FormatError(path + ".ids: fewer ids than rows");
  return cache;
}

}  // namespace al
