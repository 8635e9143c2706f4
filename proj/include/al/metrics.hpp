#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "al/tensor.hpp"

namespace al {

inline constexpr double kLogLossClamp = 1e-15;

/// Row-wise softmax of logits [N, K].
Tensor softmax_rows(const Tensor& logits);

/// Top-1 accuracy in percent; argmax ties go to the lowest index.
template <typename T>
double accuracy(const BasicTensor<T>& probs, std::span<const std::size_t> labels);
/// Mean of -ln(max(p_true, 1e-15)).
template <typename T>
double log_loss(const BasicTensor<T>& probs, std::span<const std::size_t> labels);

/// Accuracy per group (device id), keyed by group name.
std::map<std::string, double> grouped_accuracy(const Tensor& probs, std::span<const std::size_t> labels,
                                               std::span<const std::string> groups);

struct MetricsRow {
  std::string experiment;
  std::string system;
  std::string checkpoints;  // ';'-separated files whose sizes add up to size_kb
  std::string dtype;
  std::size_t nonzero = 0;
  double size_kb = 0.0;
  double compression = 1.0;
  double weights_remaining = 1.0;
  double accuracy = 0.0;
  double log_loss = 0.0;
  double seen_accuracy = 0.0;
  double unseen_accuracy = 0.0;
  std::map<std::string, double> device_accuracy;
  double wall_time_s = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

/// Everything except timing.
bool same_results(const MetricsRow& a, const MetricsRow& b);

std::string report_header();
std::string to_csv(const MetricsRow& row);
void write_report(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_report(const std::string& path);

/// `clip_id,true_label,p_0..p_{K-1}` with round-trip precision.
void write_probs(const std::string& path, std::span<const std::string> ids, std::span<const std::size_t> labels,
                 const Tensor& probs);

struct ProbDump {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  Tensor probs;
};
ProbDump read_probs(const std::string& path);

/// One CSV line into fields; double quotes protect commas and quotes.
std::vector<std::string> split_csv(const std::string& line);
/// Quotes a field when it holds a comma, quote or newline.
std::string csv_field(const std::string& s);

}  // namespace al
