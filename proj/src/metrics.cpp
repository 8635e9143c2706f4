#include "al/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "al/error.hpp"

namespace al {

namespace {

template <typename T>
void check_rows(const BasicTensor<T>& probs, std::size_t n) {
  if (probs.rank() != 2) throw DimensionError("expected probabilities [N, K], got " + shape_str(probs.shape()));
  if (probs.dim(0) != n) throw DimensionError("probability rows and label count differ");
}

template <typename T>
std::size_t row_argmax(const BasicTensor<T>& p, std::size_t i) {
  const std::size_t k = p.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (p[i * k + j] > p[i * k + best]) best = j;
  }
  return best;
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "'");
  return v;
}

std::string devices_field(const std::map<std::string, double>& m) {
  std::string out;
  for (const auto& [k, v] : m) {
    if (!out.empty()) out += ';';
    out += k + ":" + fmt(v);
  }
  return out;
}

std::map<std::string, double> parse_devices(const std::string& s) {
  std::map<std::string, double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto c = item.rfind(':');
    if (c == std::string::npos) throw FormatError("bad device accuracy '" + item + "'");
    out[item.substr(0, c)] = to_double(item.substr(c + 1));
  }
  return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows expects [N, K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, logits[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(double(logits[i * k + j]) - mx);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = static_cast<float>(std::exp(double(logits[i * k + j]) - mx) / s);
  }
  return out;
}

template <typename T>
double accuracy(const BasicTensor<T>& probs, std::span<const std::size_t> labels) {
  check_rows(probs, labels.size());
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += row_argmax(probs, i) == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

template <typename T>
double log_loss(const BasicTensor<T>& probs, std::span<const std::size_t> labels) {
  check_rows(probs, labels.size());
  if (labels.empty()) return 0.0;
  const std::size_t k = probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw ParameterError("label " + std::to_string(labels[i]) + " out of range");
    total -= std::log(std::max(static_cast<double>(probs[i * k + labels[i]]), kLogLossClamp));
  }
  return total / static_cast<double>(labels.size());
}

template double accuracy(const BasicTensor<float>&, std::span<const std::size_t>);
template double accuracy(const BasicTensor<double>&, std::span<const std::size_t>);
template double log_loss(const BasicTensor<float>&, std::span<const std::size_t>);
template double log_loss(const BasicTensor<double>&, std::span<const std::size_t>);

std::map<std::string, double> grouped_accuracy(const Tensor& probs, std::span<const std::size_t> labels,
                                               std::span<const std::string> groups) {
  check_rows(probs, labels.size());
  if (groups.size() != labels.size()) throw DimensionError("group and label counts differ");
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& c = counts[groups[i]];
    c.first += row_argmax(probs, i) == labels[i];
    ++c.second;
  }
  std::map<std::string, double> out;
  for (const auto& [g, c] : counts) out[g] = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
  return out;
}

bool same_results(const MetricsRow& a, const MetricsRow& b) {
  MetricsRow x = a, y = b;
  x.wall_time_s = y.wall_time_s = 0.0;
  return x == y;
}

std::string report_header() {
  return "experiment,system,checkpoints,dtype,nonzero,size_kb,compression,weights_remaining,accuracy,log_loss,"
         "seen_accuracy,unseen_accuracy,device_accuracy,wall_time_s";
}

std::string to_csv(const MetricsRow& r) {
  return csv_field(r.experiment) + "," + csv_field(r.system) + "," + csv_field(r.checkpoints) + "," + r.dtype + "," + std::to_string(r.nonzero) + "," +
         fmt(r.size_kb) + "," + fmt(r.compression) + "," + fmt(r.weights_remaining) + "," + fmt(r.accuracy) + "," +
         fmt(r.log_loss) + "," + fmt(r.seen_accuracy) + "," + fmt(r.unseen_accuracy) + "," +
         devices_field(r.device_accuracy) + "," + fmt(r.wall_time_s);
}

void write_report(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write report '" + path + "'");
  out << report_header() << "\n";
  for (const auto& r : rows) out << to_csv(r) << "\n";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<MetricsRow> read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open report '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != report_header()) throw FormatError("'" + path + "' is not a metrics report");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 14) throw FormatError("report row has " + std::to_string(f.size()) + " fields, expected 14");
    MetricsRow r;
    r.experiment = f[0];
    r.system = f[1];
    r.checkpoints = f[2];
    r.dtype = f[3];
    r.nonzero = to_size(f[4]);
    r.size_kb = to_double(f[5]);
    r.compression = to_double(f[6]);
    r.weights_remaining = to_double(f[7]);
    r.accuracy = to_double(f[8]);
    r.log_loss = to_double(f[9]);
    r.seen_accuracy = to_double(f[10]);
    r.unseen_accuracy = to_double(f[11]);
    r.device_accuracy = parse_devices(f[12]);
    r.wall_time_s = to_double(f[13]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_probs(const std::string& path, std::span<const std::string> ids, std::span<const std::size_t> labels,
                 const Tensor& probs) {
  check_rows(probs, labels.size());
  if (ids.size() != labels.size()) throw DimensionError("id and label counts differ");
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  const std::size_t k = probs.dim(1);
  out << "clip_id,true_label";
  for (std::size_t j = 0; j < k; ++j) out << ",p_" << j;
  out << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << csv_field(ids[i]) << "," << labels[i];
    for (std::size_t j = 0; j < k; ++j) out << "," << fmt(probs[i * k + j]);
    out << "\n";
  }
}

ProbDump read_probs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "clip_id" || header[1] != "true_label") {
    throw FormatError("'" + path + "' is not a probability dump");
  }
  const std::size_t k = header.size() - 2;
  ProbDump d;
  std::vector<float> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != k + 2) throw FormatError("probability row width mismatch");
    d.ids.push_back(f[0]);
    d.labels.push_back(to_size(f[1]));
    for (std::size_t j = 0; j < k; ++j) values.push_back(static_cast<float>(to_double(f[j + 2])));
  }
  d.probs = Tensor({d.ids.size(), k}, std::move(values));
  return d;
}

}  // namespace al
