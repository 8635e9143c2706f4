#include "al/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "al/binary_io.hpp"
#include "al/error.hpp"
#include "al/sizing.hpp"

namespace al {

namespace {

constexpr char kMagic[4] = {'A', 'L', 'C', 'K'};

enum Flags : std::uint8_t { has_theta0 = 1, has_params = 2, has_quantized = 4, has_mask = 8, has_stats = 16 };

void write_store(std::ostream& os, const ParamStore& p) {
  bin::write_u32(os, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    bin::write_string(os, p.names()[i]);
    write_tensor(os, p.tensor(i));
  }
}

ParamStore read_store(std::istream& is) {
  ParamStore p;
  const std::uint32_t n = bin::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = bin::read_string(is);
    p.add(std::move(name), read_tensor(is));
  }
  return p;
}

void write_quantized(std::ostream& os, const QuantizedParams& q) {
  bin::write_u32(os, static_cast<std::uint32_t>(q.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    bin::write_string(os, q.names()[i]);
    bin::write_f32(os, q.tensor(i).scale);
    write_tensor_i8(os, q.tensor(i).shape, q.tensor(i).values);
  }
}

QuantizedParams read_quantized(std::istream& is) {
  QuantizedParams q;
  const std::uint32_t n = bin::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = bin::read_string(is);
    QuantizedTensor t;
    t.scale = bin::read_f32(is);
    TensorRecord r = read_tensor_record(is);
    if (r.dtype != DType::i8) throw FormatError("checkpoint: quantized tensor '" + name + "' is not int8");
    t.shape = r.shape;
    t.values = std::move(r.i8);
    q.add(std::move(name), std::move(t));
  }
  return q;
}

void write_mask(std::ostream& os, const PruneMask& m) {
  bin::write_string(os, to_string(m.strategy));
  bin::write_u64(os, std::bit_cast<std::uint64_t>(m.rate));
  bin::write_u32(os, static_cast<std::uint32_t>(m.rounds));
  bin::write_u32(os, static_cast<std::uint32_t>(m.size()));
  for (const auto& e : m.entries()) {
    bin::write_string(os, e.name);
    bin::write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) bin::write_u32(os, static_cast<std::uint32_t>(d));
    std::vector<std::uint8_t> bits((e.keep.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (e.keep[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    bin::write_bytes(os, bits.data(), bits.size());
  }
}

PruneMask read_mask(std::istream& is) {
  PruneMask m;
  m.strategy = parse_mask_strategy(bin::read_string(is));
  m.rate = std::bit_cast<double>(bin::read_u64(is));
  m.rounds = bin::read_u32(is);
  const std::uint32_t n = bin::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = bin::read_string(is);
    const std::uint32_t rank = bin::read_u32(is);
    if (rank > 8) throw FormatError("checkpoint: mask rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    for (auto& d : shape) d = bin::read_u32(is);
    const std::size_t count = shape_numel(shape);
    std::vector<std::uint8_t> bits((count + 7) / 8);
    bin::read_exact(is, bits.data(), bits.size());
    std::vector<std::uint8_t> keep(count);
    for (std::size_t j = 0; j < count; ++j) keep[j] = (bits[j / 8] >> (j % 8)) & 1u;
    m.add(std::move(name), std::move(shape), std::move(keep));
  }
  return m;
}

void write_floats(std::ostream& os, const std::vector<float>& v) {
  bin::write_u32(os, static_cast<std::uint32_t>(v.size()));
  for (float f : v) bin::write_f32(os, f);
}

std::vector<float> read_floats(std::istream& is) {
  const std::uint32_t n = bin::read_u32(is);
  if (n > (1u << 20)) throw FormatError("checkpoint: stats vector too long");
  std::vector<float> v(n);
  for (auto& f : v) f = bin::read_f32(is);
  return v;
}

}  // namespace

double Checkpoint::size_kb() const {
  if (quantized) return al::size_kb(*quantized, mask ? &*mask : nullptr);
  if (params) return al::size_kb(*params, mask ? &*mask : nullptr);
  return 0.0;
}

std::size_t Checkpoint::nonzero() const {
  if (quantized) return count_nonzero(*quantized, mask ? &*mask : nullptr);
  if (params) return count_nonzero(*params, mask ? &*mask : nullptr);
  return 0;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  if (!ck.params && !ck.quantized) throw ParameterError("checkpoint has no weights");
  if (ck.params && ck.quantized) throw ParameterError("checkpoint holds both float and int8 weights");
  std::ostringstream os;
  bin::write_bytes(os, kMagic, 4);
  bin::write_u32(os, kCheckpointVersion);
  bin::write_bytes(os, ck.config_hash.data(), ck.config_hash.size());
  bin::write_string(os, arch_to_json(ck.arch));
  bin::write_u32(os, static_cast<std::uint32_t>(ck.labels.size()));
  for (const auto& l : ck.labels) bin::write_string(os, l);
  std::uint8_t flags = 0;
  if (ck.theta0) flags |= has_theta0;
  if (ck.params) flags |= has_params;
  if (ck.quantized) flags |= has_quantized;
  if (ck.mask) flags |= has_mask;
  if (ck.stats) flags |= has_stats;
  bin::write_u8(os, flags);
  if (ck.theta0) write_store(os, *ck.theta0);
  if (ck.params) write_store(os, *ck.params);
  if (ck.quantized) write_quantized(os, *ck.quantized);
  if (ck.mask) write_mask(os, *ck.mask);
  if (ck.stats) {
    write_floats(os, ck.stats->min);
    write_floats(os, ck.stats->max);
  }
  std::string body = os.str();
  const Digest d = sha256(body);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size()));
  if (!out) throw InputError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const std::string where = "checkpoint '" + path + "': ";
  if (bytes.size() < 8) throw FormatError(where + "truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(where + "bad magic (not an ALCK checkpoint)");
  std::istringstream is(bytes);
  is.ignore(4);
  const std::uint32_t version = bin::read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError(where + "unsupported version " + std::to_string(version) + " (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 8 + 32 + 32) throw FormatError(where + "truncated");
  Digest stored;
  std::memcpy(stored.data(), bytes.data() + bytes.size() - 32, 32);
  if (sha256(std::string_view(bytes.data(), bytes.size() - 32)) != stored) {
    throw FormatError(where + "truncated or corrupt (digest mismatch)");
  }
  Checkpoint ck;
  try {
    bin::read_exact(is, ck.config_hash.data(), ck.config_hash.size());
    ck.arch = arch_from_json(bin::read_string(is));
    const std::uint32_t nl = bin::read_u32(is);
    for (std::uint32_t i = 0; i < nl; ++i) ck.labels.push_back(bin::read_string(is));
    const std::uint8_t flags = bin::read_u8(is);
    if (flags & has_theta0) ck.theta0 = read_store(is);
    if (flags & has_params) ck.params = read_store(is);
    if (flags & has_quantized) ck.quantized = read_quantized(is);
    if (flags & has_mask) ck.mask = read_mask(is);
    if (flags & has_stats) {
      FeatureStats s;
      s.min = read_floats(is);
      s.max = read_floats(is);
      ck.stats = std::move(s);
    }
  } catch (const FormatError& e) {
    throw FormatError(where + e.what());
  }
  if (static_cast<std::size_t>(is.tellg()) != bytes.size() - 32) throw FormatError(where + "trailing bytes");
  if (!ck.params && !ck.quantized) throw FormatError(where + "no weights");
  return ck;
}

}  // namespace al
