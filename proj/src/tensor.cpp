#include "al/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "al/binary_io.hpp"

namespace al {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(float)) == 0;
}

bool all_finite(const Tensor& t) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor TensorRecord::as_float() const {
  if (dtype == DType::f32) return Tensor(shape, f32);
  std::vector<float> out(i8.begin(), i8.end());
  return Tensor(shape, std::move(out));
}

namespace {

void write_header(std::ostream& os, const Shape& shape, DType dtype) {
  bin::write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) bin::write_u32(os, static_cast<std::uint32_t>(d));
  bin::write_u32(os, static_cast<std::uint32_t>(dtype));
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  write_header(os, t.shape(), DType::f32);
  for (float v : t.data()) bin::write_f32(os, v);
}

void write_tensor_i8(std::ostream& os, const Shape& shape, std::span<const std::int8_t> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("int8 payload length does not match shape " + shape_str(shape));
  }
  write_header(os, shape, DType::i8);
  bin::write_bytes(os, values.data(), values.size());
}

TensorRecord read_tensor_record(std::istream& is) {
  TensorRecord rec;
  std::uint32_t rank = bin::read_u32(is);
  if (rank == 0 || rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " unsupported");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = bin::read_u32(is);
    if (d == 0) throw FormatError("tensor dimension of size 0");
    rec.shape.push_back(d);
    n *= d;
    if (n > (std::size_t{1} << 32)) throw FormatError("tensor too large");
  }
  std::uint32_t tag = bin::read_u32(is);
  if (tag == 0) {
    rec.dtype = DType::f32;
    rec.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) rec.f32[i] = bin::read_f32(is);
  } else if (tag == 1) {
    rec.dtype = DType::i8;
    rec.i8.resize(n);
    bin::read_exact(is, rec.i8.data(), n);
  } else {
    throw FormatError("unknown tensor dtype tag " + std::to_string(tag));
  }
  return rec;
}

Tensor read_tensor(std::istream& is) {
  TensorRecord rec = read_tensor_record(is);
  if (rec.dtype != DType::f32) throw FormatError("expected f32 tensor, found i8");
  return Tensor(rec.shape, std::move(rec.f32));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_tensor(os, t);
  if (!os) throw InputError("write failed: " + path);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  return read_tensor(is);
}

}  // namespace al
