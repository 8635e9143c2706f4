#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace al {

using Digest = std::array<std::uint8_t, 32>;

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const void* data, std::size_t n);
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
  template <typename T>
  Sha256& update_span(std::span<const T> values) {
    return update(values.data(), values.size_bytes());
  }
  Digest finish();

 private:
  void* ctx_;
};

Digest sha256(std::string_view data);
std::string to_hex(const Digest& d);

}  // namespace al
