#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "t2vshield/error.hpp"

namespace t2vshield {

inline std::array<std::uint8_t, SHA256_DIGEST_LENGTH> sha256_raw(std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, SHA256_DIGEST_LENGTH> out{};
  SHA256(data.data(), data.size(), out.data());
  return out;
}

inline std::array<std::uint8_t, SHA256_DIGEST_LENGTH> sha256_raw(std::string_view data) {
  return sha256_raw(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out += kHex[b >> 4];
    out += kHex[b & 0xF];
  }
  return out;
}

inline std::string sha256_hex(std::string_view data) { return to_hex(sha256_raw(data)); }
inline std::string sha256_hex(std::span<const std::uint8_t> data) { return to_hex(sha256_raw(data)); }

/// First 8 digest bytes as an integer; used to seed deterministic generators.
inline std::uint64_t digest_seed(std::string_view data) {
  auto d = sha256_raw(data);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
  return v;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  if (data.empty()) return {};
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw ValidationError("base64 input length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ValidationError("invalid base64 input");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace t2vshield
