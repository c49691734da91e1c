// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stable 64-bit hashing for content checksums and seed derivation. Values
// must never change between releases: checkpoints and attack outputs are
// keyed on them.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amulet/errors.hpp"
#include "amulet/tensor.hpp"

namespace amulet {

/// Incremental FNV-1a (64-bit).
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }
  Fnv1a& update_u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return update(b, 8);
  }
  Fnv1a& update(const Tensor2& t) {
    update_u64(t.rows());
    update_u64(t.cols());
    return update(t.data().data(), t.size() * sizeof(double));
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t checksum(std::span<const char> bytes) {
  return Fnv1a().update(bytes.data(), bytes.size()).digest();
}

inline std::uint64_t checksum(const Tensor2& t) { return Fnv1a().update(t).digest(); }

inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checksum(buf);
}

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for node `index` of a composite, applied to clip `clip_id`.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index, std::string_view clip_id) {
  return mix64(Fnv1a().update_u64(parent).update_u64(index).update(clip_id).digest());
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  return mix64(Fnv1a().update_u64(parent).update(tag).digest());
}

}  // namespace amulet
