#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace convsense {

// Derives an independent substream seed from a master seed and a stream name
// (e.g. "dataset", "init", "batching", "bootstrap"). All project randomness
// flows from one top-level seed through this splitter, so component streams
// are stable under unrelated config changes.
inline std::uint64_t seed_stream(std::uint64_t master, std::string_view name) {
  // FNV-1a-style fold of the name (private constants — only determinism and
  // spread matter here), then splitmix64 finalization mixing in the master.
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (h | 1ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view name) {
  return std::mt19937_64(seed_stream(master, name));
}

}  // namespace convsense
