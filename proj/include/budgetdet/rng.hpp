#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace budgetdet {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent seeds from one root.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for a path of stream identifiers under `root`.
/// Child streams do not depend on thread scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(root);
  for (const auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags for derive_seed.
enum class Stream : std::uint64_t {
  init = 1,
  data = 2,
  shuffle = 3,
  rollout = 4,
  baseline = 5,
  eval = 6,
  classifier = 7,
};

constexpr std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace budgetdet
