#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace saemlogit {

using Rng = std::mt19937_64;

/// Purposes of derived random streams. Distinct tags keep streams of different
/// stages independent even when they share a master seed and row id.
enum class StreamTag : std::uint64_t {
  kSaemSimulation = 1,
  kFisherInformation = 2,
  kLoglik = 3,
  kPrediction = 4,
  kGenerate = 5,
  kSelection = 6,
  kReplication = 7,
  kTestSet = 8,
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(master);
  for (auto k : keys) h = mix64(h ^ mix64(k));
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, StreamTag tag,
                                    std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = mix64(master ^ mix64(static_cast<std::uint64_t>(tag)));
  for (auto k : keys) h = mix64(h ^ mix64(k));
  return h;
}

/// Independent stream keyed by (master seed, purpose, keys...), e.g. (seed, SAEM, row, iteration).
inline Rng make_stream(std::uint64_t master, StreamTag tag, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, tag, keys));
}

}  // namespace saemlogit
