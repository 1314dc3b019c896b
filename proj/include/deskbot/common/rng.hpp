#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace deskbot {

// SplitMix64 finalizer; used to derive independent sub-seeds.
constexpr uint64_t Mix64(uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t DeriveSeed(uint64_t seed, uint64_t stream) noexcept {
  return Mix64(seed ^ Mix64(stream + 0x632be59bd9b4e019ULL));
}

uint64_t HashTag(std::string_view tag) noexcept;

// Seeded generator whose derived distributions are bit-reproducible across
// standard libraries (std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }
  // [0, 1) with 53 bits of mantissa.
  double Uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform01(); }
  // Unbiased integer in [0, n).
  uint64_t Below(uint64_t n);
  bool Bernoulli(double p) { return Uniform01() < p; }
  double Normal(double mean, double sigma);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace deskbot
