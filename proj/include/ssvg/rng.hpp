#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace ssvg {

// Deterministic splitmix64 generator. Standard-library distributions are
// implementation-defined, so all sampling helpers live here and produce the
// same stream on every platform/compiler.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n). Rejection-free modulo is fine at our n << 2^64 scales.
  int uniform_int(int n) { return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a root seed, a purpose label and an
// index. Every phase of the pipeline (data/init/train/augment/...) draws from
// its own named stream so adding draws to one phase cannot shift another.
inline uint64_t substream(uint64_t root, std::string_view name, uint64_t index = 0) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](uint64_t x) {
    h ^= x;
    h *= 0x100000001b3ULL;
  };
  mix(root);
  for (char c : name) mix(static_cast<uint8_t>(c));
  mix(index + 0x9e3779b97f4a7c15ULL);
  // splitmix finalizer to spread the FNV state
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

}  // namespace ssvg
