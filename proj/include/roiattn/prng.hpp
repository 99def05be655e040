#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <vector>

namespace roiattn {

// Portable generator used for everything random in this project: xoshiro256++
// seeded through SplitMix64. Standard-library engines and distributions are
// deliberately avoided so that datasets and training runs are byte-identical
// across compilers and platforms.
//
// Stream splitting: stream(seed, id) offsets the SplitMix64 state by
// (id + 1) * golden ratio, so each image index (and each trainer phase) gets an
// independent, reproducible stream.

struct SplitMix64 {
  std::uint64_t state;

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) {
    SplitMix64 sm{seed + 0x9E3779B97F4A7C15ull * (stream + 1)};
    for (auto& word : s_) word = sm.next();
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53 usable bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Index in [0, n). n is tiny everywhere we use this, so the floor construction
  // is fine (and portable, unlike rejection loops keyed to bit layouts).
  std::size_t uniform_index(std::size_t n) {
    std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  // Marsaglia polar method; only sqrt/log, no trig, so results are stable
  // across libm implementations in practice.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Fisher-Yates, descending, swap partner drawn with uniform_index.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace roiattn
