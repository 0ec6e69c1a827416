// Copyright 2026 CBX Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CBX_COMMON_H_
#define CBX_COMMON_H_

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbx {

inline void Require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG. mt19937_64 output is fully specified by the standard and
// the uniform mappings below avoid the implementation-defined std
// distributions, so identical seeds give identical streams everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t NextU64() { return gen_(); }

  // [0, 1)
  double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // inclusive bounds
  int UniformInt(int lo, int hi) {
    Require(hi >= lo, "UniformInt: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(NextU64() % span);
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Box-Muller; two uniforms per call keeps the stream layout simple.
  double Normal() {
    double u1 = Uniform();
    double u2 = Uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Independent child stream; forking does not disturb this stream's layout
  // beyond one draw.
  Rng Fork(uint64_t stream) { return Rng(SplitMix64(NextU64() ^ SplitMix64(stream))); }

 private:
  std::mt19937_64 gen_;
};

// FNV-1a, used for artifact checksums in run manifests.
inline uint64_t Fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; i++) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t ChecksumFile(const std::string& path);

// Fan-out helper for per-sample work; results must be written by index so
// thread count never changes output. n_threads <= 1 runs inline.
void ParallelFor(int n, int n_threads, const std::function<void(int)>& fn);

int EnvThreads();  // CBX_THREADS, default 1

}  // namespace cbx

#endif  // CBX_COMMON_H_
