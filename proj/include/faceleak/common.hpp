#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, hashing and small
// formatting helpers used across the library.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <sstream>
#include <vector>

namespace faceleak {

// Error taxonomy. The CLI maps these onto its exit-code contract:
// usage/config -> 1, missing dependency/artifact -> 2, divergence -> 3.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Seeded RNG with a fixed gaussian recipe. std::normal_distribution caches
// a spare value and its algorithm is implementation-defined, so we roll our
// own Box-Muller (no spare kept) to get a stable stream per seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // 53-bit mantissa uniform in [0,1)
    return double(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t next_u64() { return engine_(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // modulo bias is irrelevant at our scales but cheap to avoid
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = std::size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a 64-bit, used for manifest/data fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ull;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update_u64(std::uint64_t v) { update(&v, sizeof v); }
  std::uint64_t digest() const { return state_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)state_);
    return std::string(buf);
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Canonical float formatting for CSV/JSON artifacts. Round-trippable and
// byte-stable across runs.
inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace faceleak
