#pragma once

// Shared vocabulary for the cdiff library: vector types, error types,
// the seeded random source and the seed-derivation rule.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cdiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when an argument violates an operation's precondition.
class precondition_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical procedure produces non-finite state and must stop.
class numerical_abort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw precondition_error(what);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Seeds
//
// Rule "splitmix64-fnv1a-v1": a child seed is obtained by folding each path
// element into the parent with one splitmix64 round. Strings are first reduced
// with 64-bit FNV-1a. The rule is stable across platforms and releases.

inline constexpr std::string_view kSeedRuleId = "splitmix64-fnv1a-v1";

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t element) {
  return splitmix64(parent ^ splitmix64(element + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) {
  for (auto e : path) parent = derive_seed(parent, e);
  return parent;
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  return derive_seed(parent, fnv1a(tag));
}

/// Seeded random source. The only mutable state any operation touches.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return uniform_(engine_) < p; }

  Vec normal_vec(Eigen::Index d) {
    Vec z(d);
    for (Eigen::Index i = 0; i < d; ++i) z[i] = normal_(engine_);
    return z;
  }

  Vec uniform_vec(Eigen::Index d) {
    Vec u(d);
    for (Eigen::Index i = 0; i < d; ++i) u[i] = uniform_(engine_);
    return u;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogTwoPi = 1.83787706640934548356;

}  // namespace cdiff
