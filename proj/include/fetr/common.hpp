// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#ifndef FETR_COMMON_HPP
#define FETR_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fetr {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything derives from Error so callers can catch broadly;
// the CLI maps the concrete types to exit codes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape/extent violations (mismatched dims, indivisible extents, empty maps).
struct ShapeError : Error {
  using Error::Error;
};

/// API misuse: non-scalar backward roots, k > K, repeats < 3, ...
struct ContractError : Error {
  using Error::Error;
};

/// Bad external data: out-of-range labels, undecodable images, empty classes.
struct DataError : Error {
  using Error::Error;
};

/// Config-file problems; message carries the offending line number.
struct ConfigError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

/// Dense non-local guard tripped (too many positions for a (HW)^2 grid).
struct ResourceError : Error {
  using Error::Error;
};

/// Batch statistics requested over fewer than two elements.
struct DegenerateBatchError : Error {
  using Error::Error;
};

/// A NaN gradient reached the optimizer; message names the parameter.
struct NanGradError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Scalar dtypes
// ---------------------------------------------------------------------------

enum class DType : uint8_t { kF32 = 0, kF64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::kF32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::kF64;
}

inline const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

// ---------------------------------------------------------------------------
// Seed mixing and a deterministic RNG.
//
// std::mt19937_64 gives a portable bit stream, but the standard distributions
// are implementation-defined, so uniform/normal are derived here by hand to
// keep every platform on the same sequence.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derive a child seed from a master seed and a stream id.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x51ed2701ull));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    // Rejection sampling keeps the draw unbiased for any n.
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  /// Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fetr

#endif  // FETR_COMMON_HPP
