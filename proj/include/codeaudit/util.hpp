#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace codeaudit {

/// Bad input shape, range, or option value.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File contents that cannot be parsed or fail integrity checks.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// SplitMix64 finalizer; used to derive independent seeds per (seed, index).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent generator for stream `index` under master `seed`. Results do
/// not depend on which worker consumes the stream.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(index + 0x51ED27ULL)));
}

/// log(sum(exp(v))) with the usual max shift; -inf for empty or all -inf.
double log_sum_exp(std::span<const double> v);

/// Sum that does not depend on the order of the inputs (sorts, then adds).
double order_invariant_sum(std::vector<double> terms);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is visited
/// exactly once; callers write into per-index slots and reduce serially.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);
std::string file_fingerprint(const std::string& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace codeaudit
