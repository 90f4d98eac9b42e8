#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace logid {

// Error categories surfaced by the library. The CLI maps these onto
// distinct process exit codes.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& msg) : std::invalid_argument(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class SegmentationFailed : public std::runtime_error {
 public:
  explicit SegmentationFailed(const std::string& msg) : std::runtime_error(msg) {}
};

class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

class IncomparableTemplates : public std::runtime_error {
 public:
  explicit IncomparableTemplates(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64: cheap stateless mixer used to derive independent sub-seeds
// from a master seed. Keeps every randomized stage a pure function of the
// seeds that name it.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return seed_combine(seed_combine(a, b), c);
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                                  std::uint64_t d) {
  return seed_combine(seed_combine(a, b, c), d);
}

// Thin wrapper around mt19937_64 with the handful of draws the project uses.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  // inclusive on both ends
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  std::uint64_t next_u64() { return gen_(); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace logid
