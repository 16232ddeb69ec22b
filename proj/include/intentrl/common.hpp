#ifndef INTENTRL_COMMON_HPP_
#define INTENTRL_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace intentrl {

// Thrown when an input file or record fails structural validation.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a pipeline stage finds a missing or tampered upstream artifact.
class UpstreamError : public std::runtime_error {
 public:
  explicit UpstreamError(const std::string& what) : std::runtime_error(what) {}
};

// 64-bit FNV-1a. Used for content fingerprints and cache keys.
uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ull);
uint64_t fnv1a64_bytes(const void* data, size_t len,
                       uint64_t h = 14695981039346656037ull);
std::string hex64(uint64_t v);

// Deterministic RNG wrapper. All draws go through hand-rolled mappings of
// mt19937_64 output so that sequences match across platforms and standard
// library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename T>
  const T& choice(const std::vector<T>& v) {
    if (v.empty()) throw std::logic_error("Rng::choice on empty vector");
    return v[static_cast<size_t>(uniform_int(0, static_cast<int64_t>(v.size()) - 1))];
  }

  // Derives a child seed from a base seed and a tag, for per-game streams.
  static uint64_t derive(uint64_t seed, std::string_view tag);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Shortest round-trip decimal representation (deterministic across runs).
std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
bool file_exists(const std::string& path);
uint64_t file_checksum(const std::string& path);

std::string trim(std::string_view s);

}  // namespace intentrl

#endif  // INTENTRL_COMMON_HPP_
