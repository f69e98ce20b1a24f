#ifndef PARANASAL_CORE_HPP
#define PARANASAL_CORE_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace paranasal {

// File could not be opened / read / written.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File exists but its content is not what the format requires.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Payload has the wrong dimensionality (e.g. a 4D series where a 3D volume
// is required).
struct ndim_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Side { left = 0, right = 1 };

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

inline Side side_from_string(std::string_view s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  throw format_error("unknown side: '" + std::string(s) + "'");
}

// Anomaly is the positive class throughout.
enum class Label { normal = 0, anomaly = 1 };

inline const char* to_string(Label l) { return l == Label::normal ? "normal" : "anomaly"; }

inline Label label_from_string(std::string_view s) {
  if (s == "normal") return Label::normal;
  if (s == "anomaly") return Label::anomaly;
  throw format_error("unknown label: '" + std::string(s) + "'");
}

// The experimental grids the pipeline is validated on. Other values are
// accepted when explicitly overridden at the configuration level.
inline constexpr std::array<int, 5> supported_patch_sizes{25, 30, 35, 40, 45};
inline constexpr std::array<int, 5> supported_sample_counts{1, 5, 10, 15, 20};

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic 64-bit generator (splitmix64 core). Hand-rolled so that
// sampled values are identical across compilers and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller. sigma == 0 returns exactly mu.
  double normal(double mu = 0.0, double sigma = 1.0) {
    if (!have_cached_) {
      double u1 = uniform();
      double u2 = uniform();
      if (u1 <= 0.0) u1 = 0x1.0p-53;
      double r = std::sqrt(-2.0 * std::log(u1));
      double a = 2.0 * M_PI * u2;
      cached_ = r * std::sin(a);
      have_cached_ = true;
      return mu + sigma * (r * std::cos(a));
    }
    have_cached_ = false;
    return mu + sigma * cached_;
  }

  // Independent stream addressed by a label. Does not advance this
  // generator, so derivation order never matters.
  Rng derive(std::string_view label) const {
    return Rng(mix64(seed_ ^ fnv1a64(label)));
  }
  Rng derive(std::uint64_t salt) const {
    return Rng(mix64(seed_ ^ mix64(salt ^ 0x5851f42d4c957f2dull)));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = std::size_t(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Whitespace tokenizer for the delimited text tables used throughout.
inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

}  // namespace paranasal

#endif  // PARANASAL_CORE_HPP
