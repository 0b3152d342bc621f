#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dcqg {

/// Lower and upper bound applied to every difficulty and ability estimate.
inline constexpr double kLogitMin = -6.0;
inline constexpr double kLogitMax = 6.0;

/// Raised when an estimation routine is handed ids it cannot work with
/// (items without responses, responders without responses, ...).
class IdListError : public std::invalid_argument {
 public:
  IdListError(const std::string& what, std::vector<std::string> ids)
      : std::invalid_argument(what + ": " + join_ids(ids)), ids_(std::move(ids)) {}

  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  static std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ", ";
      out += ids[i];
    }
    return out;
  }

  std::vector<std::string> ids_;
};

/// Input file problems; carries the 1-based line number when known.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string(name) + " must be finite");
  }
}

inline double clamp_logit(double v) {
  return v < kLogitMin ? kLogitMin : (v > kLogitMax ? kLogitMax : v);
}

// 64-bit FNV-1a; stable across platforms, used for seed fan-out.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-stage seed: `seed + fnv1a64(stage)`, then mixed so nearby seeds
/// do not produce correlated streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  return splitmix64(seed + fnv1a64(stage));
}

/// One-decimal fixed notation with an explicit minus sign and no "-0.0".
inline std::string format_difficulty(double b) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", b);
  std::string s(buf);
  if (s == "-0.0") s = "0.0";
  return s;
}

/// Integer key of the 0.1-step difficulty bin containing `b`.
inline long difficulty_bin_key(double b) { return std::lround(b * 10.0); }

inline double bin_key_value(long key) { return static_cast<double>(key) / 10.0; }

}  // namespace dcqg
