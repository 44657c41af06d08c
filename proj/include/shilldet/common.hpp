#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>
#include <string>
#include <string_view>

namespace shilldet {

/// Raised for every recoverable failure (bad input, invalid configuration,
/// numerically singular systems). Callers map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using UserId = std::int64_t;
using ItemId = std::int64_t;

enum class Intent { push, nuke };
enum class Label { genuine, attacker, unknown };

inline std::string_view to_string(Intent i) { return i == Intent::push ? "push" : "nuke"; }

inline Intent parse_intent(std::string_view s) {
  if (s == "push") return Intent::push;
  if (s == "nuke") return Intent::nuke;
  throw Error("unknown intent '" + std::string(s) + "' (expected push|nuke)");
}

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::genuine: return "genuine";
    case Label::attacker: return "attacker";
    default: return "unknown";
  }
}

inline Label parse_label(std::string_view s) {
  if (s == "genuine") return Label::genuine;
  if (s == "attacker") return Label::attacker;
  if (s == "unknown") return Label::unknown;
  throw Error("unknown label '" + std::string(s) + "'");
}

/// Integer rating scale. With half_stars set, file values are multiplied by
/// two on load so 0.5 steps become integers, and min/max are expressed in
/// those doubled units (ml-latest-small: 1..10).
struct Scale {
  int min = 1;
  int max = 5;
  bool half_stars = false;

  bool contains(int r) const { return r >= min && r <= max; }
  int levels() const { return max - min + 1; }
  /// Mid-scale value used as the "average rating" in item attributes.
  int mid() const { return min + (max - min) / 2; }
  int extreme(Intent intent) const { return intent == Intent::push ? max : min; }
};

/// Derives an independent sub-seed from a master seed and a path of indices,
/// so parallel work items draw from streams that do not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32)};
  for (auto p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace shilldet
