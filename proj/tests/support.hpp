#pragma once

// Shared fixtures for the test binaries: random datasets, temp directories,
// and the ML-100K location.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "shilldet/dataset.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace shilldet;

/// Uniformly random sparse dataset; every user rates at least one item.
inline RatingDataset random_dataset(std::mt19937_64& rng, int n_users, int n_items, double density,
                                    Scale scale = {}) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> rating(scale.min, scale.max);
  std::uniform_int_distribution<int> any_item(1, n_items);
  std::vector<RatingTriple> t;
  for (int u = 1; u <= n_users; ++u) {
    bool rated = false;
    for (int i = 1; i <= n_items; ++i) {
      if (u01(rng) < density) {
        t.push_back({u, i, rating(rng)});
        rated = true;
      }
    }
    if (!rated) t.push_back({u, any_item(rng), rating(rng)});
  }
  std::vector<ItemId> catalogue(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) catalogue[static_cast<std::size_t>(i)] = i + 1;
  return RatingDataset::from_triples(std::move(t), scale, catalogue);
}

/// Ratings with user and item effects and skewed item popularity, loosely
/// shaped like MovieLens so the detector has structure to learn.
inline RatingDataset structured_dataset(std::uint64_t seed, int n_users = 300, int n_items = 400) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.9);
  std::normal_distribution<double> bias(0.0, 0.5);
  std::lognormal_distribution<double> activity(3.0, 0.7);
  std::vector<double> item_bias(static_cast<std::size_t>(n_items)), item_weight(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    item_bias[static_cast<std::size_t>(i)] = bias(rng);
    item_weight[static_cast<std::size_t>(i)] = 1.0 / std::pow(i + 1.0, 0.8);
  }
  std::discrete_distribution<int> pick(item_weight.begin(), item_weight.end());
  std::vector<RatingTriple> t;
  for (int u = 1; u <= n_users; ++u) {
    const double ub = bias(rng);
    const int n = std::clamp(static_cast<int>(activity(rng)), 5, n_items / 2);
    std::vector<char> seen(static_cast<std::size_t>(n_items), 0);
    for (int k = 0; k < n; ++k) {
      const int i = pick(rng);
      if (seen[static_cast<std::size_t>(i)]) continue;
      seen[static_cast<std::size_t>(i)] = 1;
      const double r = 3.5 + ub + item_bias[static_cast<std::size_t>(i)] + noise(rng);
      t.push_back({u, i + 1, std::clamp(static_cast<int>(std::lround(r)), 1, 5)});
    }
  }
  std::vector<ItemId> catalogue(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) catalogue[static_cast<std::size_t>(i)] = i + 1;
  return RatingDataset::from_triples(std::move(t), Scale{}, catalogue);
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("shilldet_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

  fs::path write(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    std::ofstream(p) << content;
    return p;
  }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// ML-100K u.data from $SHILLDET_ML100K or the fetch script's location.
inline std::optional<std::string> ml100k_path() {
  if (const char* env = std::getenv("SHILLDET_ML100K"); env && fs::exists(env)) return std::string(env);
  const fs::path fallback = fs::path(SHILLDET_SOURCE_DIR) / "data" / "ml-100k" / "u.data";
  if (fs::exists(fallback)) return fallback.string();
  return std::nullopt;
}

/// ml-latest-small ratings.csv from $SHILLDET_ML_LATEST_SMALL or data/.
inline std::optional<std::string> ml_latest_small_path() {
  if (const char* env = std::getenv("SHILLDET_ML_LATEST_SMALL"); env && fs::exists(env)) return std::string(env);
  const fs::path fallback = fs::path(SHILLDET_SOURCE_DIR) / "data" / "ml-latest-small" / "ratings.csv";
  if (fs::exists(fallback)) return fallback.string();
  return std::nullopt;
}

}  // namespace testsupport
