#pragma once

// Per-user rating-behavior attributes (12) and item-distribution attributes
// (8), plus the min/max normalizer that maps training ranges onto [-1, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "shilldet/common.hpp"
#include "shilldet/dataset.hpp"

namespace shilldet {

inline constexpr std::size_t kRatingDims = 12;
inline constexpr std::size_t kItemDims = 8;

using RatingVector = std::array<double, kRatingDims>;
using ItemVector = std::array<double, kItemDims>;

inline constexpr std::array<std::string_view, kRatingDims> kRatingAttributeNames{
    "RDMA", "WDMA", "WDA", "FMD", "MeanVar", "FMV", "FMTD", "TMF", "LengthVar", "Entropy", "FAC", "UnRAPHv"};
inline constexpr std::array<std::string_view, kItemDims> kItemAttributeNames{
    "FSTI", "FSPI", "FSPII", "FSUI", "FSUII", "FSMAXRTI", "FSMINRTI", "FSARTI"};

struct ProfileFeatures {
  UserId user = 0;
  Label label = Label::unknown;
  RatingVector rating{};
  ItemVector item{};
};

/// Rating-behavior attributes of one profile.
///
/// The hypothesized target set P_T holds the items rated with the intent's
/// extreme value (r_max for push, r_min for nuke); P_F is the rest. Any ratio
/// whose denominator vanishes evaluates to 0.
inline RatingVector rating_attributes(std::span<const Rating> ratings, const ItemStats& stats, Intent intent) {
  if (ratings.empty()) throw Error("profile has no ratings");
  if (intent != stats.intent) throw Error("item stats were computed for a different intent");
  const int extreme = stats.scale.extreme(intent);
  const auto n = static_cast<double>(ratings.size());

  double abs_dev_over_nr = 0.0, abs_dev_over_nr2 = 0.0, abs_dev = 0.0;
  double user_sum = 0.0;
  for (const auto& r : ratings) {
    const double nr = stats.count[r.item];
    if (nr == 0.0) throw Error("item stats do not cover a rated item");
    const double d = std::abs(r.value - stats.mean[r.item]);
    abs_dev_over_nr += d / nr;
    abs_dev_over_nr2 += d / (nr * nr);
    abs_dev += d;
    user_sum += r.value;
  }
  const double user_mean = user_sum / n;

  double target_sum = 0.0, filler_sum = 0.0, filler_var_user = 0.0, filler_var_item = 0.0;
  std::size_t n_target = 0, n_filler = 0;
  double tmf = 0.0;
  for (const auto& r : ratings) {
    if (r.value == extreme) {
      ++n_target;
      target_sum += r.value;
      tmf = std::max(tmf, stats.extreme_fraction[r.item]);
    } else {
      ++n_filler;
      filler_sum += r.value;
      filler_var_user += (r.value - user_mean) * (r.value - user_mean);
      filler_var_item += (r.value - stats.mean[r.item]) * (r.value - stats.mean[r.item]);
    }
  }

  RatingVector out{};
  out[0] = abs_dev_over_nr / n;   // RDMA
  out[1] = abs_dev_over_nr2 / n;  // WDMA
  out[2] = abs_dev_over_nr;       // WDA
  out[3] = abs_dev / n;           // FMD
  if (n_filler > 0) {
    out[4] = filler_var_user / static_cast<double>(n_filler);  // MeanVar
    out[5] = filler_var_item / static_cast<double>(n_filler);  // FMV
  }
  if (n_target > 0 && n_filler > 0) {
    out[6] = std::abs(target_sum / static_cast<double>(n_target) - filler_sum / static_cast<double>(n_filler));
  }
  out[7] = tmf;
  if (stats.length_sq_deviation > 0.0) {
    out[8] = std::abs(n - stats.mean_length) / stats.length_sq_deviation;
  }

  // Entropy of the rating-value histogram.
  std::vector<int> hist(static_cast<std::size_t>(stats.scale.levels()), 0);
  for (const auto& r : ratings) ++hist[static_cast<std::size_t>(r.value - stats.scale.min)];
  double entropy = 0.0;
  for (int h : hist) {
    if (h == 0) continue;
    const double p = h / n;
    entropy -= p * std::log2(p);
  }
  out[9] = entropy;

  // FAC: Pearson correlation of the user's ratings with the item means.
  double item_mean_avg = 0.0;
  for (const auto& r : ratings) item_mean_avg += stats.mean[r.item];
  item_mean_avg /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& r : ratings) {
    const double x = r.value - user_mean;
    const double y = stats.mean[r.item] - item_mean_avg;
    sxy += x * y;
    sxx += x * x;
    syy += y * y;
  }
  if (sxx > 0.0 && syy > 0.0) out[10] = sxy / std::sqrt(sxx * syy);

  // UnRAP Hv-score: residue after removing user, item and system effects.
  double hv_num = 0.0, hv_den = 0.0;
  for (const auto& r : ratings) {
    const double e = r.value - user_mean - stats.mean[r.item] + stats.system_mean;
    const double d = r.value - stats.mean[r.item];
    hv_num += e * e;
    hv_den += d * d;
  }
  if (hv_den > 0.0) out[11] = hv_num / hv_den;
  return out;
}

/// Item-distribution attributes of one profile. `mid_rating` is the value
/// counted by FSARTI; it defaults to the middle of the scale.
inline ItemVector item_attributes(std::span<const Rating> ratings, const ItemStats& stats,
                                  std::optional<int> mid_rating = std::nullopt) {
  if (ratings.empty()) throw Error("profile has no ratings");
  const int mid = mid_rating.value_or(stats.scale.mid());
  const auto n = static_cast<double>(ratings.size());
  const auto total = static_cast<double>(stats.num_items);
  double pop = 0, unpop = 0, at_max = 0, at_min = 0, at_mid = 0;
  for (const auto& r : ratings) {
    pop += stats.is_popular[r.item];
    unpop += stats.is_unpopular[r.item];
    at_max += r.value == stats.scale.max;
    at_min += r.value == stats.scale.min;
    at_mid += r.value == mid;
  }
  ItemVector out{};
  out[0] = n / total;
  out[1] = stats.popular.empty() ? 0.0 : pop / static_cast<double>(stats.popular.size());
  out[2] = pop / n;
  out[3] = stats.unpopular.empty() ? 0.0 : unpop / static_cast<double>(stats.unpopular.size());
  out[4] = unpop / n;
  out[5] = at_max / total;
  out[6] = at_min / total;
  out[7] = at_mid / total;
  return out;
}

/// Features of every user in `ds`, in user-id order.
inline std::vector<ProfileFeatures> extract_features(const RatingDataset& ds, const ItemStats& stats,
                                                     std::optional<int> mid_rating = std::nullopt) {
  if (stats.num_items != ds.num_items()) throw Error("item stats do not match dataset");
  std::vector<ProfileFeatures> out;
  out.reserve(ds.num_users());
  for (const auto& u : ds.users()) {
    out.push_back({u.id, u.label, rating_attributes(u.ratings, stats, stats.intent),
                   item_attributes(u.ratings, stats, mid_rating)});
  }
  return out;
}

/// Componentwise min/max scaling to [-1, 1] with bounds frozen at fit time.
/// Attributes with zero training range map to 0.
template <std::size_t N>
struct Normalizer {
  std::array<double, N> min{};
  std::array<double, N> max{};

  bool zero_range(std::size_t j) const { return !(max[j] > min[j]); }

  std::array<double, N> apply(const std::array<double, N>& v) const {
    std::array<double, N> out{};
    for (std::size_t j = 0; j < N; ++j) {
      out[j] = zero_range(j) ? 0.0 : 2.0 * (v[j] - min[j]) / (max[j] - min[j]) - 1.0;
    }
    return out;
  }
};

template <std::size_t N>
Normalizer<N> fit_normalizer(std::span<const std::array<double, N>> rows) {
  if (rows.size() < 2) throw Error("normalizer needs at least 2 training rows");
  Normalizer<N> n;
  n.min.fill(std::numeric_limits<double>::infinity());
  n.max.fill(-std::numeric_limits<double>::infinity());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < N; ++j) {
      n.min[j] = std::min(n.min[j], r[j]);
      n.max[j] = std::max(n.max[j], r[j]);
    }
  }
  return n;
}

/// Input and output normalizers fitted together on a training feature set.
struct FeatureNormalizer {
  Normalizer<kRatingDims> rating;
  Normalizer<kItemDims> item;

  ProfileFeatures apply(const ProfileFeatures& f) const {
    return {f.user, f.label, rating.apply(f.rating), item.apply(f.item)};
  }
};

inline FeatureNormalizer fit_normalizer(std::span<const ProfileFeatures> training) {
  std::vector<RatingVector> r;
  std::vector<ItemVector> i;
  r.reserve(training.size());
  i.reserve(training.size());
  for (const auto& f : training) {
    r.push_back(f.rating);
    i.push_back(f.item);
  }
  return {fit_normalizer<kRatingDims>(std::span<const RatingVector>(r)),
          fit_normalizer<kItemDims>(std::span<const ItemVector>(i))};
}

inline std::vector<ProfileFeatures> apply_normalizer(const FeatureNormalizer& n,
                                                     std::span<const ProfileFeatures> features) {
  std::vector<ProfileFeatures> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(n.apply(f));
  return out;
}

/// One row per user: `user,label,RDMA,...,UnRAPHv,FSTI,...,FSARTI`.
inline void write_features_csv(std::span<const ProfileFeatures> features, std::ostream& out) {
  out << "user,label";
  for (auto name : kRatingAttributeNames) out << ',' << name;
  for (auto name : kItemAttributeNames) out << ',' << name;
  out << '\n';
  const auto old = out.precision(17);
  for (const auto& f : features) {
    out << f.user << ',' << to_string(f.label);
    for (double v : f.rating) out << ',' << v;
    for (double v : f.item) out << ',' << v;
    out << '\n';
  }
  out.precision(old);
}

}  // namespace shilldet
