#pragma once

// Attack-profile synthesis for the eight profile-injection models and
// injection of the resulting profiles into a dataset.
//
// A profile is split into target items I_T (rated with the intent's extreme
// value), model-specific selected items I_S and filler items I_F. Every other
// catalogue item stays unrated.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "shilldet/common.hpp"
#include "shilldet/dataset.hpp"

namespace shilldet {

enum class AttackModel {
  aop,
  random,
  average,
  bandwagon_average,
  bandwagon_random,
  segment,
  reverse_bandwagon,
  love_hate,
};

inline constexpr std::array<AttackModel, 8> kAllAttackModels{
    AttackModel::aop,       AttackModel::random,           AttackModel::average,
    AttackModel::bandwagon_average, AttackModel::bandwagon_random, AttackModel::segment,
    AttackModel::reverse_bandwagon, AttackModel::love_hate,
};

inline std::string_view to_string(AttackModel m) {
  switch (m) {
    case AttackModel::aop: return "AOP";
    case AttackModel::random: return "Random";
    case AttackModel::average: return "Average";
    case AttackModel::bandwagon_average: return "BandwagonAverage";
    case AttackModel::bandwagon_random: return "BandwagonRandom";
    case AttackModel::segment: return "Segment";
    case AttackModel::reverse_bandwagon: return "ReverseBandwagon";
    case AttackModel::love_hate: return "LoveHate";
  }
  return "?";
}

inline AttackModel parse_attack_model(std::string_view s) {
  for (auto m : kAllAttackModels)
    if (to_string(m) == s) return m;
  throw Error("unknown attack model '" + std::string(s) + "'");
}

struct AttackSpec {
  AttackModel model = AttackModel::random;
  Intent intent = Intent::nuke;
  double attack_size = 0.125;  // attackers / genuine users
  double filler_size = 0.052;  // rated items / catalogue size
  int target_count = 1;
  std::optional<double> aop_top_percent;  // AOP only; 0.2 when unset
  std::optional<int> selected_count;      // 10 (bandwagon kinds), 5 (segment)
  std::optional<std::size_t> profile_count;  // overrides round(attack_size * genuine)
  std::uint64_t seed = 0;

  void validate() const {
    if (!(attack_size > 0.0 && attack_size <= 1.0)) throw Error("attack_size must lie in (0, 1]");
    if (!(filler_size > 0.0 && filler_size <= 1.0)) throw Error("filler_size must lie in (0, 1]");
    if (target_count < 1) throw Error("target_count must be positive");
    if (aop_top_percent && model != AttackModel::aop) throw Error("aop_top_percent is only valid for AOP");
    if (aop_top_percent && !(*aop_top_percent > 0.0 && *aop_top_percent <= 1.0))
      throw Error("aop_top_percent must lie in (0, 1]");
    if (selected_count && *selected_count < 0) throw Error("selected_count must be nonnegative");
  }

  double effective_aop_top() const { return aop_top_percent.value_or(0.2); }

  int effective_selected_count() const {
    if (selected_count) return *selected_count;
    switch (model) {
      case AttackModel::bandwagon_average:
      case AttackModel::bandwagon_random:
      case AttackModel::reverse_bandwagon: return 10;
      case AttackModel::segment: return 5;
      default: return 0;
    }
  }
};

struct ProfileEntry {
  std::uint32_t item;  // catalogue index
  int value;
};

struct AttackProfile {
  std::vector<ProfileEntry> targets;
  std::vector<ProfileEntry> selected;
  std::vector<ProfileEntry> filler;

  std::size_t size() const { return targets.size() + selected.size() + filler.size(); }
};

/// Picks the model's selected items I_S. Bandwagon: n random popular items.
/// Reverse bandwagon: n random items rated by exactly one user, topped up
/// with the least-rated items when there are fewer. Segment: the n items with
/// the most ratings (ties by catalogue order). Other models: empty.
inline std::vector<std::uint32_t> select_special_items(const ItemStats& stats, AttackModel model, int n,
                                                       std::uint64_t seed) {
  std::vector<std::uint32_t> out;
  if (n <= 0) return out;
  const auto need = static_cast<std::size_t>(n);
  std::mt19937_64 rng(seed);
  switch (model) {
    case AttackModel::bandwagon_average:
    case AttackModel::bandwagon_random: {
      if (stats.popular.size() < need) {
        throw Error("bandwagon attack needs " + std::to_string(n) + " popular items, only " +
                    std::to_string(stats.popular.size()) + " have more than " +
                    std::to_string(stats.pop_threshold) + " ratings");
      }
      out = stats.popular;
      std::shuffle(out.begin(), out.end(), rng);
      out.resize(need);
      break;
    }
    case AttackModel::reverse_bandwagon: {
      for (std::uint32_t i = 0; i < stats.num_items; ++i)
        if (stats.count[i] >= 1) out.push_back(i);
      if (out.size() < need) {
        throw Error("reverse bandwagon attack needs " + std::to_string(n) + " rated items");
      }
      std::shuffle(out.begin(), out.end(), rng);
      std::stable_sort(out.begin(), out.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return stats.count[a] < stats.count[b]; });
      out.resize(need);
      break;
    }
    case AttackModel::segment: {
      out.resize(stats.num_items);
      std::iota(out.begin(), out.end(), 0u);
      if (out.size() < need) throw Error("segment attack needs " + std::to_string(n) + " items");
      std::stable_sort(out.begin(), out.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return stats.count[a] > stats.count[b]; });
      out.resize(need);
      break;
    }
    default:
      break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

inline int draw_rating(std::mt19937_64& rng, double mean, double sd, const Scale& scale) {
  std::normal_distribution<double> dist(mean, sd);
  const double v = std::round(dist(rng));
  return static_cast<int>(std::clamp(v, static_cast<double>(scale.min), static_cast<double>(scale.max)));
}

/// Draws `k` distinct entries of `pool` (partial Fisher-Yates on a copy).
inline std::vector<std::uint32_t> sample_without_replacement(std::vector<std::uint32_t> pool, std::size_t k,
                                                             std::mt19937_64& rng) {
  k = std::min(k, pool.size());
  for (std::size_t j = 0; j < k; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
    std::swap(pool[j], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

/// Number of profiles generated for `spec` against `ds`.
inline std::size_t profile_count(const AttackSpec& spec, const RatingDataset& ds) {
  if (spec.profile_count) return *spec.profile_count;
  return static_cast<std::size_t>(std::llround(spec.attack_size * static_cast<double>(ds.count(Label::genuine))));
}

/// Filler items per profile: round(filler_size * |I|) minus the selected items.
inline std::size_t filler_count(const AttackSpec& spec, std::size_t num_items, std::size_t num_selected) {
  const auto total = static_cast<long long>(std::llround(spec.filler_size * static_cast<double>(num_items)));
  return static_cast<std::size_t>(std::max(0LL, total - static_cast<long long>(num_selected)));
}

/// Generates the attack profiles for one experiment. `stats` must describe
/// `ds` (the attacker's view of the system). Selected items are fixed for the
/// whole batch; targets and fillers are drawn per profile from sub-seeds.
inline std::vector<AttackProfile> generate_profiles(const AttackSpec& spec, const ItemStats& stats,
                                                    const RatingDataset& ds) {
  spec.validate();
  if (stats.num_items != ds.num_items()) throw Error("item stats do not match dataset");
  const Scale& scale = ds.scale();
  const int hit = scale.extreme(spec.intent);
  const int opposite = spec.intent == Intent::push ? scale.min : scale.max;

  const auto selected =
      select_special_items(stats, spec.model, spec.effective_selected_count(), derive_seed(spec.seed, {0}));
  std::vector<char> is_selected(stats.num_items, 0);
  for (auto i : selected) is_selected[i] = 1;

  int selected_value = hit;
  if (spec.model == AttackModel::reverse_bandwagon) selected_value = opposite;

  std::vector<std::uint32_t> target_pool;
  for (std::uint32_t i = 0; i < stats.num_items; ++i)
    if (!is_selected[i]) target_pool.push_back(i);
  if (target_pool.size() < static_cast<std::size_t>(spec.target_count))
    throw Error("not enough items for the requested targets");

  // AOP fillers come from the top x% of items by rating count.
  std::vector<std::uint32_t> aop_pool;
  if (spec.model == AttackModel::aop) {
    aop_pool.resize(stats.num_items);
    std::iota(aop_pool.begin(), aop_pool.end(), 0u);
    std::stable_sort(aop_pool.begin(), aop_pool.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return stats.count[a] > stats.count[b]; });
    const auto keep = static_cast<std::size_t>(
        std::ceil(spec.effective_aop_top() * static_cast<double>(stats.num_items)));
    aop_pool.resize(std::min(keep, aop_pool.size()));
  }

  const std::size_t n_profiles = profile_count(spec, ds);
  const std::size_t n_filler = filler_count(spec, stats.num_items, selected.size());
  std::vector<AttackProfile> out;
  out.reserve(n_profiles);
  for (std::size_t k = 0; k < n_profiles; ++k) {
    std::mt19937_64 rng(derive_seed(spec.seed, {1, k}));
    AttackProfile p;
    auto targets = detail::sample_without_replacement(target_pool, static_cast<std::size_t>(spec.target_count), rng);
    for (auto i : targets) p.targets.push_back({i, hit});
    for (auto i : selected) p.selected.push_back({i, selected_value});

    std::vector<char> taken(is_selected);
    for (auto i : targets) taken[i] = 1;
    std::vector<std::uint32_t> pool;
    if (spec.model == AttackModel::aop) {
      for (auto i : aop_pool)
        if (!taken[i]) pool.push_back(i);
    } else {
      for (std::uint32_t i = 0; i < stats.num_items; ++i)
        if (!taken[i]) pool.push_back(i);
    }
    auto fillers = detail::sample_without_replacement(std::move(pool), n_filler, rng);
    for (auto i : fillers) {
      int v = 0;
      switch (spec.model) {
        case AttackModel::random:
        case AttackModel::bandwagon_random:
        case AttackModel::reverse_bandwagon:
          v = detail::draw_rating(rng, stats.system_mean, stats.system_stddev, scale);
          break;
        case AttackModel::average:
        case AttackModel::bandwagon_average:
        case AttackModel::aop:
          v = detail::draw_rating(rng, stats.mean[i], stats.stddev[i], scale);
          break;
        case AttackModel::segment:
        case AttackModel::love_hate:
          v = opposite;
          break;
      }
      p.filler.push_back({i, v});
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Converts profiles to attacker-labeled users with ids first_id, first_id+1, ...
inline std::vector<UserProfile> profiles_to_users(const std::vector<AttackProfile>& profiles, UserId first_id) {
  std::vector<UserProfile> users;
  users.reserve(profiles.size());
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    UserProfile u{first_id + static_cast<UserId>(k), Label::attacker, {}};
    for (const auto* part : {&profiles[k].targets, &profiles[k].selected, &profiles[k].filler})
      for (const auto& e : *part) u.ratings.push_back({e.item, e.value});
    std::sort(u.ratings.begin(), u.ratings.end(), [](const Rating& a, const Rating& b) { return a.item < b.item; });
    users.push_back(std::move(u));
  }
  return users;
}

/// Appends the profiles as new attacker users after the largest existing id.
inline RatingDataset inject(const RatingDataset& ds, const std::vector<AttackProfile>& profiles) {
  if (profiles.empty()) return ds;
  std::vector<UserProfile> users(ds.users().begin(), ds.users().end());
  auto added = profiles_to_users(profiles, ds.max_user_id() + 1);
  users.insert(users.end(), std::make_move_iterator(added.begin()), std::make_move_iterator(added.end()));
  return RatingDataset::from_profiles(ds.scale(), std::vector<ItemId>(ds.items().begin(), ds.items().end()),
                                      std::move(users));
}

}  // namespace shilldet
