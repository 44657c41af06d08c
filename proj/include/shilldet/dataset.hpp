#pragma once

// Sparse rating matrix with ground-truth labels, MovieLens loaders, global
// item statistics and the user-disjoint half split.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "shilldet/common.hpp"

namespace shilldet {

/// One stored rating. `item` indexes RatingDataset::items().
struct Rating {
  std::uint32_t item;
  int value;
};

struct UserProfile {
  UserId id = 0;
  Label label = Label::genuine;
  std::vector<Rating> ratings;  // sorted by item index, unique
};

/// A raw (user, item, rating) triple, used to build datasets.
struct RatingTriple {
  UserId user;
  ItemId item;
  int value;
};

class RatingDataset {
 public:
  RatingDataset() = default;

  /// Builds a dataset from triples. The item catalogue is the union of
  /// `catalogue` and every item referenced by a triple. `labels` may be empty
  /// (everyone genuine) or hold one entry per distinct user in ascending id.
  /// `lines[k]`, when given, is the source line of triples[k] for error
  /// messages.
  static RatingDataset from_triples(std::vector<RatingTriple> triples, Scale scale,
                                    std::vector<ItemId> catalogue = {},
                                    std::span<const std::size_t> lines = {},
                                    const std::vector<std::pair<UserId, Label>>& labels = {}) {
    if (triples.empty()) throw Error("no ratings");
    std::vector<std::size_t> order(triples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = triples[a];
      const auto& y = triples[b];
      return x.user != y.user ? x.user < y.user : x.item < y.item;
    });
    auto where = [&](std::size_t k) {
      return lines.empty() ? std::string("entry ") + std::to_string(k + 1)
                           : std::string("line ") + std::to_string(lines[k]);
    };
    for (std::size_t k = 0; k < triples.size(); ++k) {
      if (!scale.contains(triples[k].value)) {
        throw Error(where(k) + ": rating " + std::to_string(triples[k].value) +
                    " outside scale [" + std::to_string(scale.min) + ", " +
                    std::to_string(scale.max) + "]");
      }
    }
    for (std::size_t k = 1; k < order.size(); ++k) {
      const auto& a = triples[order[k - 1]];
      const auto& b = triples[order[k]];
      if (a.user == b.user && a.item == b.item) {
        throw Error("duplicate rating for user " + std::to_string(a.user) + " item " +
                    std::to_string(a.item) + " (" + where(order[k - 1]) + " and " +
                    where(order[k]) + ")");
      }
    }

    RatingDataset ds;
    ds.scale_ = scale;
    ds.items_ = std::move(catalogue);
    for (const auto& t : triples) ds.items_.push_back(t.item);
    std::sort(ds.items_.begin(), ds.items_.end());
    ds.items_.erase(std::unique(ds.items_.begin(), ds.items_.end()), ds.items_.end());

    for (std::size_t idx : order) {
      const auto& t = triples[idx];
      if (ds.users_.empty() || ds.users_.back().id != t.user) {
        ds.users_.push_back(UserProfile{t.user, Label::genuine, {}});
      }
      ds.users_.back().ratings.push_back(Rating{*ds.item_index(t.item), t.value});
    }
    ds.num_ratings_ = triples.size();

    if (!labels.empty()) {
      if (labels.size() != ds.users_.size()) throw Error("label count does not match user count");
      for (std::size_t u = 0; u < labels.size(); ++u) {
        if (labels[u].first != ds.users_[u].id) throw Error("labels not aligned with users");
        ds.users_[u].label = labels[u].second;
      }
    }
    return ds;
  }

  /// Assembles a dataset from already-indexed profiles over `items`.
  static RatingDataset from_profiles(Scale scale, std::vector<ItemId> items,
                                     std::vector<UserProfile> users) {
    RatingDataset ds;
    ds.scale_ = scale;
    ds.items_ = std::move(items);
    std::sort(users.begin(), users.end(),
              [](const UserProfile& a, const UserProfile& b) { return a.id < b.id; });
    for (std::size_t u = 0; u < users.size(); ++u) {
      auto& p = users[u];
      if (u > 0 && users[u - 1].id == p.id) throw Error("duplicate user id " + std::to_string(p.id));
      if (p.ratings.empty()) throw Error("user " + std::to_string(p.id) + " has no ratings");
      std::sort(p.ratings.begin(), p.ratings.end(),
                [](const Rating& a, const Rating& b) { return a.item < b.item; });
      for (std::size_t k = 0; k < p.ratings.size(); ++k) {
        if (p.ratings[k].item >= ds.items_.size()) throw Error("item index out of range");
        if (k > 0 && p.ratings[k - 1].item == p.ratings[k].item) {
          throw Error("duplicate rating for user " + std::to_string(p.id) + " item " +
                      std::to_string(ds.items_[p.ratings[k].item]));
        }
        if (!scale.contains(p.ratings[k].value)) throw Error("rating outside scale");
      }
      ds.num_ratings_ += p.ratings.size();
    }
    ds.users_ = std::move(users);
    return ds;
  }

  const Scale& scale() const { return scale_; }
  std::span<const ItemId> items() const { return items_; }
  std::span<const UserProfile> users() const { return users_; }
  std::size_t num_items() const { return items_.size(); }
  std::size_t num_users() const { return users_.size(); }
  std::size_t num_ratings() const { return num_ratings_; }

  std::optional<std::uint32_t> item_index(ItemId id) const {
    auto it = std::lower_bound(items_.begin(), items_.end(), id);
    if (it == items_.end() || *it != id) return std::nullopt;
    return static_cast<std::uint32_t>(it - items_.begin());
  }

  UserId max_user_id() const { return users_.empty() ? 0 : users_.back().id; }

  std::size_t count(Label l) const {
    return static_cast<std::size_t>(std::count_if(
        users_.begin(), users_.end(), [l](const UserProfile& u) { return u.label == l; }));
  }

  /// Fraction of the user x item matrix that is empty.
  double sparsity() const {
    return 1.0 - static_cast<double>(num_ratings_) /
                     (static_cast<double>(users_.size()) * static_cast<double>(items_.size()));
  }

 private:
  Scale scale_;
  std::vector<ItemId> items_;
  std::vector<UserProfile> users_;
  std::size_t num_ratings_ = 0;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

template <typename T>
std::optional<T> parse_int(std::string_view s) {
  s = trim(s);
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

/// Parses a star value into the dataset's integer units.
inline std::optional<int> parse_rating(std::string_view s, const Scale& scale) {
  if (auto i = parse_int<int>(s)) return scale.half_stars ? 2 * *i : *i;
  auto d = parse_double(s);
  if (!d) return std::nullopt;
  double units = scale.half_stars ? 2.0 * *d : *d;
  if (units != std::round(units)) return std::nullopt;
  return static_cast<int>(units);
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return in;
}

}  // namespace detail

/// Reads MovieLens u.data: `user \t item \t rating \t timestamp` per line.
/// Every loaded user is labeled genuine.
inline RatingDataset load_movielens_tab(const std::string& path, Scale scale = {}) {
  auto in = detail::open_input(path);
  std::vector<RatingTriple> triples;
  std::vector<std::size_t> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    auto f = detail::split(sv, '\t');
    if (f.size() != 4) {
      throw Error(path + ": line " + std::to_string(lineno) + ": expected 4 tab-separated fields, got " +
                  std::to_string(f.size()));
    }
    auto u = detail::parse_int<UserId>(f[0]);
    auto i = detail::parse_int<ItemId>(f[1]);
    auto r = detail::parse_rating(f[2], scale);
    if (!u || !i) throw Error(path + ": line " + std::to_string(lineno) + ": bad user or item id");
    if (!r) throw Error(path + ": line " + std::to_string(lineno) + ": non-integer rating '" + std::string(f[2]) + "'");
    if (!detail::parse_double(f[3])) throw Error(path + ": line " + std::to_string(lineno) + ": bad timestamp");
    triples.push_back({*u, *i, *r});
    lines.push_back(lineno);
  }
  try {
    return RatingDataset::from_triples(std::move(triples), scale, {}, lines);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

/// Reads a MovieLens ratings.csv (`userId,movieId,rating,timestamp`). An
/// optional fifth `label` column, as written by write_dataset_csv, restores
/// genuine/attacker labels. Lines starting with '#' are comments.
inline RatingDataset load_movielens_csv(const std::string& path, Scale scale = {}) {
  auto in = detail::open_input(path);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  bool with_label = false;
  std::vector<RatingTriple> triples;
  std::vector<std::size_t> lines;
  std::vector<std::pair<UserId, Label>> user_labels;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    if (!have_header) {
      if (sv == "userId,movieId,rating,timestamp") {
        with_label = false;
      } else if (sv == "userId,movieId,rating,timestamp,label") {
        with_label = true;
      } else {
        throw Error(path + ": missing header 'userId,movieId,rating,timestamp'");
      }
      have_header = true;
      continue;
    }
    auto f = detail::split(sv, ',');
    const std::size_t want = with_label ? 5 : 4;
    auto where = path + ": row " + std::to_string(lineno);
    if (f.size() != want) throw Error(where + ": expected " + std::to_string(want) + " fields");
    auto u = detail::parse_int<UserId>(f[0]);
    auto i = detail::parse_int<ItemId>(f[1]);
    auto r = detail::parse_rating(f[2], scale);
    if (!u || !i) throw Error(where + ": bad user or item id");
    if (!r) throw Error(where + ": unparseable rating '" + std::string(f[2]) + "'");
    if (!scale.contains(*r)) throw Error(where + ": rating " + std::string(f[2]) + " outside scale");
    if (!detail::parse_double(f[3])) throw Error(where + ": bad timestamp");
    if (with_label) {
      Label l = parse_label(detail::trim(f[4]));
      user_labels.emplace_back(*u, l);
    }
    triples.push_back({*u, *i, *r});
    lines.push_back(lineno);
  }
  if (!have_header) throw Error(path + ": no ratings");

  std::vector<std::pair<UserId, Label>> labels;
  if (with_label) {
    std::sort(user_labels.begin(), user_labels.end());
    for (std::size_t k = 0; k < user_labels.size(); ++k) {
      if (!labels.empty() && labels.back().first == user_labels[k].first) {
        if (labels.back().second != user_labels[k].second) {
          throw Error(path + ": user " + std::to_string(user_labels[k].first) + " has conflicting labels");
        }
        continue;
      }
      labels.push_back(user_labels[k]);
    }
  }
  try {
    return RatingDataset::from_triples(std::move(triples), scale, {}, lines, labels);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

/// Canonical dump: header `userId,movieId,rating,timestamp,label`, users in id
/// order, items in id order. Timestamps are not retained and written as 0.
inline void write_dataset_csv(const RatingDataset& ds, std::ostream& out) {
  out << "userId,movieId,rating,timestamp,label\n";
  for (const auto& u : ds.users()) {
    for (const auto& r : u.ratings) {
      out << u.id << ',' << ds.items()[r.item] << ',';
      if (ds.scale().half_stars) {
        out << r.value / 2;
        if (r.value % 2 != 0) out << ".5";
      } else {
        out << r.value;
      }
      out << ",0," << to_string(u.label) << '\n';
    }
  }
}

/// How popular and unpopular items are delimited.
struct PopularityRule {
  enum class Mode { absolute, relative };
  Mode mode = Mode::absolute;
  int pop_threshold = 200;   // popular: NR_i > pop_threshold
  int unpop_threshold = 5;   // unpopular: NR_i <= unpop_threshold
  double relative_fraction = 0.1;  // relative mode: top/bottom share by count
};

struct ItemStats {
  Scale scale;
  Intent intent = Intent::nuke;
  std::size_t num_items = 0;
  std::size_t num_users = 0;
  std::vector<int> count;       // NR_i, 0 for catalogue items nobody rated
  std::vector<double> mean;     // r̄_i, system mean when NR_i = 0
  std::vector<double> stddev;   // population std; 1.0 when NR_i <= 1
  std::vector<double> extreme_fraction;  // F_j
  double system_mean = 0.0;
  double system_stddev = 0.0;
  double mean_length = 0.0;          // n̄
  double length_sq_deviation = 0.0;  // sum_k (n_k - n̄)^2
  int pop_threshold = 0;             // resolved thresholds
  int unpop_threshold = 0;
  std::vector<std::uint32_t> popular;
  std::vector<std::uint32_t> unpopular;
  std::vector<char> is_popular;
  std::vector<char> is_unpopular;
};

inline ItemStats compute_item_stats(const RatingDataset& ds, const PopularityRule& rule = {},
                                    Intent intent = Intent::nuke) {
  if (ds.num_ratings() == 0) throw Error("no ratings");
  const std::size_t n = ds.num_items();
  const int extreme = ds.scale().extreme(intent);
  ItemStats st;
  st.scale = ds.scale();
  st.intent = intent;
  st.num_items = n;
  st.num_users = ds.num_users();
  st.count.assign(n, 0);
  std::vector<double> sum(n, 0.0), ext(n, 0.0);
  double total = 0.0;
  for (const auto& u : ds.users()) {
    for (const auto& r : u.ratings) {
      ++st.count[r.item];
      sum[r.item] += r.value;
      if (r.value == extreme) ext[r.item] += 1.0;
      total += r.value;
    }
  }
  const auto nr = static_cast<double>(ds.num_ratings());
  st.system_mean = total / nr;
  double dev = 0.0;
  for (const auto& u : ds.users())
    for (const auto& r : u.ratings) dev += (r.value - st.system_mean) * (r.value - st.system_mean);
  st.system_stddev = std::sqrt(dev / nr);

  st.mean.assign(n, st.system_mean);
  st.stddev.assign(n, 1.0);
  st.extreme_fraction.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (st.count[i] == 0) continue;
    st.mean[i] = sum[i] / st.count[i];
    st.extreme_fraction[i] = ext[i] / st.count[i];
  }
  std::vector<double> item_dev(n, 0.0);
  for (const auto& u : ds.users())
    for (const auto& r : u.ratings) item_dev[r.item] += (r.value - st.mean[r.item]) * (r.value - st.mean[r.item]);
  for (std::size_t i = 0; i < n; ++i)
    if (st.count[i] > 1) st.stddev[i] = std::sqrt(item_dev[i] / st.count[i]);

  st.mean_length = nr / static_cast<double>(ds.num_users());
  for (const auto& u : ds.users()) {
    const double d = static_cast<double>(u.ratings.size()) - st.mean_length;
    st.length_sq_deviation += d * d;
  }

  if (rule.mode == PopularityRule::Mode::absolute) {
    st.pop_threshold = rule.pop_threshold;
    st.unpop_threshold = rule.unpop_threshold;
  } else {
    if (!(rule.relative_fraction > 0.0 && rule.relative_fraction < 0.5))
      throw Error("relative popularity fraction must lie in (0, 0.5)");
    std::vector<int> sorted(st.count);
    std::sort(sorted.begin(), sorted.end());
    const auto last = static_cast<double>(n - 1);
    st.pop_threshold = sorted[static_cast<std::size_t>(std::floor((1.0 - rule.relative_fraction) * last))];
    st.unpop_threshold = sorted[static_cast<std::size_t>(std::floor(rule.relative_fraction * last))];
  }
  st.is_popular.assign(n, 0);
  st.is_unpopular.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool pop = st.count[i] > st.pop_threshold;
    const bool unpop = st.count[i] <= st.unpop_threshold;
    if (pop && unpop) {
      throw Error("popularity thresholds overlap: item " + std::to_string(ds.items()[i]) +
                  " is both popular and unpopular");
    }
    if (pop) {
      st.is_popular[i] = 1;
      st.popular.push_back(static_cast<std::uint32_t>(i));
    }
    if (unpop) {
      st.is_unpopular[i] = 1;
      st.unpopular.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return st;
}

/// Splits users into two disjoint halves; the first has ceil(N/2) users. Both
/// halves keep the full item catalogue.
inline std::pair<RatingDataset, RatingDataset> split_half(const RatingDataset& ds, std::uint64_t seed) {
  if (ds.num_users() < 2) throw Error("split_half needs at least 2 users");
  std::vector<std::size_t> idx(ds.num_users());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t first = (idx.size() + 1) / 2;
  std::vector<UserProfile> a, b;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    (k < first ? a : b).push_back(ds.users()[idx[k]]);
  }
  std::vector<ItemId> items(ds.items().begin(), ds.items().end());
  return {RatingDataset::from_profiles(ds.scale(), items, std::move(a)),
          RatingDataset::from_profiles(ds.scale(), std::move(items), std::move(b))};
}

}  // namespace shilldet
