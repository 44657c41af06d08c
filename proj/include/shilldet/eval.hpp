#pragma once

// Experimental protocol: split the genuine data in half, train the detector on
// the first half augmented with a mix of attack profiles, then inject attacks
// of every (model, attack size, filler size) cell into the second half and
// measure detection and false-alarm rates. An optional k-nearest-neighbour
// classifier on the same 20 normalized attributes serves as a baseline.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "shilldet/attack.hpp"
#include "shilldet/common.hpp"
#include "shilldet/dataset.hpp"
#include "shilldet/detector.hpp"
#include "shilldet/features.hpp"
#include "shilldet/regression.hpp"

namespace shilldet {

inline const std::vector<double>& default_attack_sizes() {
  static const std::vector<double> v{0.025, 0.075, 0.125, 0.175, 0.225, 0.275, 0.325, 0.375, 0.425, 0.475};
  return v;
}

inline const std::vector<double>& default_filler_sizes() {
  static const std::vector<double> v{0.013, 0.032, 0.052, 0.071, 0.091, 0.11, 0.13};
  return v;
}

/// Attack profiles added to the training half: `profiles_per_cell` profiles
/// for every (model, filler size) pair.
struct TrainingMix {
  std::vector<AttackModel> models{kAllAttackModels.begin(), kAllAttackModels.end()};
  std::vector<double> filler_sizes = default_filler_sizes();
  std::size_t profiles_per_cell = 60;
};

struct CellKey {
  AttackModel model;
  double attack_size;
  double filler_size;

  auto operator<=>(const CellKey&) const = default;
};

struct ExperimentConfig {
  Scale scale;
  Intent intent = Intent::nuke;
  PopularityRule popularity;
  std::optional<int> mid_rating;
  std::vector<AttackModel> models{kAllAttackModels.begin(), kAllAttackModels.end()};
  std::vector<double> attack_sizes = default_attack_sizes();
  std::vector<double> filler_sizes = default_filler_sizes();
  int repetitions = 10;
  std::uint64_t seed = 0;
  RegressorKind regressor = RegressorKind::quadratic;
  double lambda = 1e-3;
  FitRows fit_rows = FitRows::genuine;
  ThresholdPolicy threshold;
  TrainingMix mix;
  bool knn = false;
  int knn_k = 9;
  std::vector<CellKey> roc_cells;
  unsigned threads = 1;

  /// Every problem found, so callers can report them together.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    auto fraction_list = [&](const std::vector<double>& v, const char* name) {
      if (v.empty()) p.push_back(std::string(name) + " is empty");
      for (double x : v)
        if (!(x > 0.0 && x <= 1.0)) p.push_back(std::string(name) + " entry " + std::to_string(x) + " not in (0, 1]");
    };
    if (models.empty()) p.push_back("models is empty");
    fraction_list(attack_sizes, "attack_sizes");
    fraction_list(filler_sizes, "filler_sizes");
    for (double x : mix.filler_sizes)
      if (!(x > 0.0 && x <= 1.0)) p.push_back("mix filler size " + std::to_string(x) + " not in (0, 1]");
    if (repetitions < 1) p.push_back("repetitions must be >= 1");
    if (!(lambda >= 0.0)) p.push_back("lambda must be >= 0");
    if (!(threshold.target_false_alarm >= 0.0 && threshold.target_false_alarm <= 1.0))
      p.push_back("target_false_alarm not in [0, 1]");
    if (threshold.mode == ThresholdPolicy::Mode::cross_validated && threshold.folds < 2)
      p.push_back("threshold folds must be >= 2");
    if (knn && knn_k < 1) p.push_back("knn k must be >= 1");
    if (scale.min >= scale.max) p.push_back("rating scale must satisfy min < max");
    return p;
  }

  void validate() const {
    auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid experiment configuration:";
    for (const auto& s : p) msg += "\n  - " + s;
    throw Error(msg);
  }
};

struct TrainingSet {
  std::vector<ProfileFeatures> features;  // raw, genuine first then attackers
  FeatureNormalizer normalizer;
};

/// Featurizes the genuine training users against their own item statistics,
/// and each (model, filler size) batch of the mix against the statistics of
/// the training half with only that batch injected, so every attack profile
/// is observed in a system at the mix's attack ratio.
inline TrainingSet build_training_set(const RatingDataset& train, const ExperimentConfig& cfg, std::uint64_t seed) {
  if (train.count(Label::genuine) == 0) throw Error("training half has no genuine users");
  const auto stats = compute_item_stats(train, cfg.popularity, cfg.intent);
  TrainingSet out;
  out.features = extract_features(train, stats, cfg.mid_rating);
  for (std::size_t mi = 0; mi < cfg.mix.models.size(); ++mi) {
    for (std::size_t fi = 0; fi < cfg.mix.filler_sizes.size(); ++fi) {
      AttackSpec spec;
      spec.model = cfg.mix.models[mi];
      spec.intent = cfg.intent;
      spec.filler_size = cfg.mix.filler_sizes[fi];
      spec.profile_count = cfg.mix.profiles_per_cell;
      spec.seed = derive_seed(seed, {mi, fi});
      const auto augmented = inject(train, generate_profiles(spec, stats, train));
      const auto aug_stats = compute_item_stats(augmented, cfg.popularity, cfg.intent);
      for (const auto& u : augmented.users()) {
        if (u.label != Label::attacker) continue;
        out.features.push_back({u.id, u.label, rating_attributes(u.ratings, aug_stats, cfg.intent),
                                item_attributes(u.ratings, aug_stats, cfg.mid_rating)});
      }
    }
  }
  out.normalizer = fit_normalizer(std::span<const ProfileFeatures>(out.features));
  return out;
}

struct Rates {
  double detection = 0.0;
  double false_alarm = 0.0;
};

/// detection = |D & A| / |A|, false alarm = |D & G| / |G|.
inline Rates metrics(std::span<const int> detected, std::span<const int> is_attacker) {
  if (detected.size() != is_attacker.size()) throw Error("detected and truth differ in length");
  std::size_t a = 0, g = 0, da = 0, dg = 0;
  for (std::size_t k = 0; k < detected.size(); ++k) {
    if (is_attacker[k]) {
      ++a;
      da += detected[k] != 0;
    } else {
      ++g;
      dg += detected[k] != 0;
    }
  }
  if (a == 0 || g == 0) throw Error("metrics need both attacker and genuine users");
  return {static_cast<double>(da) / static_cast<double>(a), static_cast<double>(dg) / static_cast<double>(g)};
}

using FeatureRow = std::array<double, kRatingDims + kItemDims>;

inline FeatureRow concat(const ProfileFeatures& f) {
  FeatureRow row{};
  std::copy(f.rating.begin(), f.rating.end(), row.begin());
  std::copy(f.item.begin(), f.item.end(), row.begin() + kRatingDims);
  return row;
}

/// Majority vote of the k Euclidean-nearest training rows (ties among equal
/// distances broken by training order). An even split votes attacker.
inline std::vector<int> knn_baseline(std::span<const FeatureRow> train, std::span<const int> train_labels,
                                     std::span<const FeatureRow> test, int k) {
  if (train.size() != train_labels.size()) throw Error("training rows and labels differ in length");
  if (k < 1 || static_cast<std::size_t>(k) > train.size()) throw Error("k must lie in [1, training count]");
  const auto kk = static_cast<std::size_t>(k);
  std::vector<int> out;
  out.reserve(test.size());
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  for (const auto& q : test) {
    for (std::size_t t = 0; t < train.size(); ++t) {
      double d = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) d += (q[j] - train[t][j]) * (q[j] - train[t][j]);
      dist[t] = {d, t};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    std::size_t votes = 0;
    for (std::size_t j = 0; j < kk; ++j) votes += train_labels[dist[j].second] != 0;
    out.push_back(2 * votes >= kk ? 1 : 0);
  }
  return out;
}

struct CellResult {
  CellKey key;
  std::vector<Rates> regression;  // one per repetition
  std::vector<Rates> knn;
};

struct MetricsGrid {
  std::vector<CellResult> cells;
  std::vector<double> training_pp;  // one per repetition
  std::vector<double> thresholds;   // one per repetition
  std::map<CellKey, std::vector<std::vector<RocPoint>>> roc;  // per repetition
  Intent intent = Intent::nuke;
  int repetitions = 0;
  std::uint64_t seed = 0;
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and sample standard deviation (0 for a single value).
inline Summary summarize(std::span<const double> v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// Output of one repetition's training stage.
struct TrainedRepetition {
  RatingDataset test;
  TrainedModel model;
  std::vector<FeatureRow> knn_rows;
  std::vector<int> knn_labels;
  double training_pp = 0.0;
};

inline TrainedRepetition train_repetition(const RatingDataset& ds, const ExperimentConfig& cfg, int rep) {
  const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);
  auto [train, test] = split_half(ds, rep_seed);
  const auto training = build_training_set(train, cfg, derive_seed(rep_seed, {1}));
  TrainedRepetition out{std::move(test), train_model(training.features, cfg.regressor, cfg.lambda, cfg.fit_rows), {}, {}, 0.0};
  auto& model = out.model;
  model.scale = ds.scale();
  model.intent = cfg.intent;
  model.popularity = cfg.popularity;
  model.mid_rating = cfg.mid_rating.value_or(ds.scale().mid());
  model.seed = rep_seed;

  out.training_pp = model.training_pp;
  model.threshold = fit_threshold(model, training.features, cfg.threshold, derive_seed(rep_seed, {3}));

  if (cfg.knn) {
    for (const auto& f : apply_normalizer(model.normalizer, training.features)) {
      out.knn_rows.push_back(concat(f));
      out.knn_labels.push_back(f.label == Label::attacker ? 1 : 0);
    }
  }
  return out;
}

struct CellOutcome {
  Rates regression;
  std::optional<Rates> knn;
  std::vector<RocPoint> roc;
};

/// Injects one cell's attack into the test half and evaluates both methods.
inline CellOutcome evaluate_cell(const TrainedRepetition& rep, const ExperimentConfig& cfg, const ItemStats& test_stats,
                                 const CellKey& key, std::uint64_t seed, bool want_roc) {
  AttackSpec spec;
  spec.model = key.model;
  spec.intent = cfg.intent;
  spec.attack_size = key.attack_size;
  spec.filler_size = key.filler_size;
  spec.seed = seed;
  const auto augmented = inject(rep.test, generate_profiles(spec, test_stats, rep.test));
  const auto stats = compute_item_stats(augmented, cfg.popularity, cfg.intent);
  const auto features = extract_features(augmented, stats, cfg.mid_rating);
  const auto scores = score_features(rep.model, features);

  std::vector<int> flagged, truth;
  for (const auto& s : scores) {
    flagged.push_back(s.label);
    truth.push_back(s.truth == Label::attacker ? 1 : 0);
  }
  CellOutcome out;
  out.regression = metrics(flagged, truth);
  if (want_roc) out.roc = roc_sweep(scores);
  if (cfg.knn) {
    std::vector<FeatureRow> rows;
    rows.reserve(features.size());
    for (const auto& f : features) rows.push_back(concat(rep.model.normalizer.apply(f)));
    out.knn = metrics(knn_baseline(rep.knn_rows, rep.knn_labels, rows, cfg.knn_k), truth);
  }
  return out;
}

/// Runs the whole grid. Results do not depend on `cfg.threads`: every cell
/// draws from a seed derived from (repetition, cell indices).
inline MetricsGrid run_experiment(const RatingDataset& ds, const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<CellKey> keys;
  for (auto m : cfg.models)
    for (double a : cfg.attack_sizes)
      for (double f : cfg.filler_sizes) keys.push_back({m, a, f});

  MetricsGrid grid;
  grid.intent = cfg.intent;
  grid.repetitions = cfg.repetitions;
  grid.seed = cfg.seed;
  for (const auto& k : keys) grid.cells.push_back({k, {}, {}});

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const auto trained = train_repetition(ds, cfg, rep);
    grid.training_pp.push_back(trained.training_pp);
    grid.thresholds.push_back(trained.model.threshold);
    const auto test_stats = compute_item_stats(trained.test, cfg.popularity, cfg.intent);
    const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);

    std::vector<CellOutcome> outcomes(keys.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t c = next++; c < keys.size(); c = next++) {
        const std::size_t n_a = cfg.attack_sizes.size(), n_f = cfg.filler_sizes.size();
        const std::uint64_t mi = c / (n_a * n_f), ai = (c / n_f) % n_a, fi = c % n_f;
        const bool want_roc = std::find(cfg.roc_cells.begin(), cfg.roc_cells.end(), keys[c]) != cfg.roc_cells.end();
        outcomes[c] = evaluate_cell(trained, cfg, test_stats, keys[c], derive_seed(rep_seed, {2, mi, ai, fi}), want_roc);
      }
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(keys.size())));
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }

    for (std::size_t c = 0; c < keys.size(); ++c) {
      grid.cells[c].regression.push_back(outcomes[c].regression);
      if (outcomes[c].knn) grid.cells[c].knn.push_back(*outcomes[c].knn);
      if (!outcomes[c].roc.empty()) grid.roc[keys[c]].push_back(std::move(outcomes[c].roc));
    }
  }
  return grid;
}

struct RegressorComparison {
  AttackModel model;
  double linear_train = 0.0;
  double quadratic_train = 0.0;
  double linear_holdout = 0.0;
  double quadratic_holdout = 0.0;
};

/// Predictive power of both regressors per attack model. For each model the
/// training half is injected with one attack of the given size, every row is
/// fitted, and pp is reported on that set and on the test half injected the
/// same way (normalized with the training bounds).
inline std::vector<RegressorComparison> compare_regressors(const RatingDataset& ds, const ExperimentConfig& cfg,
                                                           double attack_size, double filler_size,
                                                           std::uint64_t seed) {
  auto [train, test] = split_half(ds, seed);
  const auto train_stats = compute_item_stats(train, cfg.popularity, cfg.intent);
  const auto test_stats = compute_item_stats(test, cfg.popularity, cfg.intent);
  auto attacked = [&](const RatingDataset& half, const ItemStats& stats, AttackModel model, std::uint64_t s) {
    AttackSpec spec;
    spec.model = model;
    spec.intent = cfg.intent;
    spec.attack_size = attack_size;
    spec.filler_size = filler_size;
    spec.seed = s;
    const auto augmented = inject(half, generate_profiles(spec, stats, half));
    return extract_features(augmented, compute_item_stats(augmented, cfg.popularity, cfg.intent), cfg.mid_rating);
  };

  std::vector<RegressorComparison> out;
  for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
    const auto model = cfg.models[mi];
    const auto tr = attacked(train, train_stats, model, derive_seed(seed, {4, mi, 0}));
    const auto te = attacked(test, test_stats, model, derive_seed(seed, {4, mi, 1}));
    RegressorComparison row{model};
    for (auto kind : {RegressorKind::linear, RegressorKind::quadratic}) {
      const auto trained = train_model(tr, kind, cfg.lambda, FitRows::all);
      const double pp_train = predictive_power(trained.m, kind, apply_normalizer(trained.normalizer, tr));
      const double pp_test = predictive_power(trained.m, kind, apply_normalizer(trained.normalizer, te));
      (kind == RegressorKind::linear ? row.linear_train : row.quadratic_train) = pp_train;
      (kind == RegressorKind::linear ? row.linear_holdout : row.quadratic_holdout) = pp_test;
    }
    out.push_back(row);
  }
  return out;
}

/// `model,intent,attack_size,filler_size,repetitions,detection_mean,
/// detection_sd,fa_mean,fa_sd,method`; regression rows first, then knn rows.
/// Per-repetition training pp and thresholds go on a leading comment line.
inline void write_grid_csv(const MetricsGrid& grid, std::ostream& out) {
  const auto old = out.precision(17);
  if (!grid.training_pp.empty()) {
    out << "# training_pp";
    for (double v : grid.training_pp) out << ' ' << v;
    out << " thresholds";
    for (double v : grid.thresholds) out << ' ' << v;
    out << '\n';
  }
  out << "model,intent,attack_size,filler_size,repetitions,detection_mean,detection_sd,fa_mean,fa_sd,method\n";
  auto emit = [&](const CellResult& c, const std::vector<Rates>& rates, const char* method) {
    std::vector<double> det, fa;
    for (const auto& r : rates) {
      det.push_back(r.detection);
      fa.push_back(r.false_alarm);
    }
    const auto d = summarize(det);
    const auto f = summarize(fa);
    out << to_string(c.key.model) << ',' << to_string(grid.intent) << ',' << c.key.attack_size << ','
        << c.key.filler_size << ',' << rates.size() << ',' << d.mean << ',' << d.sd << ',' << f.mean << ',' << f.sd
        << ',' << method << '\n';
  };
  for (const auto& c : grid.cells) emit(c, c.regression, "regression");
  for (const auto& c : grid.cells)
    if (!c.knn.empty()) emit(c, c.knn, "knn");
  out.precision(old);
}

}  // namespace shilldet
