// shilldet: command-line front end.
//
//   shilldet ingest    --data u.data [--dump out.csv]
//   shilldet inject    --data u.data --out attacked.csv --model-name Average --attack-size 0.1
//   shilldet featurize --data attacked.csv --out features.csv
//   shilldet train     --data u.data --model-out model.json [--compare-regressors]
//   shilldet detect    --data attacked.csv --model model.json --out scores.csv
//   shilldet eval      --data u.data --out grid.csv [--method both --k 9]
//   shilldet roc       --scores scores.csv --out roc.csv
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shilldet/attack.hpp"
#include "shilldet/dataset.hpp"
#include "shilldet/detector.hpp"
#include "shilldet/eval.hpp"
#include "shilldet/features.hpp"
#include "shilldet/io.hpp"
#include "shilldet/regression.hpp"

namespace fs = std::filesystem;
using namespace shilldet;

namespace {

struct UsageError : Error {
  using Error::Error;
};

int verbosity = 1;

void info(const std::string& msg) {
  if (verbosity >= 1) std::cerr << msg << '\n';
}

void debug(const std::string& msg) {
  if (verbosity >= 2) std::cerr << msg << '\n';
}

/// Mirrors the JSON run configuration.
struct RunConfig {
  std::string data_path;
  std::string format = "auto";
  Scale scale;
  Intent intent = Intent::nuke;
  PopularityRule popularity;
  std::optional<int> mid_rating;
  std::vector<AttackSpec> attacks;
  ExperimentConfig experiment;
  std::string model_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  int verbosity = 1;
};

void read_run_config(const std::string& path, RunConfig& rc) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
  std::vector<std::string> problems;
  detail::Reader r(j, "config", problems);
  if (const Json* d = r.child("dataset")) {
    detail::Reader dr(*d, "config.dataset", problems);
    dr.get("path", rc.data_path);
    dr.get("format", rc.format);
    if (const Json* s = dr.child("scale")) read_json(*s, rc.scale, problems, "config.dataset.scale");
    dr.finish();
  }
  r.get_as("intent", rc.intent, [](const std::string& v) { return parse_intent(v); });
  if (const Json* p = r.child("popularity")) read_json(*p, rc.popularity, problems, "config.popularity");
  r.get("mid_rating", rc.mid_rating);
  if (const Json* a = r.child("attack")) {
    AttackSpec spec;
    spec.intent = rc.intent;
    read_json(*a, spec, problems, "config.attack");
    rc.attacks.push_back(spec);
  }
  if (const Json* a = r.child("attacks")) {
    if (!a->is_array()) problems.push_back("config.attacks must be an array");
    for (std::size_t k = 0; a->is_array() && k < a->size(); ++k) {
      AttackSpec spec;
      spec.intent = rc.intent;
      read_json((*a)[k], spec, problems, "config.attacks[" + std::to_string(k) + "]");
      rc.attacks.push_back(spec);
    }
  }
  if (const Json* e = r.child("experiment")) read_json(*e, rc.experiment, problems, "config.experiment");
  r.get("model", rc.model_path);
  r.get("output_dir", rc.output_dir);
  r.get("seed", rc.seed);
  r.get("verbosity", rc.verbosity);
  r.finish();
  if (!problems.empty()) {
    std::string msg = "invalid config " + path + ":";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw UsageError(msg);
  }
}

/// Flags that override the config file. Unset flags leave config values alone.
struct Overrides {
  std::optional<std::string> data, format, intent, popularity_mode, model, output_dir;
  std::optional<int> scale_min, scale_max, pop_threshold, unpop_threshold, mid_rating;
  std::optional<double> relative_fraction;
  bool half_stars = false;
  std::optional<std::uint64_t> seed;

  // attack
  std::optional<std::string> attack_model;
  std::optional<double> attack_size, filler_size, aop_top;
  std::optional<int> target_count, selected_count;

  // experiment
  std::optional<std::string> regressor, fit_rows, threshold_mode, method;
  std::optional<double> lambda, target_fa;
  std::optional<int> repetitions, folds, k;
  std::optional<unsigned> threads;
  std::vector<std::string> models;
  std::vector<double> attack_sizes, filler_sizes;
  std::optional<std::size_t> mix_profiles;
};

void add_dataset_options(CLI::App* sub, Overrides& o) {
  sub->add_option("--data", o.data, "Rating file (u.data or ratings.csv)");
  sub->add_option("--format", o.format, "tab | csv | auto (by extension)");
  sub->add_option("--scale-min", o.scale_min, "Lowest rating");
  sub->add_option("--scale-max", o.scale_max, "Highest rating");
  sub->add_flag("--half-stars", o.half_stars, "Accept half stars (stored doubled)");
  sub->add_option("--intent", o.intent, "push | nuke");
  sub->add_option("--popularity-mode", o.popularity_mode, "absolute | relative");
  sub->add_option("--pop-threshold", o.pop_threshold, "Popular: more ratings than this");
  sub->add_option("--unpop-threshold", o.unpop_threshold, "Unpopular: at most this many ratings");
  sub->add_option("--relative-fraction", o.relative_fraction, "Top/bottom share in relative mode");
  sub->add_option("--mid-rating", o.mid_rating, "Rating counted by FSARTI");
}

void add_attack_options(CLI::App* sub, Overrides& o) {
  sub->add_option("--model-name", o.attack_model, "Attack model (AOP, Random, Average, ...)");
  sub->add_option("--attack-size", o.attack_size, "Attackers / genuine users");
  sub->add_option("--filler-size", o.filler_size, "Rated items / catalogue");
  sub->add_option("--aop-top", o.aop_top, "AOP filler pool share");
  sub->add_option("--target-count", o.target_count, "Target items per profile");
  sub->add_option("--selected-count", o.selected_count, "Selected items");
}

void add_experiment_options(CLI::App* sub, Overrides& o) {
  sub->add_option("--regressor", o.regressor, "linear | quadratic");
  sub->add_option("--lambda", o.lambda, "Ridge regularization");
  sub->add_option("--fit-rows", o.fit_rows, "genuine | all");
  sub->add_option("--threshold-mode", o.threshold_mode, "cross_validated | in_sample");
  sub->add_option("--target-fa", o.target_fa, "Target training false-alarm rate");
  sub->add_option("--folds", o.folds, "Folds for the cross-validated threshold");
  sub->add_option("--mix-profiles", o.mix_profiles, "Training-mix profiles per (model, filler size)");
}

void apply(const Overrides& o, RunConfig& rc) {
  if (o.data) rc.data_path = *o.data;
  if (o.format) rc.format = *o.format;
  if (o.scale_min) rc.scale.min = *o.scale_min;
  if (o.scale_max) rc.scale.max = *o.scale_max;
  if (o.half_stars) rc.scale.half_stars = true;
  if (o.intent) rc.intent = parse_intent(*o.intent);
  if (o.popularity_mode) rc.popularity.mode = detail::parse_popularity_mode(*o.popularity_mode);
  if (o.pop_threshold) rc.popularity.pop_threshold = *o.pop_threshold;
  if (o.unpop_threshold) rc.popularity.unpop_threshold = *o.unpop_threshold;
  if (o.relative_fraction) rc.popularity.relative_fraction = *o.relative_fraction;
  if (o.mid_rating) rc.mid_rating = *o.mid_rating;
  if (o.model) rc.model_path = *o.model;
  if (o.output_dir) rc.output_dir = *o.output_dir;
  if (o.seed) rc.seed = *o.seed;

  const bool attack_flags = o.attack_model || o.attack_size || o.filler_size || o.aop_top || o.target_count ||
                            o.selected_count;
  if (attack_flags) {
    if (rc.attacks.size() > 1) throw UsageError("attack flags are ambiguous with several config attacks");
    if (rc.attacks.empty()) {
      rc.attacks.emplace_back();
      rc.attacks.back().intent = rc.intent;
    }
    auto& a = rc.attacks.front();
    if (o.attack_model) a.model = parse_attack_model(*o.attack_model);
    if (o.attack_size) a.attack_size = *o.attack_size;
    if (o.filler_size) a.filler_size = *o.filler_size;
    if (o.aop_top) a.aop_top_percent = *o.aop_top;
    if (o.target_count) a.target_count = *o.target_count;
    if (o.selected_count) a.selected_count = *o.selected_count;
  }
  for (auto& a : rc.attacks)
    if (o.intent) a.intent = rc.intent;

  auto& e = rc.experiment;
  if (o.regressor) e.regressor = parse_regressor(*o.regressor);
  if (o.lambda) e.lambda = *o.lambda;
  if (o.fit_rows) e.fit_rows = detail::parse_fit_rows(*o.fit_rows);
  if (o.threshold_mode) e.threshold.mode = detail::parse_threshold_mode(*o.threshold_mode);
  if (o.target_fa) e.threshold.target_false_alarm = *o.target_fa;
  if (o.folds) e.threshold.folds = *o.folds;
  if (o.repetitions) e.repetitions = *o.repetitions;
  if (o.k) e.knn_k = *o.k;
  if (o.threads) e.threads = *o.threads;
  if (o.mix_profiles) e.mix.profiles_per_cell = *o.mix_profiles;
  if (!o.models.empty()) e.models = detail::parse_models(o.models);
  if (!o.attack_sizes.empty()) e.attack_sizes = o.attack_sizes;
  if (!o.filler_sizes.empty()) e.filler_sizes = o.filler_sizes;
  if (o.method) {
    if (*o.method != "regression" && *o.method != "knn" && *o.method != "both")
      throw UsageError("--method must be regression, knn or both");
    e.knn = *o.method != "regression";
  }
  e.scale = rc.scale;
  e.intent = rc.intent;
  e.popularity = rc.popularity;
  e.mid_rating = rc.mid_rating;
  e.seed = rc.seed;
}

fs::path output_path(const RunConfig& rc, const std::string& p) {
  fs::path path(p);
  if (!rc.output_dir.empty() && path.is_relative()) path = fs::path(rc.output_dir) / path;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

void require_data(const RunConfig& rc, std::vector<std::string>& problems) {
  if (rc.data_path.empty()) {
    problems.push_back("no dataset given (--data or dataset.path)");
  } else if (!fs::exists(rc.data_path)) {
    problems.push_back("dataset not found: " + rc.data_path);
  }
  if (rc.format != "auto" && rc.format != "tab" && rc.format != "csv")
    problems.push_back("format must be tab, csv or auto");
  if (rc.scale.min >= rc.scale.max) problems.push_back("rating scale must satisfy min < max");
}

void fail_if(const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::string msg = "invalid arguments:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw UsageError(msg);
}

RatingDataset load(const RunConfig& rc) {
  std::string fmt = rc.format;
  if (fmt == "auto") fmt = fs::path(rc.data_path).extension() == ".csv" ? "csv" : "tab";
  debug("loading " + rc.data_path + " as " + fmt);
  return fmt == "csv" ? load_movielens_csv(rc.data_path, rc.scale) : load_movielens_tab(rc.data_path, rc.scale);
}

template <typename F>
void write_csv(const RunConfig& rc, const std::string& path, std::string_view what, F&& body) {
  const auto out = output_path(rc, path);
  write_atomically(out, [&](std::ostream& os) {
    write_seed_header(os, rc.seed, what);
    body(os);
  });
  info("wrote " + out.string());
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

int cmd_ingest(const RunConfig& rc, const std::optional<std::string>& dump) {
  std::vector<std::string> problems;
  require_data(rc, problems);
  fail_if(problems);
  const auto ds = load(rc);
  const auto stats = compute_item_stats(ds, rc.popularity, rc.intent);
  std::cout << "users " << ds.num_users() << "\nitems " << ds.num_items() << "\nratings " << ds.num_ratings()
            << "\nsparsity " << fixed(ds.sparsity()) << "\nsystem_mean " << fixed(stats.system_mean)
            << "\ngenuine " << ds.count(Label::genuine) << "\nattacker " << ds.count(Label::attacker)
            << "\npopular_items " << stats.popular.size() << "\nunpopular_items " << stats.unpopular.size() << '\n';
  if (dump) write_csv(rc, *dump, "dataset", [&](std::ostream& os) { write_dataset_csv(ds, os); });
  return 0;
}

int cmd_inject(RunConfig rc, const std::optional<std::string>& out, bool profiles_only) {
  std::vector<std::string> problems;
  require_data(rc, problems);
  if (!out) problems.push_back("--out is required");
  if (rc.attacks.empty()) problems.push_back("no attack given (--model-name or config attack block)");
  for (std::size_t k = 0; k < rc.attacks.size(); ++k) {
    try {
      rc.attacks[k].validate();
    } catch (const Error& e) {
      problems.push_back("attack " + std::to_string(k) + ": " + e.what());
    }
  }
  fail_if(problems);
  const auto ds = load(rc);
  const auto stats = compute_item_stats(ds, rc.popularity, rc.intent);
  auto result = ds;
  std::vector<UserProfile> injected;
  for (std::size_t k = 0; k < rc.attacks.size(); ++k) {
    auto spec = rc.attacks[k];
    if (spec.seed == 0) spec.seed = derive_seed(rc.seed, {k});
    if (spec.intent != stats.intent) throw UsageError("attack intent must match the run intent");
    const auto profiles = generate_profiles(spec, stats, ds);
    const auto before = result.num_users();
    result = inject(result, profiles);
    info("injected " + std::to_string(result.num_users() - before) + " " + std::string(to_string(spec.model)) +
         " profiles");
  }
  if (profiles_only) {
    std::vector<UserProfile> only;
    for (const auto& u : result.users())
      if (u.id > ds.max_user_id()) only.push_back(u);
    result = RatingDataset::from_profiles(result.scale(), {result.items().begin(), result.items().end()}, std::move(only));
  }
  write_csv(rc, *out, "dataset", [&](std::ostream& os) { write_dataset_csv(result, os); });
  return 0;
}

int cmd_featurize(const RunConfig& rc, const std::optional<std::string>& out, bool normalize) {
  std::vector<std::string> problems;
  require_data(rc, problems);
  if (!out) problems.push_back("--out is required");
  if (normalize && rc.model_path.empty()) problems.push_back("--normalize needs --model");
  fail_if(problems);
  const auto ds = load(rc);
  const auto stats = compute_item_stats(ds, rc.popularity, rc.intent);
  auto features = extract_features(ds, stats, rc.mid_rating);
  if (normalize) features = apply_normalizer(load_model(rc.model_path).normalizer, features);
  write_csv(rc, *out, "features", [&](std::ostream& os) { write_features_csv(features, os); });
  return 0;
}

int cmd_train(const RunConfig& rc, const std::optional<std::string>& model_out, bool compare, bool split,
              double cmp_attack, double cmp_filler) {
  std::vector<std::string> problems;
  require_data(rc, problems);
  if (!model_out && !compare) problems.push_back("--model-out is required unless --compare-regressors");
  for (const auto& p : rc.experiment.problems()) problems.push_back(p);
  fail_if(problems);
  const auto ds = load(rc);

  if (compare) {
    const auto rows = compare_regressors(ds, rc.experiment, cmp_attack, cmp_filler, rc.seed);
    std::cout << "model,linear_pp,quadratic_pp,linear_pp_holdout,quadratic_pp_holdout\n";
    for (const auto& r : rows) {
      std::cout << to_string(r.model) << ',' << fixed(r.linear_train) << ',' << fixed(r.quadratic_train) << ','
                << fixed(r.linear_holdout) << ',' << fixed(r.quadratic_holdout) << '\n';
    }
  }
  if (!model_out) return 0;

  const auto& cfg = rc.experiment;
  RatingDataset train = split ? split_half(ds, rc.seed).first : ds;
  info("training on " + std::to_string(train.count(Label::genuine)) + " genuine users");
  const auto training = build_training_set(train, cfg, derive_seed(rc.seed, {1}));
  auto model = train_model(training.features, cfg.regressor, cfg.lambda, cfg.fit_rows);
  model.scale = ds.scale();
  model.intent = cfg.intent;
  model.popularity = cfg.popularity;
  model.mid_rating = cfg.mid_rating.value_or(ds.scale().mid());
  model.seed = rc.seed;
  model.threshold = fit_threshold(model, training.features, cfg.threshold, derive_seed(rc.seed, {3}));
  const double pp = model.training_pp;
  std::cout << "regressor " << to_string(model.kind) << "\nd " << model.m.cols() << "\nrows " << training.features.size()
            << "\nfit_rows " << model.count << "\npp " << fixed(pp) << "\nthreshold " << model.threshold << '\n';
  const auto path = output_path(rc, *model_out);
  save_model(model, path);
  info("wrote " + path.string());
  return 0;
}

std::vector<DetectionScore> score_dataset(const TrainedModel& model, const RatingDataset& ds) {
  if (ds.scale().min != model.scale.min || ds.scale().max != model.scale.max)
    throw Error("dataset scale differs from the model's");
  const auto stats = compute_item_stats(ds, model.popularity, model.intent);
  return score_features(model, extract_features(ds, stats, model.mid_rating));
}

int cmd_detect(RunConfig rc, const std::optional<std::string>& out, std::optional<double> threshold) {
  std::vector<std::string> problems;
  require_data(rc, problems);
  if (!out) problems.push_back("--out is required");
  if (rc.model_path.empty()) problems.push_back("--model is required");
  else if (!fs::exists(rc.model_path)) problems.push_back("model not found: " + rc.model_path);
  if (threshold && !(*threshold >= 0.0)) problems.push_back("--threshold must be >= 0");
  fail_if(problems);
  auto model = load_model(rc.model_path);
  if (threshold) model.threshold = *threshold;
  rc.scale = model.scale;
  const auto ds = load(rc);
  auto scores = score_dataset(model, ds);
  std::size_t flagged = 0;
  for (const auto& s : scores) flagged += s.label;
  std::cout << "users " << scores.size() << "\nflagged " << flagged << '\n';
  if (ds.count(Label::attacker) > 0 && ds.count(Label::genuine) > 0) {
    std::vector<int> d, t;
    for (const auto& s : scores) {
      d.push_back(s.label);
      t.push_back(s.truth == Label::attacker);
    }
    const auto r = metrics(d, t);
    std::cout << "detection " << fixed(r.detection) << "\nfalse_alarm " << fixed(r.false_alarm) << '\n';
  }
  rc.seed = model.seed;
  write_csv(rc, *out, "scores", [&](std::ostream& os) { write_scores_csv(scores, os); });
  return 0;
}

/// Reads a scores CSV; `seed` receives the master seed from its header line.
std::vector<DetectionScore> read_scores_csv(const std::string& path, std::uint64_t& seed) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<DetectionScore> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    auto sv = detail::trim(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      if (const auto at = sv.find("master_seed="); at != std::string_view::npos)
        if (auto v = detail::parse_int<std::uint64_t>(sv.substr(at + 12))) seed = *v;
      continue;
    }
    if (!header) {
      if (sv != "user,score,label,truth") throw Error(path + ": missing header 'user,score,label,truth'");
      header = true;
      continue;
    }
    auto f = detail::split(sv, ',');
    auto u = f.size() == 4 ? detail::parse_int<UserId>(f[0]) : std::nullopt;
    auto s = f.size() == 4 ? detail::parse_double(f[1]) : std::nullopt;
    if (!u || !s) throw Error(path + ": line " + std::to_string(lineno) + ": malformed row");
    DetectionScore d;
    d.user = *u;
    d.score = *s;
    d.label = f[2] == "1";
    d.truth = parse_label(f[3]);
    out.push_back(std::move(d));
  }
  if (!header) throw Error(path + ": no scores");
  return out;
}

int cmd_roc(RunConfig rc, const std::optional<std::string>& scores_path, const std::optional<std::string>& out) {
  std::vector<std::string> problems;
  if (!out) problems.push_back("--out is required");
  if (scores_path) {
    if (!fs::exists(*scores_path)) problems.push_back("scores file not found: " + *scores_path);
  } else {
    require_data(rc, problems);
    if (rc.model_path.empty()) problems.push_back("give --scores, or --data with --model");
    else if (!fs::exists(rc.model_path)) problems.push_back("model not found: " + rc.model_path);
  }
  fail_if(problems);
  std::vector<DetectionScore> scores;
  if (scores_path) {
    scores = read_scores_csv(*scores_path, rc.seed);
  } else {
    const auto model = load_model(rc.model_path);
    rc.scale = model.scale;
    scores = score_dataset(model, load(rc));
    rc.seed = model.seed;
  }
  const auto roc = roc_sweep(scores);
  write_csv(rc, *out, "roc", [&](std::ostream& os) { write_roc_csv(roc, os); });
  return 0;
}

std::string cell_name(const CellKey& k) {
  std::ostringstream s;
  s << to_string(k.model) << '_' << k.attack_size << '_' << k.filler_size;
  return s.str();
}

CellKey parse_cell(const std::string& text) {
  auto f = detail::split(text, ':');
  if (f.size() != 3) throw UsageError("--roc-cell expects Model:attack_size:filler_size, got " + text);
  auto a = detail::parse_double(f[1]);
  auto fl = detail::parse_double(f[2]);
  if (!a || !fl) throw UsageError("--roc-cell has bad sizes: " + text);
  return {parse_attack_model(f[0]), *a, *fl};
}

int cmd_eval(RunConfig rc, const std::optional<std::string>& out, const std::optional<std::string>& method,
             const std::vector<std::string>& roc_cells, const std::optional<std::string>& roc_dir) {
  std::vector<std::string> problems;
  require_data(rc, problems);
  if (!out) problems.push_back("--out is required");
  for (const auto& c : roc_cells) {
    try {
      rc.experiment.roc_cells.push_back(parse_cell(c));
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  if (!rc.experiment.roc_cells.empty() && !roc_dir) problems.push_back("ROC cells need --roc-dir");
  for (const auto& p : rc.experiment.problems()) problems.push_back(p);
  fail_if(problems);

  const auto ds = load(rc);
  info("running " + std::to_string(rc.experiment.models.size() * rc.experiment.attack_sizes.size() *
                                   rc.experiment.filler_sizes.size()) +
       " cells x " + std::to_string(rc.experiment.repetitions) + " repetitions");
  const auto grid = run_experiment(ds, rc.experiment);
  const bool only_knn = method && *method == "knn";
  write_csv(rc, *out, "grid", [&](std::ostream& os) {
    std::ostringstream all;
    write_grid_csv(grid, all);
    std::istringstream lines(all.str());
    std::string line;
    while (std::getline(lines, line)) {
      const bool is_knn = line.size() >= 4 && line.compare(line.size() - 4, 4, ",knn") == 0;
      const bool keep = line.starts_with('#') || line.starts_with("model,");
      if (keep || !only_knn || is_knn) os << line << '\n';
    }
  });
  for (const auto& [key, reps] : grid.roc) {
    for (std::size_t r = 0; r < reps.size(); ++r) {
      const auto name = (fs::path(*roc_dir) / ("roc_" + cell_name(key) + "_rep" + std::to_string(r) + ".csv")).string();
      write_csv(rc, name, "roc", [&](std::ostream& os) { write_roc_csv(reps[r], os); });
    }
  }
  for (std::size_t r = 0; r < grid.training_pp.size(); ++r)
    debug("rep " + std::to_string(r) + ": pp " + fixed(grid.training_pp[r]) + ", threshold " +
          fixed(grid.thresholds[r], 3));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shilling attack detection by regression of item attributes on rating attributes"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::string> config_path;
  Overrides o;
  int verbose = 0;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", o.seed, "Master seed");
  app.add_flag("-v,--verbose", verbose, "More progress output");
  app.add_flag("-q,--quiet", quiet, "No progress output");

  std::optional<std::string> out, dump, model_out, scores_path, roc_dir;
  std::optional<double> threshold;
  bool profiles_only = false, normalize = false, compare = false, split = false;
  double cmp_attack = 0.125, cmp_filler = 0.052;
  std::vector<std::string> roc_cells;

  auto* ingest = app.add_subcommand("ingest", "Load a dataset and print a summary");
  add_dataset_options(ingest, o);
  ingest->add_option("--dump", dump, "Write the canonical CSV dump");

  auto* inject_cmd = app.add_subcommand("inject", "Add synthetic attack profiles to a dataset");
  add_dataset_options(inject_cmd, o);
  add_attack_options(inject_cmd, o);
  inject_cmd->add_option("--out", out, "Output dataset CSV");
  inject_cmd->add_flag("--profiles-only", profiles_only, "Write only the generated profiles");

  auto* featurize = app.add_subcommand("featurize", "Write the 20 per-user attributes");
  add_dataset_options(featurize, o);
  featurize->add_option("--out", out, "Output features CSV");
  featurize->add_option("--model", o.model, "Model whose normalizer to apply");
  featurize->add_flag("--normalize", normalize, "Normalize with the model's bounds");

  auto* train = app.add_subcommand("train", "Fit a detector on a dataset plus a training attack mix");
  add_dataset_options(train, o);
  add_experiment_options(train, o);
  train->add_option("--model-out", model_out, "Output model JSON");
  train->add_flag("--split", split, "Train on the first half of a seeded split only");
  train->add_flag("--compare-regressors", compare, "Print predictive power of both regressors per attack model");
  train->add_option("--compare-attack-size", cmp_attack, "Attack size for --compare-regressors");
  train->add_option("--compare-filler-size", cmp_filler, "Filler size for --compare-regressors");
  train->add_option("--models", o.models, "Attack models for --compare-regressors");

  auto* detect = app.add_subcommand("detect", "Score every user of a dataset");
  add_dataset_options(detect, o);
  detect->add_option("--model", o.model, "Model JSON");
  detect->add_option("--out", out, "Output scores CSV");
  detect->add_option("--threshold", threshold, "Override the model threshold");

  auto* eval = app.add_subcommand("eval", "Run the attack grid experiment");
  add_dataset_options(eval, o);
  add_experiment_options(eval, o);
  std::optional<std::string> method;
  eval->add_option("--out", out, "Output grid CSV");
  eval->add_option("--method", method, "regression | knn | both");
  eval->add_option("--k", o.k, "Neighbours for the KNN baseline");
  eval->add_option("--models", o.models, "Attack models");
  eval->add_option("--attack-sizes", o.attack_sizes, "Attack sizes");
  eval->add_option("--filler-sizes", o.filler_sizes, "Filler sizes");
  eval->add_option("--repetitions", o.repetitions, "Repetitions");
  eval->add_option("--threads", o.threads, "Worker threads");
  eval->add_option("--roc-cell", roc_cells, "Model:attack_size:filler_size to export ROC curves for");
  eval->add_option("--roc-dir", roc_dir, "Directory for ROC CSVs");

  auto* roc = app.add_subcommand("roc", "Threshold sweep from scores or from a dataset and model");
  add_dataset_options(roc, o);
  roc->add_option("--scores", scores_path, "Scores CSV written by detect");
  roc->add_option("--model", o.model, "Model JSON");
  roc->add_option("--out", out, "Output ROC CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig rc;
    if (config_path) read_run_config(*config_path, rc);
    if (method) o.method = method;
    try {
      apply(o, rc);
    } catch (const UsageError&) {
      throw;
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    verbosity = quiet ? 0 : rc.verbosity + verbose;

    if (ingest->parsed()) return cmd_ingest(rc, dump);
    if (inject_cmd->parsed()) return cmd_inject(rc, out, profiles_only);
    if (featurize->parsed()) return cmd_featurize(rc, out, normalize);
    if (train->parsed()) return cmd_train(rc, model_out, compare, split, cmp_attack, cmp_filler);
    if (detect->parsed()) return cmd_detect(rc, out, threshold);
    if (eval->parsed()) return cmd_eval(rc, out, method, roc_cells, roc_dir);
    if (roc->parsed()) return cmd_roc(rc, scores_path, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
