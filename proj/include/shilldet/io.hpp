#pragma once

// JSON configuration blocks, the model file, and atomic output files.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shilldet/attack.hpp"
#include "shilldet/common.hpp"
#include "shilldet/dataset.hpp"
#include "shilldet/detector.hpp"
#include "shilldet/eval.hpp"
#include "shilldet/features.hpp"
#include "shilldet/regression.hpp"

namespace shilldet {

using Json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

/// Writes `path` through a sibling temporary file and a rename, so readers
/// never observe a partial file. The temporary is removed on failure.
inline void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  auto tmp = path;
  tmp += ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write " + tmp.string());
      body(out);
      out.flush();
      if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

/// First line of every CSV output; loaders skip '#' lines.
inline void write_seed_header(std::ostream& out, std::uint64_t seed, std::string_view what) {
  out << "# shilldet " << what << " master_seed=" << seed << '\n';
}

namespace detail {

inline const char* to_string(PopularityRule::Mode m) { return m == PopularityRule::Mode::absolute ? "absolute" : "relative"; }

inline PopularityRule::Mode parse_popularity_mode(const std::string& s) {
  if (s == "absolute") return PopularityRule::Mode::absolute;
  if (s == "relative") return PopularityRule::Mode::relative;
  throw Error("unknown popularity mode '" + s + "' (expected absolute|relative)");
}

/// Collects type and key problems for one JSON object instead of stopping at
/// the first.
class Reader {
 public:
  Reader(const Json& j, std::string where, std::vector<std::string>& problems)
      : j_(j), where_(std::move(where)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(where_ + " must be an object");
  }

  bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      problems_.push_back(where_ + "." + key + " has the wrong type");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.push_back(key);
    if (!has(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      problems_.push_back(where_ + "." + key + " has the wrong type");
    }
  }

  template <typename T, typename F>
  void get_as(const char* key, T& out, F&& parse) {
    std::string s;
    get(key, s);
    if (!has(key) || s.empty()) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      problems_.push_back(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.push_back(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  std::vector<std::string>& problems() { return problems_; }
  const std::string& where() const { return where_; }

  /// Reports keys nobody asked for; call after every get.
  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        problems_.push_back(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::vector<std::string>& problems_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline Json to_json(const Scale& s) { return {{"min", s.min}, {"max", s.max}, {"half_stars", s.half_stars}}; }

inline void read_json(const Json& j, Scale& s, std::vector<std::string>& problems, const std::string& where = "scale") {
  detail::Reader r(j, where, problems);
  r.get("min", s.min);
  r.get("max", s.max);
  r.get("half_stars", s.half_stars);
  r.finish();
}

inline Json to_json(const PopularityRule& p) {
  return {{"mode", detail::to_string(p.mode)},
          {"pop_threshold", p.pop_threshold},
          {"unpop_threshold", p.unpop_threshold},
          {"relative_fraction", p.relative_fraction}};
}

inline void read_json(const Json& j, PopularityRule& p, std::vector<std::string>& problems,
                      const std::string& where = "popularity") {
  detail::Reader r(j, where, problems);
  r.get_as("mode", p.mode, detail::parse_popularity_mode);
  r.get("pop_threshold", p.pop_threshold);
  r.get("unpop_threshold", p.unpop_threshold);
  r.get("relative_fraction", p.relative_fraction);
  r.finish();
}

inline Json to_json(const AttackSpec& s) {
  Json j{{"model", to_string(s.model)},
         {"intent", to_string(s.intent)},
         {"attack_size", s.attack_size},
         {"filler_size", s.filler_size},
         {"target_count", s.target_count},
         {"seed", s.seed}};
  if (s.aop_top_percent) j["aop_top_percent"] = *s.aop_top_percent;
  if (s.selected_count) j["selected_count"] = *s.selected_count;
  if (s.profile_count) j["profile_count"] = *s.profile_count;
  return j;
}

inline void read_json(const Json& j, AttackSpec& s, std::vector<std::string>& problems,
                      const std::string& where = "attack") {
  detail::Reader r(j, where, problems);
  r.get_as("model", s.model, [](const std::string& v) { return parse_attack_model(v); });
  r.get_as("intent", s.intent, [](const std::string& v) { return parse_intent(v); });
  r.get("attack_size", s.attack_size);
  r.get("filler_size", s.filler_size);
  r.get("target_count", s.target_count);
  r.get("aop_top_percent", s.aop_top_percent);
  r.get("selected_count", s.selected_count);
  r.get("profile_count", s.profile_count);
  r.get("seed", s.seed);
  r.finish();
}

namespace detail {

inline ThresholdPolicy::Mode parse_threshold_mode(const std::string& s) {
  if (s == "in_sample") return ThresholdPolicy::Mode::in_sample;
  if (s == "cross_validated") return ThresholdPolicy::Mode::cross_validated;
  throw Error("unknown threshold mode '" + s + "' (expected in_sample|cross_validated)");
}

inline const char* to_string(ThresholdPolicy::Mode m) {
  return m == ThresholdPolicy::Mode::in_sample ? "in_sample" : "cross_validated";
}

inline FitRows parse_fit_rows(const std::string& s) {
  if (s == "all") return FitRows::all;
  if (s == "genuine") return FitRows::genuine;
  throw Error("unknown fit_rows '" + s + "' (expected all|genuine)");
}

inline const char* to_string(FitRows f) { return f == FitRows::all ? "all" : "genuine"; }

inline std::vector<AttackModel> parse_models(const std::vector<std::string>& names) {
  std::vector<AttackModel> out;
  for (const auto& n : names) out.push_back(parse_attack_model(n));
  return out;
}

}  // namespace detail

inline Json to_json(const ThresholdPolicy& t) {
  return {{"mode", detail::to_string(t.mode)}, {"target_false_alarm", t.target_false_alarm}, {"folds", t.folds}};
}

inline void read_json(const Json& j, ThresholdPolicy& t, std::vector<std::string>& problems,
                      const std::string& where = "threshold") {
  detail::Reader r(j, where, problems);
  r.get_as("mode", t.mode, detail::parse_threshold_mode);
  r.get("target_false_alarm", t.target_false_alarm);
  r.get("folds", t.folds);
  r.finish();
}

/// Reads the `experiment` block. Scale, intent and popularity are shared
/// with the rest of the run configuration and are not read here.
inline void read_json(const Json& j, ExperimentConfig& c, std::vector<std::string>& problems,
                      const std::string& where = "experiment") {
  detail::Reader r(j, where, problems);
  auto models = [](const std::string& v) { return parse_attack_model(v); };
  if (const Json* m = r.child("models")) {
    try {
      c.models = detail::parse_models(m->get<std::vector<std::string>>());
    } catch (const std::exception& e) {
      problems.push_back(where + ".models: " + e.what());
    }
  }
  r.get("attack_sizes", c.attack_sizes);
  r.get("filler_sizes", c.filler_sizes);
  r.get("repetitions", c.repetitions);
  r.get_as("regressor", c.regressor, [](const std::string& v) { return parse_regressor(v); });
  r.get("lambda", c.lambda);
  r.get_as("fit_rows", c.fit_rows, detail::parse_fit_rows);
  if (const Json* t = r.child("threshold")) read_json(*t, c.threshold, problems, where + ".threshold");
  if (const Json* mix = r.child("training_mix")) {
    detail::Reader mr(*mix, where + ".training_mix", problems);
    if (const Json* m = mr.child("models")) {
      try {
        c.mix.models = detail::parse_models(m->get<std::vector<std::string>>());
      } catch (const std::exception& e) {
        problems.push_back(where + ".training_mix.models: " + e.what());
      }
    }
    mr.get("filler_sizes", c.mix.filler_sizes);
    mr.get("profiles_per_cell", c.mix.profiles_per_cell);
    mr.finish();
  }
  r.get("knn", c.knn);
  r.get("knn_k", c.knn_k);
  if (const Json* roc = r.child("roc_cells")) {
    if (!roc->is_array()) {
      problems.push_back(where + ".roc_cells must be an array");
    } else {
      for (std::size_t k = 0; k < roc->size(); ++k) {
        const std::string w = where + ".roc_cells[" + std::to_string(k) + "]";
        CellKey key{AttackModel::random, 0.0, 0.0};
        detail::Reader cr((*roc)[k], w, problems);
        cr.get_as("model", key.model, models);
        cr.get("attack_size", key.attack_size);
        cr.get("filler_size", key.filler_size);
        cr.finish();
        c.roc_cells.push_back(key);
      }
    }
  }
  r.get("threads", c.threads);
  r.finish();
}

inline Json to_json(const ExperimentConfig& c) {
  std::vector<std::string> models, mix_models;
  for (auto m : c.models) models.emplace_back(to_string(m));
  for (auto m : c.mix.models) mix_models.emplace_back(to_string(m));
  Json roc = Json::array();
  for (const auto& k : c.roc_cells)
    roc.push_back({{"model", to_string(k.model)}, {"attack_size", k.attack_size}, {"filler_size", k.filler_size}});
  return {{"models", models},
          {"attack_sizes", c.attack_sizes},
          {"filler_sizes", c.filler_sizes},
          {"repetitions", c.repetitions},
          {"regressor", to_string(c.regressor)},
          {"lambda", c.lambda},
          {"fit_rows", detail::to_string(c.fit_rows)},
          {"threshold", to_json(c.threshold)},
          {"training_mix",
           {{"models", mix_models}, {"filler_sizes", c.mix.filler_sizes}, {"profiles_per_cell", c.mix.profiles_per_cell}}},
          {"knn", c.knn},
          {"knn_k", c.knn_k},
          {"roc_cells", roc},
          {"threads", c.threads}};
}

namespace detail {

inline Json row_major(const Eigen::MatrixXd& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

inline Eigen::MatrixXd from_row_major(const Json& a, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(rows * cols))
    throw Error(std::string("model file: ") + name + " must hold " + std::to_string(rows * cols) + " numbers");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = a[static_cast<std::size_t>(i * cols + j)].get<double>();
  return m;
}

template <std::size_t N>
std::array<double, N> fixed_array(const Json& a, const char* name) {
  if (!a.is_array() || a.size() != N)
    throw Error(std::string("model file: ") + name + " must hold " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t k = 0; k < N; ++k) out[k] = a[k].get<double>();
  return out;
}

}  // namespace detail

/// Versioned model file. An infinite threshold is stored as null.
inline Json model_to_json(const TrainedModel& m) {
  Json j;
  j["format"] = "shilldet-model";
  j["version"] = kModelFormatVersion;
  j["master_seed"] = m.seed;
  j["regressor"] = to_string(m.kind);
  j["d"] = m.m.cols();
  j["quadratic_order"] = "R_j*R_k for j<=k lexicographic, then R, then 1";
  j["lambda"] = m.lambda;
  j["n"] = m.count;
  j["m"] = detail::row_major(m.m);
  j["c"] = detail::row_major(m.c);
  j["epsilon"] = m.epsilon;
  j["threshold"] = std::isinf(m.threshold) ? Json(nullptr) : Json(m.threshold);
  j["normalizer"] = {{"rating_min", m.normalizer.rating.min},
                     {"rating_max", m.normalizer.rating.max},
                     {"item_min", m.normalizer.item.min},
                     {"item_max", m.normalizer.item.max}};
  j["popularity"] = to_json(m.popularity);
  j["intent"] = to_string(m.intent);
  j["mid_rating"] = m.mid_rating;
  j["scale"] = to_json(m.scale);
  return j;
}

inline TrainedModel model_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "shilldet-model") throw Error("not a shilldet model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw Error("unsupported model version " + std::to_string(version));
    TrainedModel m;
    m.kind = parse_regressor(j.at("regressor").get<std::string>());
    const auto d = static_cast<Eigen::Index>(regressor_dim(m.kind));
    if (j.at("d").get<Eigen::Index>() != d) throw Error("d does not match the regressor kind");
    m.seed = j.at("master_seed").get<std::uint64_t>();
    m.lambda = j.at("lambda").get<double>();
    m.count = j.at("n").get<std::size_t>();
    m.m = detail::from_row_major(j.at("m"), kItemDims, d, "m");
    m.c = detail::from_row_major(j.at("c"), kItemDims, kItemDims, "c");
    m.epsilon = j.at("epsilon").get<double>();
    m.threshold = j.at("threshold").is_null() ? std::numeric_limits<double>::infinity()
                                              : j.at("threshold").get<double>();
    const auto& n = j.at("normalizer");
    m.normalizer.rating.min = detail::fixed_array<kRatingDims>(n.at("rating_min"), "rating_min");
    m.normalizer.rating.max = detail::fixed_array<kRatingDims>(n.at("rating_max"), "rating_max");
    m.normalizer.item.min = detail::fixed_array<kItemDims>(n.at("item_min"), "item_min");
    m.normalizer.item.max = detail::fixed_array<kItemDims>(n.at("item_max"), "item_max");
    std::vector<std::string> problems;
    read_json(j.at("popularity"), m.popularity, problems);
    read_json(j.at("scale"), m.scale, problems);
    if (!problems.empty()) throw Error(problems.front());
    m.intent = parse_intent(j.at("intent").get<std::string>());
    m.mid_rating = j.at("mid_rating").get<int>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) { out << model_to_json(m).dump(2) << '\n'; });
}

}  // namespace shilldet
