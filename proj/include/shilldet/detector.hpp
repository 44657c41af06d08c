#pragma once

// Mahalanobis scoring of model residuals, thresholding and ROC sweeps.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "shilldet/common.hpp"
#include "shilldet/features.hpp"
#include "shilldet/regression.hpp"

namespace shilldet {

/// Res = I - M Psi in normalized output space.
inline Eigen::VectorXd residual(const Eigen::MatrixXd& m, const Eigen::VectorXd& psi, const Eigen::VectorXd& out) {
  if (m.cols() != psi.size() || m.rows() != out.size()) throw Error("residual dimension mismatch");
  return out - m * psi;
}

inline Eigen::VectorXd residual(const TrainedModel& model, const Eigen::VectorXd& psi, const Eigen::VectorXd& out) {
  return residual(model.m, psi, out);
}

/// Default covariance regularization: 1e-8 * trace(C) / dim.
inline double default_epsilon(const Eigen::MatrixXd& c) { return 1e-8 * c.trace() / static_cast<double>(c.rows()); }

/// Holds the factorization of C + eps I so many residuals can be scored.
class MahalanobisScorer {
 public:
  MahalanobisScorer(const Eigen::MatrixXd& c, double epsilon) {
    if (c.rows() != c.cols()) throw Error("covariance must be square");
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw Error("covariance is not symmetric");
    if (!(epsilon >= 0.0)) throw Error("epsilon must be nonnegative");
    Eigen::MatrixXd reg = c;
    reg.diagonal().array() += epsilon;
    llt_.compute(reg);
    if (llt_.info() != Eigen::Success) throw Error("covariance + eps I is not positive definite");
  }

  /// res^T (C + eps I)^{-1} res = ||L^{-1} res||^2.
  double operator()(const Eigen::VectorXd& res) const {
    if (res.size() != llt_.matrixL().rows()) throw Error("residual dimension mismatch");
    const Eigen::VectorXd w = llt_.matrixL().solve(res);
    return w.squaredNorm();
  }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline double score(const Eigen::VectorXd& res, const Eigen::MatrixXd& c, double epsilon) {
  return MahalanobisScorer(c, epsilon)(res);
}

struct DetectionScore {
  UserId user = 0;
  Eigen::VectorXd residual;
  double score = 0.0;
  int label = 0;  // 1 = flagged as attacker
  Label truth = Label::unknown;
};

/// Scores raw (unnormalized) features with a trained model; labels use the
/// model's threshold.
inline std::vector<DetectionScore> score_features(const TrainedModel& model, std::span<const ProfileFeatures> raw) {
  MahalanobisScorer scorer(model.c, model.epsilon);
  std::vector<DetectionScore> out;
  out.reserve(raw.size());
  for (const auto& f : raw) {
    const auto n = model.normalizer.apply(f);
    DetectionScore s;
    s.user = f.user;
    s.truth = f.label;
    s.residual = residual(model, regress(model.kind, n.rating), to_eigen(n.item));
    s.score = scorer(s.residual);
    s.label = s.score >= model.threshold ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

/// 1 where score >= threshold.
inline std::vector<int> classify(std::span<const double> scores, double threshold) {
  if (!(threshold >= 0.0)) throw Error("threshold must be nonnegative");
  std::vector<int> labels(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) labels[k] = scores[k] >= threshold ? 1 : 0;
  return labels;
}

inline void classify(std::span<DetectionScore> scores, double threshold) {
  if (!(threshold >= 0.0)) throw Error("threshold must be nonnegative");
  for (auto& s : scores) s.label = s.score >= threshold ? 1 : 0;
}

struct RocPoint {
  double threshold;
  double false_alarm;
  double detection;
};

/// One point per distinct score used as threshold (flag score >= t), preceded
/// by the (0, 0) point at t = +inf. The lowest score yields (1, 1).
inline std::vector<RocPoint> roc_sweep(std::span<const double> scores, std::span<const int> is_attacker) {
  if (scores.size() != is_attacker.size()) throw Error("scores and truth differ in length");
  std::size_t n_att = 0;
  for (int a : is_attacker) n_att += a != 0;
  const std::size_t n_gen = scores.size() - n_att;
  if (n_att == 0 || n_gen == 0) throw Error("ROC needs both attackers and genuine users");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (is_attacker[order[k]] ? tp : fp) += 1;
    if (k + 1 < order.size() && scores[order[k + 1]] == scores[order[k]]) continue;
    out.push_back({scores[order[k]], static_cast<double>(fp) / static_cast<double>(n_gen),
                   static_cast<double>(tp) / static_cast<double>(n_att)});
  }
  return out;
}

inline std::vector<RocPoint> roc_sweep(std::span<const DetectionScore> scores) {
  std::vector<double> s;
  std::vector<int> truth;
  for (const auto& d : scores) {
    if (d.truth == Label::unknown) continue;
    s.push_back(d.score);
    truth.push_back(d.truth == Label::attacker ? 1 : 0);
  }
  return roc_sweep(s, truth);
}

/// Threshold whose false-alarm rate on the genuine training scores is the
/// largest value not exceeding `target_false_alarm` (the empirical
/// 1 - target quantile). Target 0 lies just above the largest score.
inline double choose_threshold(std::span<const double> genuine_scores, double target_false_alarm) {
  if (genuine_scores.size() < 10) throw Error("choose_threshold needs at least 10 genuine scores");
  if (!(target_false_alarm >= 0.0 && target_false_alarm <= 1.0))
    throw Error("target false alarm must lie in [0, 1]");
  if (target_false_alarm >= 1.0) return 0.0;
  std::vector<double> s(genuine_scores.begin(), genuine_scores.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(std::floor(target_false_alarm * static_cast<double>(s.size()) + 1e-9));
  if (allowed == 0) return std::nextafter(s.front(), std::numeric_limits<double>::infinity());
  return s[allowed - 1];
}

/// Out-of-fold scores of the genuine training rows: the genuine rows are
/// shuffled into `folds` groups and each group is scored by a model identified
/// on the others. Used to pick thresholds without the optimism of scoring
/// users the model was fitted on.
inline std::vector<double> out_of_fold_genuine_scores(std::span<const ProfileFeatures> training,
                                                      const FeatureNormalizer& normalizer, RegressorKind kind,
                                                      double lambda, int folds, std::uint64_t seed) {
  std::vector<std::size_t> genuine;
  for (std::size_t k = 0; k < training.size(); ++k)
    if (training[k].label == Label::genuine) genuine.push_back(k);
  if (folds < 2 || genuine.size() < static_cast<std::size_t>(folds))
    throw Error("need at least 2 folds and one genuine row per fold");
  std::mt19937_64 rng(seed);
  std::shuffle(genuine.begin(), genuine.end(), rng);
  const auto nf = static_cast<std::size_t>(folds);

  std::vector<ProfileFeatures> norm(genuine.size());
  for (std::size_t j = 0; j < genuine.size(); ++j) norm[j] = normalizer.apply(training[genuine[j]]);

  std::vector<double> scores;
  scores.reserve(genuine.size());
  for (std::size_t fold = 0; fold < nf; ++fold) {
    RunningSums sums(regressor_dim(kind));
    for (std::size_t j = 0; j < norm.size(); ++j)
      if (j % nf != fold) sums.accumulate(regress(kind, norm[j].rating), to_eigen(norm[j].item));
    const auto m = solve_model(sums, lambda);
    const auto c = covariance(sums, m);
    MahalanobisScorer scorer(c, default_epsilon(c));
    for (std::size_t j = fold; j < norm.size(); j += nf)
      scores.push_back(scorer(residual(m, regress(kind, norm[j].rating), to_eigen(norm[j].item))));
  }
  return scores;
}

/// How the operating threshold is derived from the genuine training users.
struct ThresholdPolicy {
  enum class Mode { in_sample, cross_validated };
  Mode mode = Mode::cross_validated;
  double target_false_alarm = 0.10;
  int folds = 5;
};

/// Threshold for a model trained on `training` with `train_model`.
inline double fit_threshold(const TrainedModel& model, std::span<const ProfileFeatures> training,
                            const ThresholdPolicy& policy, std::uint64_t seed) {
  std::vector<double> genuine;
  if (policy.mode == ThresholdPolicy::Mode::cross_validated) {
    genuine = out_of_fold_genuine_scores(training, model.normalizer, model.kind, model.lambda, policy.folds, seed);
  } else {
    for (const auto& s : score_features(model, training))
      if (s.truth == Label::genuine) genuine.push_back(s.score);
  }
  return choose_threshold(genuine, policy.target_false_alarm);
}

/// `user,score,label,truth`
inline void write_scores_csv(std::span<const DetectionScore> scores, std::ostream& out) {
  out << "user,score,label,truth\n";
  const auto old = out.precision(17);
  for (const auto& s : scores) out << s.user << ',' << s.score << ',' << s.label << ',' << to_string(s.truth) << '\n';
  out.precision(old);
}

/// `threshold,false_alarm,detection`
inline void write_roc_csv(std::span<const RocPoint> roc, std::ostream& out) {
  out << "threshold,false_alarm,detection\n";
  const auto old = out.precision(17);
  for (const auto& p : roc) {
    if (std::isinf(p.threshold)) {
      out << "inf";
    } else {
      out << p.threshold;
    }
    out << ',' << p.false_alarm << ',' << p.detection << '\n';
  }
  out.precision(old);
}

}  // namespace shilldet
