#pragma once

// Regularized least-squares identification of the map from (regressed)
// rating attributes to item attributes:
//
//   minimize  sum_u ||I_u - M Psi_u||^2 + lambda ||M||_F^2
//
// solved through the normal equations (lambda I + S_pp) M^T = S_pi, where the
// running sums S_pp = sum Psi Psi^T, S_pi = sum Psi I^T and S_ii = sum I I^T
// can be accumulated in any order and merged across partitions.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "shilldet/common.hpp"
#include "shilldet/dataset.hpp"
#include "shilldet/features.hpp"

namespace shilldet {

enum class RegressorKind { linear, quadratic };

inline std::string_view to_string(RegressorKind k) { return k == RegressorKind::linear ? "linear" : "quadratic"; }

inline RegressorKind parse_regressor(std::string_view s) {
  if (s == "linear") return RegressorKind::linear;
  if (s == "quadratic") return RegressorKind::quadratic;
  throw Error("unknown regressor '" + std::string(s) + "' (expected linear|quadratic)");
}

/// Length of Psi(R) for a 12-dim input: 13 (linear) or 78 + 12 + 1 = 91.
constexpr std::size_t regressor_dim(RegressorKind k, std::size_t input = kRatingDims) {
  return k == RegressorKind::linear ? input + 1 : input * (input + 1) / 2 + input + 1;
}

/// Psi(R). Quadratic terms R_j R_k (j <= k) come first in lexicographic
/// order, then R itself, then the constant 1.
inline Eigen::VectorXd regress(RegressorKind kind, const RatingVector& r) {
  Eigen::VectorXd psi(static_cast<Eigen::Index>(regressor_dim(kind)));
  Eigen::Index at = 0;
  if (kind == RegressorKind::quadratic) {
    for (std::size_t j = 0; j < kRatingDims; ++j)
      for (std::size_t k = j; k < kRatingDims; ++k) psi[at++] = r[j] * r[k];
  }
  for (double v : r) psi[at++] = v;
  psi[at] = 1.0;
  return psi;
}

inline Eigen::Matrix<double, kItemDims, 1> to_eigen(const ItemVector& v) {
  return Eigen::Map<const Eigen::Matrix<double, kItemDims, 1>>(v.data());
}

struct RunningSums {
  Eigen::MatrixXd psi_psi;  // d x d
  Eigen::MatrixXd psi_out;  // d x 8
  Eigen::MatrixXd out_out;  // 8 x 8
  std::size_t count = 0;

  explicit RunningSums(std::size_t d = 0)
      : psi_psi(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))),
        psi_out(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), kItemDims)),
        out_out(Eigen::MatrixXd::Zero(kItemDims, kItemDims)) {}

  std::size_t dim() const { return static_cast<std::size_t>(psi_psi.rows()); }

  void accumulate(const Eigen::VectorXd& psi, const Eigen::VectorXd& out) {
    if (psi.size() != psi_psi.rows() || out.size() != static_cast<Eigen::Index>(kItemDims))
      throw Error("running-sum dimension mismatch");
    psi_psi.noalias() += psi * psi.transpose();
    psi_out.noalias() += psi * out.transpose();
    out_out.noalias() += out * out.transpose();
    ++count;
  }

  void merge(const RunningSums& other) {
    if (other.dim() != dim()) throw Error("cannot merge running sums of different dimension");
    psi_psi += other.psi_psi;
    psi_out += other.psi_out;
    out_out += other.out_out;
    count += other.count;
  }
};

/// Solves (lambda I + S_pp) M^T = S_pi by Cholesky; returns M (8 x d).
inline Eigen::MatrixXd solve_model(const RunningSums& sums, double lambda) {
  if (!(lambda >= 0.0)) throw Error("lambda must be nonnegative");
  Eigen::MatrixXd a = sums.psi_psi;
  a.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14)) {
    throw Error("normal equations are singular at lambda = " + std::to_string(lambda) +
                "; use a positive regularization lambda");
  }
  Eigen::MatrixXd mt = llt.solve(sums.psi_out);
  return mt.transpose();
}

/// Residual covariance from the running sums:
/// C = (S_ii - M S_pi - S_pi^T M^T + M S_pp M^T) / (N - 1), symmetrized.
inline Eigen::MatrixXd covariance(const RunningSums& sums, const Eigen::MatrixXd& m) {
  if (sums.count < 2) throw Error("covariance needs at least 2 samples");
  const Eigen::MatrixXd cross = m * sums.psi_out;
  Eigen::MatrixXd c = sums.out_out - cross - cross.transpose() + m * sums.psi_psi * m.transpose();
  c /= static_cast<double>(sums.count - 1);
  return 0.5 * (c + c.transpose());
}

/// pp = 1 - sum ||I - M Psi||^2 / sum ||I||^2 over normalized features.
inline double predictive_power(const Eigen::MatrixXd& m, RegressorKind kind,
                               std::span<const ProfileFeatures> normalized) {
  if (normalized.empty()) throw Error("predictive power needs at least one user");
  double resid = 0.0, energy = 0.0;
  for (const auto& f : normalized) {
    const Eigen::VectorXd out = to_eigen(f.item);
    resid += (out - m * regress(kind, f.rating)).squaredNorm();
    energy += out.squaredNorm();
  }
  if (!(energy > 0.0)) throw Error("predictive power undefined: all outputs are zero");
  return 1.0 - resid / energy;
}

/// Everything needed to score new profiles, plus the feature-time context
/// the model was trained under.
struct TrainedModel {
  RegressorKind kind = RegressorKind::quadratic;
  double lambda = 1e-3;
  Eigen::MatrixXd m;  // 8 x d
  Eigen::MatrixXd c;  // 8 x 8
  std::size_t count = 0;
  FeatureNormalizer normalizer;
  Scale scale;
  Intent intent = Intent::nuke;
  PopularityRule popularity;
  int mid_rating = 3;
  double epsilon = 0.0;  // covariance regularization used by the scorer
  double threshold = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  double training_pp = 0.0;  // over the rows M was fitted on
};

/// Which training rows identify M and C.
enum class FitRows { all, genuine };

/// Fits the normalizer on every row of `training`, then identifies M and C
/// from the rows selected by `rows`.
inline TrainedModel train_model(std::span<const ProfileFeatures> training, RegressorKind kind, double lambda,
                                FitRows rows = FitRows::all) {
  TrainedModel model;
  model.kind = kind;
  model.lambda = lambda;
  model.normalizer = fit_normalizer(training);
  RunningSums sums(regressor_dim(kind));
  std::vector<ProfileFeatures> fitted;
  for (const auto& raw : training) {
    if (rows == FitRows::genuine && raw.label != Label::genuine) continue;
    fitted.push_back(model.normalizer.apply(raw));
    sums.accumulate(regress(kind, fitted.back().rating), to_eigen(fitted.back().item));
  }
  model.m = solve_model(sums, lambda);
  model.training_pp = predictive_power(model.m, kind, fitted);
  model.c = covariance(sums, model.m);
  model.count = sums.count;
  model.epsilon = 1e-8 * model.c.trace() / static_cast<double>(kItemDims);
  return model;
}

/// Picks lambda from `grid` maximizing predictive power on `holdout`
/// (both feature sets already normalized).
inline double sweep_lambda(std::span<const ProfileFeatures> train, std::span<const ProfileFeatures> holdout,
                           RegressorKind kind, std::span<const double> grid) {
  if (grid.empty()) throw Error("empty lambda grid");
  RunningSums sums(regressor_dim(kind));
  for (const auto& f : train) sums.accumulate(regress(kind, f.rating), to_eigen(f.item));
  double best = grid.front();
  double best_pp = -std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    Eigen::MatrixXd m;
    try {
      m = solve_model(sums, lambda);
    } catch (const Error&) {
      continue;
    }
    const double pp = predictive_power(m, kind, holdout);
    if (pp > best_pp) {
      best_pp = pp;
      best = lambda;
    }
  }
  return best;
}

}  // namespace shilldet
