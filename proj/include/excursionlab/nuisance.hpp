#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "excursionlab/design.hpp"
#include "excursionlab/panel.hpp"

namespace excursionlab {

// Regressor family for mu_t(H_t, a) = E(Y_{t+1} | H_t, A_t = a, I_t = 1).
// spline_expand applies the natural-cubic basis expansion to the features
// before a LinearLS fit (the GAM analog).
struct RegressorKind {
  enum class Family { Constant, PerTimeMean, LinearLS, KernelKNN, Tree, Forest, Stack };

  Family family = Family::PerTimeMean;
  double value = 0.0;                 // Constant
  double ridge = 1e-8;                // LinearLS; guards singular designs
  int k = 5;                          // KernelKNN
  int max_depth = 6;
  int min_leaf = 5;
  int n_trees = 200;
  double subsample = 0.8;
  std::uint64_t seed = 0;
  std::vector<RegressorKind> members; // Stack
  LinkKind stack_link = LinkKind::Identity;
  bool spline_expand = false;
  int spline_knots = 5;

  static RegressorKind constant(double v);
  static RegressorKind per_time_mean();
  static RegressorKind linear_ls(double ridge = 1e-8);
  static RegressorKind spline_ls(int knots = 5, double ridge = 1e-8);
  static RegressorKind knn(int k);
  static RegressorKind tree(int max_depth = 6, int min_leaf = 5);
  static RegressorKind forest(int n_trees = 200, int max_depth = 6, int min_leaf = 5,
                              double subsample = 0.8, std::uint64_t seed = 0);
  static RegressorKind stack(std::vector<RegressorKind> members, LinkKind link);

  void validate() const;  // throws std::invalid_argument on bad hyperparameters
  std::string name() const;
};

namespace detail {
class Regressor;  // fitted single-arm predictor
}

// Fitted predictors for both arms, per decision point or pooled across
// time (pooled fits see t/T as the leading feature). Immutable after fit.
class NuisanceFit {
 public:
  double predict(int t_idx, const Eigen::VectorXd& history, int a) const;
  bool pooled() const { return pooled_; }
  int fold_id() const { return fold_id_; }
  int horizon() const { return horizon_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend NuisanceFit fit_nuisance(const Panel&, const RegressorKind&, bool,
                                  std::span<const int>, int);
  bool pooled_ = true;
  bool log_link_ = false;
  int fold_id_ = -1;
  int horizon_ = 0;
  // pooled: [a]; per-time: [t * 2 + a]
  std::vector<std::shared_ptr<const detail::Regressor>> models_;
  std::vector<std::string> warnings_;
};

// Fits E(Y_{t+1} | H_t, A_t = a, I_t = 1) separately per arm on the given
// trajectory subset; only available rows enter. Per-time fitting falls back
// to the pooled fit for any (t, a) cell with no available observations.
NuisanceFit fit_nuisance(const Panel& panel, const RegressorKind& kind, bool pooled,
                         std::span<const int> subset, int fold_id = -1);

double predict_mu(const NuisanceFit& fit, int t_idx, const Eigen::VectorXd& history, int a);

// Combination weights for the stacking ensemble: one-pass generalized-linear
// fit of the outcome on member predictions (least squares for identity,
// Poisson score Newton for log), clipped nonnegative and renormalized to
// sum 1. Non-convergence yields equal weights plus a warning.
Eigen::VectorXd stack_weights(const Eigen::MatrixXd& member_preds, const Eigen::VectorXd& y,
                              LinkKind link, std::vector<std::string>* warnings = nullptr);

}  // namespace excursionlab
