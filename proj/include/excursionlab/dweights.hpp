#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "excursionlab/design.hpp"
#include "excursionlab/nuisance.hpp"
#include "excursionlab/panel.hpp"

namespace excursionlab {

enum class DWeightModeKind {
  Unit,             // d_t = I_p
  PerTimeEmpirical, // t-specific moment averages, constant in s
  PooledSmoother,   // both conditional expectations smoothed over (t, s)
  AnalyticScalar,   // scalar ratio form, applied as scalar * I_p
};

struct DWeightMode {
  DWeightModeKind kind = DWeightModeKind::Unit;
  int spline_knots = 5;

  static DWeightMode unit() { return {DWeightModeKind::Unit}; }
  static DWeightMode per_time() { return {DWeightModeKind::PerTimeEmpirical}; }
  static DWeightMode pooled(int knots = 5) { return {DWeightModeKind::PooledSmoother, knots}; }
  static DWeightMode analytic(int knots = 5) { return {DWeightModeKind::AnalyticScalar, knots}; }
};

// Per-time empirical averages for the identity link, the pooled smoother for
// the log link.
DWeightMode default_dmode(LinkKind link);

// Fitted per-time weight maps d_t(s) in R^{p x p}.
class DWeightFit {
 public:
  Eigen::MatrixXd eval(int t_idx, const Eigen::VectorXd& moderator) const;
  DWeightModeKind mode() const { return mode_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend DWeightFit fit_dweights(const Panel&, const NuisanceFit&, const Eigen::VectorXd&,
                                 LinkKind, const DWeightMode&, std::span<const int>);
  DWeightModeKind mode_ = DWeightModeKind::Unit;
  int p_ = 1;
  int horizon_ = 0;
  std::vector<Eigen::MatrixXd> per_time_;       // PerTimeEmpirical
  std::vector<bool> per_time_unit_;             // fallback marker
  // AnalyticScalar: per-t regressions of the scalar jacobian factor and the
  // squared weighted residual on the moderator basis.
  std::vector<int> s_cols_;  // non-constant moderator coordinates
  FeatureExpansion s_basis_;
  std::vector<Eigen::VectorXd> num_coef_, den_coef_;
  // PooledSmoother: vec(jacobian) and vec(phi phi^T) regressed on (t, s).
  FeatureExpansion ts_basis_;
  Eigen::MatrixXd jac_coef_, meat_coef_;        // basis_dim x p*p
  std::vector<std::string> warnings_;
};

// Step-3 fit of E{d_beta phi_t | S_t} and E{phi_t phi_t^T | S_t} at
// beta_init, combined per the chosen mode. Only trajectories in `subset`
// contribute (cross-fitting passes the fold complement).
DWeightFit fit_dweights(const Panel& panel, const NuisanceFit& nuisance,
                        const Eigen::VectorXd& beta_init, LinkKind link,
                        const DWeightMode& mode, std::span<const int> subset);

Eigen::MatrixXd eval_dweight(const DWeightFit& fit, int t_idx, const Eigen::VectorXd& s);

}  // namespace excursionlab
