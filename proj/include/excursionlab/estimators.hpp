#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "excursionlab/cee_model.hpp"
#include "excursionlab/dweights.hpp"
#include "excursionlab/inference.hpp"
#include "excursionlab/nuisance.hpp"
#include "excursionlab/panel.hpp"
#include "excursionlab/simgen.hpp"
#include "excursionlab/zestim.hpp"

namespace excursionlab {

struct MethodSpec {
  enum class Kind { Wcls, Emee, TwoStage, TwoStageCF, Oracle };

  Kind kind = Kind::Wcls;
  LinkKind link = LinkKind::Identity;
  std::optional<double> tilde_prob;      // default: mean p_t over available points
  std::string b_formula = "1,t";         // WCLS/EMEE control design
  RegressorKind nuisance;                // TwoStage / TwoStageCF
  bool nuisance_pooled = true;
  std::optional<DWeightMode> dmode;      // default per link
  int folds = 5;
  std::uint64_t cf_seed = 0;
  std::shared_ptr<const TruthHandle> truth;  // Oracle
  long oracle_budget = 1000000;
  std::vector<double> solver_init;  // Newton start; empty means zero
  std::string label;

  static MethodSpec wcls(std::string b = "1,t");
  static MethodSpec emee(std::string b = "1,t");
  static MethodSpec two_stage(LinkKind link, RegressorKind nuis,
                              std::optional<DWeightMode> dmode = std::nullopt);
  static MethodSpec two_stage_cf(LinkKind link, RegressorKind nuis,
                                 std::optional<DWeightMode> dmode = std::nullopt,
                                 int folds = 5, std::uint64_t seed = 0);
  static MethodSpec oracle(std::shared_ptr<const TruthHandle> truth,
                           long budget = 1000000);
  std::string name() const;
};

struct EstimateReport {
  Eigen::VectorXd beta;
  Eigen::MatrixXd sigma;            // covariance of beta-hat
  Eigen::MatrixXd sigma_corrected;  // bias-corrected covariance
  Eigen::VectorXd se, se_corrected;
  Eigen::MatrixXd ci;               // p x 2, from the reporting covariance
  Eigen::VectorXd beta_init;        // two-stage only
  double level = 0.95;
  int iterations = 0;
  bool converged = false;
  bool ssc_applied = false;
  std::string method;
  std::vector<std::string> warnings;
};

// End-to-end estimation: validates the panel, runs the method, attaches the
// sandwich and (when requested) the bias-corrected covariance, and builds
// per-coordinate intervals at the given level.
EstimateReport estimate(const Panel& panel, const MethodSpec& method, double level = 0.95,
                        bool ssc = true);

// Descriptive cross-time Gram summary ||P_n phi_t phi_u^T||_F normalized by
// the diagonal; the serial-uncorrelatedness working assumption is reported,
// never asserted.
Eigen::MatrixXd diagnose_wa2(const Panel& panel, const Eigen::VectorXd& beta,
                             const NuisanceFit& nuisance, LinkKind link);

// --- estimating systems (exposed for tests and the robustness harness) ---

// sum_t d_t(S_t) phi_t(beta, mu) with pluggable nuisances. The two-stage
// pipeline variant runs fit-nuisance / initial solve / fit-dweights on the
// training subset; the fixed variant freezes user-supplied mu and d.
class CeeSystem final : public EstimatingSystem {
 public:
  using MuFn = std::function<double(int i, int t_idx, int a)>;
  using DFn = std::function<Eigen::MatrixXd(int i, int t_idx)>;

  // Algorithm pipeline (Steps 1-3 inside fit()).
  CeeSystem(const Panel& panel, LinkKind link, RegressorKind nuis, bool pooled,
            DWeightMode dmode);
  // Frozen nuisances (oracle, robustness checks, unit tests).
  static std::unique_ptr<CeeSystem> fixed(const Panel& panel, LinkKind link, MuFn mu, DFn d);

  int param_dim() const override;
  int unit_count() const override;
  std::shared_ptr<const void> fit(std::span<const int> subset) const override;
  void evaluate(const void* eta, int unit, const Eigen::VectorXd& theta,
                Eigen::VectorXd& m, Eigen::MatrixXd& dm) const override;

  // D/r pieces for the variance correction, under the eta used for `unit`.
  void correction_rows(const void* eta, int unit, const Eigen::VectorXd& beta,
                       Eigen::MatrixXd& D, Eigen::VectorXd& r, Eigen::MatrixXd& dr) const;

  Eigen::VectorXd beta_init_of(const void* eta) const;
  const std::vector<std::string>& eta_warnings(const void* eta) const;

 private:
  CeeSystem(const Panel& panel, LinkKind link);
  const Panel& panel_;
  LinkKind link_;
  int p_;
  bool pipeline_ = false;
  RegressorKind nuis_;
  bool pooled_ = true;
  DWeightMode dmode_;
  MuFn fixed_mu_;
  DFn fixed_d_;
};

// Joint (alpha, beta) system for the WCLS / EMEE baselines; eta is only the
// constant numerator probability.
class JointBaselineSystem final : public EstimatingSystem {
 public:
  JointBaselineSystem(const Panel& panel, const CeeSpec& spec, std::string b_formula);

  int param_dim() const override;
  int unit_count() const override;
  std::shared_ptr<const void> fit(std::span<const int> subset) const override;
  void evaluate(const void* eta, int unit, const Eigen::VectorXd& theta,
                Eigen::VectorXd& m, Eigen::MatrixXd& dm) const override;

  void correction_rows(const void* eta, int unit, const Eigen::VectorXd& theta,
                       Eigen::MatrixXd& D, Eigen::VectorXd& r, Eigen::MatrixXd& dr) const;

  int b_dim() const { return b_dim_; }
  int beta_offset() const { return b_dim_; }
  double tilde_prob(const void* eta) const;

 private:
  const Panel& panel_;
  CeeSpec spec_;
  std::string b_formula_;
  int b_dim_;
};

}  // namespace excursionlab
