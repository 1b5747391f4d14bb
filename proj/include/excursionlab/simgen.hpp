#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "excursionlab/panel.hpp"

namespace excursionlab {

enum class CurveForm { Linear, SimpleNonlinear, Periodic, Step };

const char* curve_form_name(CurveForm f);
CurveForm parse_curve_form(const std::string& name);

// Continuous outcome generator: Z_t ~ Unif[-2,2], p_t = 0.5,
// Y_{t+1} = A_t(beta0 + beta1 Z_t) + mu0(t, Z_t) + eps_t with exponentially
// correlated errors Corr = rho^{|t-u|/2} and Var(eps_t) = (t-1)*lambda2 + lambda3.
struct ContinuousConfig {
  int n = 100;
  int T = 10;
  CurveForm form = CurveForm::Linear;
  double lambda1 = 0.0;  // nonlinearity scale (unused by the linear form)
  double lambda2 = 0.0;  // variance growth over time
  double lambda3 = 1.0;  // variance level
  double rho = 0.5;      // within-subject correlation
  std::uint64_t seed = 1;
  double beta0 = 0.5, beta1 = 0.2;
  double alpha0 = 1.0, alpha1 = 1.0, alpha2 = 1.0;
};

// Binary outcome: Y ~ Bernoulli(mu), mu(H,A) = exp{A(beta0+beta1 Z)} mu0 with
// a lagged-outcome term and drift alpha3 (t-1)/T; generation aborts if any
// mean leaves (0,1).
struct BinaryConfig {
  int n = 100;
  int T = 10;
  CurveForm form = CurveForm::Linear;  // Linear means the log-linear form
  double lambda = 0.8;
  double rho = 0.1;
  std::uint64_t seed = 1;
  double beta0 = 0.225, beta1 = 0.025;
  double alpha0 = -2.5, alpha1 = 1.0, alpha2 = 1.0, alpha3 = 0.05;
};

// Count outcome: Y ~ Poisson(mu), mu(H,A) = exp(A beta0) mu0.
struct CountConfig {
  int n = 100;
  int T = 10;
  CurveForm form = CurveForm::Linear;
  double lambda = 0.8;
  double rho = 0.01;
  std::uint64_t seed = 1;
  double beta0 = 0.1;
  double alpha0 = -5.0, alpha1 = 0.8, alpha2 = 0.5;
};

// Known-truth handles for the oracle estimator and the robustness harness.
// mu_star matches the generator's own mean function exactly; d_star is the
// optimal weight at the truth, Monte Carlo approximated on first use and
// cached (shared across copies).
struct TruthHandle {
  LinkKind link = LinkKind::Identity;
  Eigen::VectorXd beta_star;
  std::function<double(int t_idx, const Eigen::VectorXd& history, int a)> mu_star;
  std::function<Panel(int n, std::uint64_t seed)> sampler;
  int horizon = 0;

  Eigen::MatrixXd d_star(int t_idx, const Eigen::VectorXd& s, long mc_budget = 1000000) const;

  struct OracleCache;
  std::shared_ptr<OracleCache> cache;
};

std::pair<Panel, TruthHandle> gen_continuous(const ContinuousConfig& cfg);
std::pair<Panel, TruthHandle> gen_binary(const BinaryConfig& cfg);
std::pair<Panel, TruthHandle> gen_count(const CountConfig& cfg);

// Beta(2,2) density, 6x(1-x) on [0,1] and 0 outside by convention.
double beta22_pdf(double x);

// Monte Carlo approximation of the optimal weight at the truth for decision
// point t_idx, using fresh generator draws. Marginal moderators only (the
// simulation designs have S_t empty); cached inside the handle per budget.
Eigen::MatrixXd oracle_dstar(const TruthHandle& truth, int t_idx, const Eigen::VectorXd& s,
                             long mc_budget = 1000000);

}  // namespace excursionlab
