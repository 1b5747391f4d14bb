#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace excursionlab {

// A two-stage Z-estimation problem: per-unit estimating function
// m_i(theta, eta) with exact derivative, plus a nuisance-fitting rule that
// may be trained on any subset of units. Implementations must keep
// evaluate() pure and concurrently invocable.
class EstimatingSystem {
 public:
  virtual ~EstimatingSystem() = default;
  virtual int param_dim() const = 0;
  virtual int unit_count() const = 0;
  // Fit eta on the given units; the handle is treated as opaque.
  virtual std::shared_ptr<const void> fit(std::span<const int> subset) const = 0;
  virtual void evaluate(const void* eta, int unit, const Eigen::VectorXd& theta,
                        Eigen::VectorXd& m, Eigen::MatrixXd& dm) const = 0;
};

struct SolveOptions {
  double tol = 1e-10;       // max-norm of P_n m
  int max_iter = 100;
  int max_halvings = 30;
  Eigen::VectorXd theta0;   // empty means zero
};

struct ZFit {
  Eigen::VectorXd theta;
  Eigen::MatrixXd bread;            // P_n d_theta m at theta-hat
  Eigen::MatrixXd meat;             // P_n m m^T at theta-hat
  Eigen::MatrixXd avar;             // bread^{-1} meat bread^{-T}
  Eigen::MatrixXd cov;              // avar / n : covariance of theta-hat
  std::vector<Eigen::VectorXd> m_i; // per-unit scores at theta-hat
  std::vector<Eigen::MatrixXd> dm_i;
  std::vector<int> fold_of;         // cross-fit only; fold index per unit
  std::vector<double> unit_weight;  // cross-fit only; n / (K * |B_k(i)|)
  int iterations = 0;
  bool converged = false;
  bool bread_invertible = true;
  std::vector<std::string> warnings;
  std::shared_ptr<const void> eta;               // non-CF handle
  std::vector<std::shared_ptr<const void>> etas; // CF per-fold handles
};

// Newton with step-halving on ||P_n m||_inf. eta is fitted once on the full
// sample and frozen.
ZFit solve_z(const EstimatingSystem& system, const SolveOptions& options = {});

// K-fold cross-fitted solve: eta_k trained on the fold complement, the
// stacked equation (1/K) sum_k P_{n,k} m(theta, eta_k) = 0 solved jointly.
// Fold sizes differ by at most one; the partition is a seeded shuffle.
ZFit crossfit_solve(const EstimatingSystem& system, int k_folds, std::uint64_t seed,
                    const SolveOptions& options = {});

// Seeded K-fold partition of [n]; fold sizes differ by at most one.
std::vector<std::vector<int>> make_folds(int n, int k_folds, std::uint64_t seed);

// Relative gap between the analytic P_n d_theta m and central finite
// differences of P_n m at theta (contract check for registered systems).
double fd_jacobian_gap(const EstimatingSystem& system, const void* eta,
                       const Eigen::VectorXd& theta, double step = 1e-6);

struct RobustnessEntry {
  std::string label;
  Eigen::VectorXd mean;
  Eigen::VectorXd mc_se;
  bool flagged = false;  // |mean| > 4 se in some coordinate
};

struct RobustnessReport {
  std::vector<RobustnessEntry> entries;
  long n_mc = 0;
  bool any_flagged = false;
  std::string to_string() const;
};

// Monte Carlo harness for the population moment check P m(theta*, eta) = 0:
// eval fills an (dim x labels) matrix with m(theta*, eta_j) for one fresh
// draw; means and MC standard errors are accumulated per perturbation.
RobustnessReport check_global_robustness(
    const std::vector<std::string>& labels, int dim, long n_mc,
    const std::function<void(long draw, Eigen::MatrixXd& out)>& eval);

}  // namespace excursionlab
