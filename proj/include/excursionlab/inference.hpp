#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace excursionlab {

// Per-trajectory pieces of the decomposition m_i = D_i^T r_i used by the
// leverage-style variance correction. dr is d r_i / d theta^T. unit_weight
// reweights the cross-fitted average; empty means equal weights.
struct CorrectionInputs {
  std::vector<Eigen::MatrixXd> D;   // T x q per trajectory
  std::vector<Eigen::VectorXd> r;   // length T
  std::vector<Eigen::MatrixXd> dr;  // T x q
  Eigen::MatrixXd bread;            // M = P_n d_theta m
  std::vector<double> unit_weight;
};

struct CorrectionResult {
  Eigen::MatrixXd meat;     // corrected meat term
  Eigen::MatrixXd sigma;    // M^{-1} meat M^{-T} / n
  bool applied = false;
  int fallback_count = 0;   // trajectories kept uncorrected
  std::vector<std::string> warnings;
};

// Inflates residuals by (I - H_ii)^{-1} with H_ij = (1/n) dr_i M^{-1} D_j^T
// before forming the meat. A trajectory with a near-singular (I - H_ii)
// keeps its uncorrected contribution; more than 10% such fallbacks refuses
// the correction and returns the uncorrected sandwich flagged.
CorrectionResult small_sample_correct(const CorrectionInputs& inputs);

struct CiSpec {
  double level = 0.95;
  enum class Family { Normal, StudentT } family = Family::Normal;
  int df = 0;

  // t with df = n - q below 50 trajectories, normal otherwise.
  static CiSpec choose(double level, int n, int q);
};

// Per-coordinate beta_j +/- q * sqrt(Sigma_jj); throws on a negative
// diagonal (upstream numerical failure).
Eigen::MatrixXd confidence_interval(const Eigen::VectorXd& beta, const Eigen::MatrixXd& sigma,
                                    const CiSpec& spec);

double quantile(const CiSpec& spec);  // upper (1+level)/2 quantile

}  // namespace excursionlab
