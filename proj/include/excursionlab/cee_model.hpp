#pragma once

#include <Eigen/Dense>
#include <optional>

#include "excursionlab/panel.hpp"

namespace excursionlab {

// Link plus CEE parameter dimension; tilde_prob is the constant numerator
// probability of the stabilized weight used by the WCLS/EMEE baselines.
struct CeeSpec {
  LinkKind link = LinkKind::Identity;
  int p = 1;
  std::optional<double> tilde_prob;
};

// One decision-point contribution to the estimating function, factored as
// value = dvec * resid so the bias-corrected variance can reuse the pieces.
struct PhiAtom {
  Eigen::VectorXd value;    // phi_t, length p
  Eigen::MatrixXd jac;      // d phi_t / d beta, p x p
  double resid = 0.0;       // r_t (braced term)
  Eigen::VectorXd dvec;     // (A-p)/(p(1-p)) * I * f_t
  double jac_scale = 0.0;   // c with jac = w * c * f f^T and d resid/d beta = c f^T
  double weight = 0.0;      // w = (A-p)/(p(1-p)) * I
};

// U_t: identity link y - a*gamma, log link y*exp(-a*gamma).
double exposure_free_outcome(LinkKind link, double y, int a, double gamma);

// (A-p)/(p(1-p)) gated by availability; 0 when I_t = 0.
double phi_weight(const DecisionPoint& pt);

PhiAtom phi_atom(LinkKind link, const DecisionPoint& pt, double mu1, double mu0,
                 const Eigen::VectorXd& beta);

Eigen::MatrixXd phi_jacobian(LinkKind link, const DecisionPoint& pt, double mu1,
                             const Eigen::VectorXd& beta);

// One summand of the WCLS / EMEE joint (alpha, beta) estimating equation,
// in the same value = drow * resid factorization. theta stacks (alpha, beta),
// score design stacks (b_t, (A - ptilde) f_t).
struct JointAtom {
  Eigen::VectorXd value;     // length q = |b| + p
  Eigen::MatrixXd jac;       // q x q
  double resid = 0.0;
  Eigen::VectorXd drow;      // weight * stacked design; value = drow * resid
  Eigen::RowVectorXd dresid; // d resid / d theta^T
};

JointAtom wcls_atom(const DecisionPoint& pt, const CeeSpec& spec,
                    const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                    const Eigen::VectorXd& b_t);

JointAtom emee_atom(const DecisionPoint& pt, const CeeSpec& spec,
                    const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                    const Eigen::VectorXd& b_t);

}  // namespace excursionlab
