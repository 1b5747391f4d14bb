#include "excursionlab/cee_model.hpp"

#include <cmath>
#include <stdexcept>

namespace excursionlab {

double exposure_free_outcome(LinkKind link, double y, int a, double gamma) {
  if (!std::isfinite(y) || !std::isfinite(gamma))
    throw std::invalid_argument("exposure_free_outcome: non-finite input");
  if (link == LinkKind::Log && y < 0.0)
    throw std::invalid_argument("exposure_free_outcome: negative outcome under log link");
  if (link == LinkKind::Identity) return y - a * gamma;
  return y * std::exp(-a * gamma);
}

double phi_weight(const DecisionPoint& pt) {
  if (pt.avail == 0) return 0.0;
  if (!(pt.prob > 0.0) || !(pt.prob < 1.0))
    throw std::invalid_argument("phi_weight: randomization probability outside (0,1)");
  return (pt.treat - pt.prob) / (pt.prob * (1.0 - pt.prob));
}

namespace {

// Braced residual term and its beta-derivative scale c, with
// d resid / d beta = c f^T.
void resid_parts(LinkKind link, const DecisionPoint& pt, double mu1, double mu0,
                 double gamma, double& resid, double& c) {
  const double p = pt.prob;
  const double a = pt.treat;
  const double y = pt.outcome;
  if (link == LinkKind::Identity) {
    resid = y - (a + p - 1.0) * gamma - (1.0 - p) * mu1 - p * mu0;
    c = -(a + p - 1.0);
  } else {
    const double eag = std::exp(-a * gamma);
    const double eg = std::exp(-gamma);
    resid = eag * y - (1.0 - p) * eg * mu1 - p * mu0;
    c = -a * eag * y + (1.0 - p) * eg * mu1;
  }
}

}  // namespace

PhiAtom phi_atom(LinkKind link, const DecisionPoint& pt, double mu1, double mu0,
                 const Eigen::VectorXd& beta) {
  const int p_dim = static_cast<int>(pt.moderator.size());
  if (beta.size() != p_dim) throw std::invalid_argument("phi_atom: beta/moderator size mismatch");
  PhiAtom atom;
  if (pt.avail == 0) {
    atom.value = Eigen::VectorXd::Zero(p_dim);
    atom.jac = Eigen::MatrixXd::Zero(p_dim, p_dim);
    atom.dvec = Eigen::VectorXd::Zero(p_dim);
    return atom;
  }
  const double w = phi_weight(pt);
  const double gamma = pt.moderator.dot(beta);
  double resid, c;
  resid_parts(link, pt, mu1, mu0, gamma, resid, c);
  if (!std::isfinite(resid) || !std::isfinite(c))
    throw std::invalid_argument("phi_atom: non-finite inputs");
  atom.weight = w;
  atom.resid = resid;
  atom.jac_scale = c;
  atom.dvec = w * pt.moderator;
  atom.value = atom.dvec * resid;
  atom.jac = (w * c) * (pt.moderator * pt.moderator.transpose());
  return atom;
}

Eigen::MatrixXd phi_jacobian(LinkKind link, const DecisionPoint& pt, double mu1,
                             const Eigen::VectorXd& beta) {
  const int p_dim = static_cast<int>(pt.moderator.size());
  if (pt.avail == 0) return Eigen::MatrixXd::Zero(p_dim, p_dim);
  const double w = phi_weight(pt);
  const double gamma = pt.moderator.dot(beta);
  double resid, c;
  resid_parts(link, pt, mu1, 0.0, gamma, resid, c);
  return (w * c) * (pt.moderator * pt.moderator.transpose());
}

namespace {

double stabilized_weight(const DecisionPoint& pt, double ptilde) {
  return pt.treat * ptilde / pt.prob +
         (1.0 - pt.treat) * (1.0 - ptilde) / (1.0 - pt.prob);
}

JointAtom joint_atom_impl(LinkKind link, const DecisionPoint& pt, const CeeSpec& spec,
                          const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                          const Eigen::VectorXd& b_t) {
  const int q = static_cast<int>(b_t.size() + pt.moderator.size());
  JointAtom atom;
  if (pt.avail == 0) {
    atom.value = Eigen::VectorXd::Zero(q);
    atom.jac = Eigen::MatrixXd::Zero(q, q);
    atom.drow = Eigen::VectorXd::Zero(q);
    atom.dresid = Eigen::RowVectorXd::Zero(q);
    return atom;
  }
  if (!spec.tilde_prob)
    throw std::invalid_argument("wcls/emee atom: tilde_prob required");
  const double ptilde = *spec.tilde_prob;
  if (!(ptilde > 0.0) || !(ptilde < 1.0))
    throw std::invalid_argument("wcls/emee atom: tilde_prob outside (0,1)");
  if (!(pt.prob > 0.0) || !(pt.prob < 1.0))
    throw std::invalid_argument("wcls/emee atom: randomization probability outside (0,1)");
  const double w = stabilized_weight(pt, ptilde);
  const double centered = pt.treat - ptilde;
  Eigen::VectorXd stacked(q);
  stacked.head(b_t.size()) = b_t;
  stacked.tail(pt.moderator.size()) = centered * pt.moderator;

  atom.dresid = Eigen::RowVectorXd::Zero(q);
  if (link == LinkKind::Identity) {
    atom.resid = pt.outcome - b_t.dot(alpha) - centered * pt.moderator.dot(beta);
    atom.dresid.head(b_t.size()) = -b_t.transpose();
    atom.dresid.tail(pt.moderator.size()) = -centered * pt.moderator.transpose();
  } else {
    const double ea = std::exp(b_t.dot(alpha));
    const double eb = std::exp(-pt.treat * pt.moderator.dot(beta));
    atom.resid = eb * pt.outcome - ea;
    atom.dresid.head(b_t.size()) = -ea * b_t.transpose();
    atom.dresid.tail(pt.moderator.size()) =
        -pt.treat * eb * pt.outcome * pt.moderator.transpose();
  }
  atom.drow = w * stacked;
  atom.value = atom.drow * atom.resid;
  atom.jac = atom.drow * atom.dresid;
  return atom;
}

}  // namespace

JointAtom wcls_atom(const DecisionPoint& pt, const CeeSpec& spec, const Eigen::VectorXd& alpha,
                    const Eigen::VectorXd& beta, const Eigen::VectorXd& b_t) {
  if (spec.link != LinkKind::Identity)
    throw std::invalid_argument("wcls_atom: identity link required");
  return joint_atom_impl(LinkKind::Identity, pt, spec, alpha, beta, b_t);
}

JointAtom emee_atom(const DecisionPoint& pt, const CeeSpec& spec, const Eigen::VectorXd& alpha,
                    const Eigen::VectorXd& beta, const Eigen::VectorXd& b_t) {
  if (spec.link != LinkKind::Log)
    throw std::invalid_argument("emee_atom: log link required");
  if (pt.avail == 1 && pt.outcome < 0.0)
    throw std::invalid_argument("emee_atom: negative outcome under log link");
  return joint_atom_impl(LinkKind::Log, pt, spec, alpha, beta, b_t);
}

}  // namespace excursionlab
