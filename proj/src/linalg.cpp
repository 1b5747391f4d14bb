#include "excursionlab/linalg.hpp"

#include <cmath>

namespace excursionlab {

std::optional<Eigen::MatrixXd> floored_psd_inverse(const Eigen::MatrixXd& m, double rel_floor) {
  const int p = static_cast<int>(m.rows());
  if (!m.allFinite()) return std::nullopt;
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  const double tr = sym.trace();
  if (!(tr > 0.0)) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) return std::nullopt;
  const double floor = rel_floor * tr / p;
  Eigen::VectorXd inv_vals(p);
  for (int j = 0; j < p; ++j) inv_vals[j] = 1.0 / std::max(eig.eigenvalues()[j], floor);
  return eig.eigenvectors() * inv_vals.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge) {
  Eigen::MatrixXd gram = x.transpose() * x;
  if (ridge > 0.0) gram.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() == Eigen::Success) {
    Eigen::VectorXd sol = ldlt.solve(x.transpose() * y);
    if (sol.allFinite()) return sol;
  }
  // rank-deficient even after the ridge: minimum-norm solution
  return x.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y).eval();
}

}  // namespace excursionlab
