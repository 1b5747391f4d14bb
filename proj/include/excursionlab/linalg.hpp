#pragma once

#include <Eigen/Dense>
#include <optional>

namespace excursionlab {

// Inverse of a symmetric PSD moment matrix via eigendecomposition with an
// eigenvalue floor of rel_floor * trace / p (Moore-Penrose convention plus a
// ridge floor). Returns nullopt when the matrix has no usable mass (zero or
// negative trace, non-finite entries); callers fall back to the unit weight.
std::optional<Eigen::MatrixXd> floored_psd_inverse(const Eigen::MatrixXd& m,
                                                   double rel_floor = 1e-8);

// Ridge-free least squares with a tiny Tikhonov guard; X (rows x cols), y.
Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            double ridge);

}  // namespace excursionlab
