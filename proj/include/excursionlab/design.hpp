#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace excursionlab {

// Natural cubic spline basis for one variable with knots at sample
// quantiles. Basis columns are (x, n_1(x), ..., n_{K-2}(x)) for K distinct
// knots; degenerates to the linear column when fewer than 3 distinct knots
// are available.
class SplineBasis1D {
 public:
  static SplineBasis1D fit(const Eigen::VectorXd& x, int n_knots = 5);

  int dim() const { return dim_; }
  void eval(double x, double* out) const;  // writes dim() values

 private:
  std::vector<double> knots_;
  int dim_ = 1;
};

// Column-wise expansion of a raw feature matrix: spline basis per
// non-degenerate column, passthrough otherwise. Used for the GAM-analog
// least-squares nuisance and for the conditional-moment smoothers.
class FeatureExpansion {
 public:
  static FeatureExpansion identity(int raw_dim);
  static FeatureExpansion spline(const Eigen::MatrixXd& raw, int n_knots = 5);

  int raw_dim() const { return raw_dim_; }
  int dim() const { return dim_; }
  Eigen::RowVectorXd expand(const Eigen::RowVectorXd& raw) const;
  Eigen::MatrixXd expand_all(const Eigen::MatrixXd& raw) const;

 private:
  bool identity_ = true;
  int raw_dim_ = 0;
  int dim_ = 0;
  std::vector<SplineBasis1D> bases_;
};

// Evaluates a design formula over tokens "1", "t", "h" at decision point
// t_idx (0-based) of horizon T: "1" -> intercept, "t" -> (t_idx+1)/T,
// "h" -> all history columns. Used for moderator rows f_t and the WCLS/EMEE
// control design b_t.
Eigen::VectorXd eval_design(const std::string& formula, int t_idx, int horizon,
                            const Eigen::VectorXd& history);
int design_dim(const std::string& formula, int history_dim);

}  // namespace excursionlab
