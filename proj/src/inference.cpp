#include "excursionlab/inference.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <stdexcept>

namespace excursionlab {

CorrectionResult small_sample_correct(const CorrectionInputs& inputs) {
  const int n = static_cast<int>(inputs.D.size());
  if (n == 0 || inputs.r.size() != inputs.D.size() || inputs.dr.size() != inputs.D.size())
    throw std::invalid_argument("small_sample_correct: inconsistent inputs");
  const int q = static_cast<int>(inputs.bread.cols());

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(inputs.bread);
  if (lu.rcond() < 1e-12)
    throw std::invalid_argument("small_sample_correct: bread is numerically singular");
  const Eigen::MatrixXd minv = lu.inverse();

  auto weight = [&](int i) {
    return inputs.unit_weight.empty() ? 1.0 : inputs.unit_weight[i];
  };

  CorrectionResult out;
  Eigen::MatrixXd corrected = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd uncorrected = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < n; ++i) {
    const auto& D = inputs.D[i];
    const auto& r = inputs.r[i];
    const int T = static_cast<int>(r.size());
    const Eigen::VectorXd score_plain = D.transpose() * r;
    uncorrected += weight(i) * score_plain * score_plain.transpose();

    // H_ii = (1/n) dr_i M^{-1} D_i^T
    const Eigen::MatrixXd h = (inputs.dr[i] * minv * D.transpose()) / n;
    const Eigen::MatrixXd ih = Eigen::MatrixXd::Identity(T, T) - h;
    Eigen::PartialPivLU<Eigen::MatrixXd> ih_lu(ih);
    Eigen::VectorXd adjusted;
    if (ih_lu.rcond() < 1e-12) {
      ++out.fallback_count;
      adjusted = r;
    } else {
      adjusted = ih_lu.solve(r);
    }
    const Eigen::VectorXd score = D.transpose() * adjusted;
    corrected += weight(i) * score * score.transpose();
  }
  corrected /= n;
  uncorrected /= n;

  if (out.fallback_count > 0)
    out.warnings.push_back(std::to_string(out.fallback_count) +
                           " trajectories kept uncorrected (singular I - H_ii)");
  if (out.fallback_count * 10 > n) {
    out.applied = false;
    out.meat = uncorrected;
    out.warnings.push_back("correction refused: more than 10% fallbacks");
  } else {
    out.applied = true;
    out.meat = corrected;
  }
  out.sigma = minv * out.meat * minv.transpose() / n;
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
  return out;
}

CiSpec CiSpec::choose(double level, int n, int q) {
  CiSpec spec;
  spec.level = level;
  if (n < 50 && n - q > 0) {
    spec.family = Family::StudentT;
    spec.df = n - q;
  } else {
    spec.family = Family::Normal;
  }
  return spec;
}

double quantile(const CiSpec& spec) {
  if (!(spec.level > 0.0) || !(spec.level < 1.0))
    throw std::invalid_argument("confidence level must lie in (0,1)");
  const double upper = 0.5 + spec.level / 2.0;
  if (spec.family == CiSpec::Family::StudentT) {
    if (spec.df < 1) throw std::invalid_argument("t quantile needs df >= 1");
    return boost::math::quantile(boost::math::students_t(spec.df), upper);
  }
  return boost::math::quantile(boost::math::normal(), upper);
}

Eigen::MatrixXd confidence_interval(const Eigen::VectorXd& beta, const Eigen::MatrixXd& sigma,
                                    const CiSpec& spec) {
  const int p = static_cast<int>(beta.size());
  const double qv = quantile(spec);
  Eigen::MatrixXd ci(p, 2);
  for (int j = 0; j < p; ++j) {
    const double v = sigma(j, j);
    if (v < 0.0 || !std::isfinite(v))
      throw std::runtime_error("confidence_interval: negative or non-finite variance");
    const double half = qv * std::sqrt(v);
    ci(j, 0) = beta[j] - half;
    ci(j, 1) = beta[j] + half;
  }
  return ci;
}

}  // namespace excursionlab
