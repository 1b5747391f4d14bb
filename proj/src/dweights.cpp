#include "excursionlab/dweights.hpp"

#include <cmath>
#include <set>

#include "excursionlab/cee_model.hpp"
#include "excursionlab/linalg.hpp"

namespace excursionlab {

DWeightMode default_dmode(LinkKind link) {
  return link == LinkKind::Identity ? DWeightMode::per_time() : DWeightMode::pooled();
}

namespace {

constexpr double kRelFloor = 1e-8;

// A second moment this small relative to the jacobian scale means the
// residual variation at that t is numerically nil (e.g. a deterministic
// outcome fitted to round-off); inverting it would blow the weight up by
// many orders of magnitude for no information gain.
bool degenerate_moment(double meat_scale, double jac_scale) {
  return !(meat_scale > 1e-10 * (1.0 + jac_scale * jac_scale));
}

// Non-constant moderator columns; the s-regressions drop degenerate
// coordinates so the marginal design f = [1] reduces to intercept-only fits.
std::vector<int> varying_columns(const Panel& panel, std::span<const int> subset) {
  const int p = panel.moderator_dim();
  std::vector<int> cols;
  for (int c = 0; c < p; ++c) {
    double first = panel.at(subset[0], 0).moderator[c];
    bool varies = false;
    for (int i : subset) {
      for (int t = 0; t < panel.horizon() && !varies; ++t)
        if (std::abs(panel.at(i, t).moderator[c] - first) > 1e-12) varies = true;
      if (varies) break;
    }
    if (varies) cols.push_back(c);
  }
  return cols;
}

Eigen::RowVectorXd take_columns(const Eigen::VectorXd& v, const std::vector<int>& cols) {
  Eigen::RowVectorXd out(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) out[j] = v[cols[j]];
  return out;
}

// Least-squares fit of each response column on [1, basis(x)].
Eigen::MatrixXd smooth_fit(const Eigen::MatrixXd& basis_rows, const Eigen::MatrixXd& resp) {
  Eigen::MatrixXd design(basis_rows.rows(), basis_rows.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(basis_rows.cols()) = basis_rows;
  Eigen::MatrixXd coef(design.cols(), resp.cols());
  Eigen::MatrixXd gram = design.transpose() * design;
  gram.diagonal().array() += 1e-10 * (1.0 + gram.trace());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  for (int c = 0; c < resp.cols(); ++c)
    coef.col(c) = ldlt.solve(design.transpose() * resp.col(c));
  return coef;
}

Eigen::RowVectorXd smooth_eval(const Eigen::RowVectorXd& basis_row, const Eigen::MatrixXd& coef) {
  Eigen::RowVectorXd design(basis_row.size() + 1);
  design[0] = 1.0;
  design.tail(basis_row.size()) = basis_row;
  return design * coef;
}

}  // namespace

DWeightFit fit_dweights(const Panel& panel, const NuisanceFit& nuisance,
                        const Eigen::VectorXd& beta_init, LinkKind link, const DWeightMode& mode,
                        std::span<const int> subset) {
  if (!beta_init.allFinite()) throw std::invalid_argument("fit_dweights: non-finite beta_init");
  if (subset.empty()) throw std::invalid_argument("fit_dweights: empty subset");
  const int p = panel.moderator_dim();
  const int T = panel.horizon();

  DWeightFit fit;
  fit.mode_ = mode.kind;
  fit.p_ = p;
  fit.horizon_ = T;
  if (mode.kind == DWeightModeKind::Unit) return fit;

  // Per-point atoms at beta_init; unavailable points contribute exact zeros.
  const int m = static_cast<int>(subset.size());
  std::vector<std::vector<PhiAtom>> atoms(m, std::vector<PhiAtom>(T));
  for (int r = 0; r < m; ++r) {
    const int i = subset[r];
    for (int t = 0; t < T; ++t) {
      const auto& pt = panel.at(i, t);
      const double mu1 = nuisance.predict(t, pt.history, 1);
      const double mu0 = nuisance.predict(t, pt.history, 0);
      atoms[r][t] = phi_atom(link, pt, mu1, mu0, beta_init);
    }
  }

  if (mode.kind == DWeightModeKind::PerTimeEmpirical) {
    fit.per_time_.resize(T);
    fit.per_time_unit_.assign(T, false);
    for (int t = 0; t < T; ++t) {
      Eigen::MatrixXd jbar = Eigen::MatrixXd::Zero(p, p);
      Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
      for (int r = 0; r < m; ++r) {
        jbar += atoms[r][t].jac;
        meat += atoms[r][t].value * atoms[r][t].value.transpose();
      }
      jbar /= m;
      meat /= m;
      auto inv = floored_psd_inverse(meat, kRelFloor);
      if (!inv || degenerate_moment(meat.trace() / p, jbar.trace() / p)) {
        fit.per_time_[t] = Eigen::MatrixXd::Identity(p, p);
        fit.per_time_unit_[t] = true;
        fit.warnings_.push_back("degenerate second moment at t=" + std::to_string(t + 1) +
                                "; unit weight");
      } else {
        fit.per_time_[t] = jbar * (*inv);
      }
    }
    return fit;
  }

  const std::vector<int> s_cols = varying_columns(panel, subset);
  fit.s_cols_ = s_cols;

  if (mode.kind == DWeightModeKind::AnalyticScalar) {
    // scalar ratio E{w c | s} / E{(w r)^2 | s}, regressed on the moderator
    Eigen::MatrixXd s_raw(m * T, static_cast<int>(s_cols.size()));
    Eigen::MatrixXd resp(m * T, 2);
    for (int r = 0; r < m; ++r)
      for (int t = 0; t < T; ++t) {
        const auto& a = atoms[r][t];
        s_raw.row(r * T + t) = take_columns(panel.at(subset[r], t).moderator, s_cols);
        resp(r * T + t, 0) = a.weight * a.jac_scale;
        const double wr = a.weight * a.resid;
        resp(r * T + t, 1) = wr * wr;
      }
    fit.s_basis_ = s_cols.empty() ? FeatureExpansion::identity(0)
                                  : FeatureExpansion::spline(s_raw, mode.spline_knots);
    fit.num_coef_.resize(T);
    fit.den_coef_.resize(T);
    for (int t = 0; t < T; ++t) {
      Eigen::MatrixXd basis_rows(m, fit.s_basis_.dim());
      Eigen::MatrixXd resp_t(m, 2);
      for (int r = 0; r < m; ++r) {
        basis_rows.row(r) = fit.s_basis_.expand(s_raw.row(r * T + t));
        resp_t.row(r) = resp.row(r * T + t);
      }
      Eigen::MatrixXd coef = smooth_fit(basis_rows, resp_t);
      fit.num_coef_[t] = coef.col(0);
      fit.den_coef_[t] = coef.col(1);
    }
    return fit;
  }

  // PooledSmoother: vec(jac) and vec(phi phi^T) on a spline basis of (t, s)
  Eigen::MatrixXd ts_raw(m * T, 1 + static_cast<int>(s_cols.size()));
  Eigen::MatrixXd resp(m * T, 2 * p * p);
  for (int r = 0; r < m; ++r)
    for (int t = 0; t < T; ++t) {
      const auto& a = atoms[r][t];
      ts_raw(r * T + t, 0) = static_cast<double>(t + 1) / T;
      ts_raw.row(r * T + t).tail(s_cols.size()) =
          take_columns(panel.at(subset[r], t).moderator, s_cols);
      Eigen::MatrixXd meat = a.value * a.value.transpose();
      for (int c = 0; c < p * p; ++c) {
        resp(r * T + t, c) = a.jac(c / p, c % p);
        resp(r * T + t, p * p + c) = meat(c / p, c % p);
      }
    }
  fit.ts_basis_ = FeatureExpansion::spline(ts_raw, mode.spline_knots);
  const Eigen::MatrixXd basis_rows = fit.ts_basis_.expand_all(ts_raw);
  Eigen::MatrixXd coef = smooth_fit(basis_rows, resp);
  fit.jac_coef_ = coef.leftCols(p * p);
  fit.meat_coef_ = coef.rightCols(p * p);
  return fit;
}

Eigen::MatrixXd DWeightFit::eval(int t_idx, const Eigen::VectorXd& moderator) const {
  if (t_idx < 0 || t_idx >= horizon_)
    throw std::invalid_argument("eval_dweight: t outside [T]");
  const int p = p_;
  switch (mode_) {
    case DWeightModeKind::Unit:
      return Eigen::MatrixXd::Identity(p, p);
    case DWeightModeKind::PerTimeEmpirical:
      return per_time_[t_idx];
    case DWeightModeKind::AnalyticScalar: {
      Eigen::RowVectorXd s_row(static_cast<int>(s_cols_.size()));
      for (std::size_t j = 0; j < s_cols_.size(); ++j) s_row[static_cast<int>(j)] = moderator[s_cols_[j]];
      Eigen::RowVectorXd basis_row = s_basis_.expand(s_row);
      Eigen::RowVectorXd design(basis_row.size() + 1);
      design[0] = 1.0;
      design.tail(basis_row.size()) = basis_row;
      double num = 0.0, den = 0.0;
      for (int j = 0; j < design.size(); ++j) {
        num += design[j] * num_coef_[t_idx][j];
        den += design[j] * den_coef_[t_idx][j];
      }
      if (!(den > 0.0) || !std::isfinite(num / den) || degenerate_moment(den, num))
        return Eigen::MatrixXd::Identity(p, p);
      return (num / den) * Eigen::MatrixXd::Identity(p, p);
    }
    case DWeightModeKind::PooledSmoother: {
      Eigen::RowVectorXd ts_row(ts_basis_.raw_dim());
      ts_row[0] = static_cast<double>(t_idx + 1) / horizon_;
      for (std::size_t j = 0; j < s_cols_.size(); ++j)
        ts_row[1 + static_cast<int>(j)] = moderator[s_cols_[j]];
      Eigen::RowVectorXd basis_row = ts_basis_.expand(ts_row);
      Eigen::RowVectorXd design(basis_row.size() + 1);
      design[0] = 1.0;
      design.tail(basis_row.size()) = basis_row;
      Eigen::RowVectorXd jv = design * jac_coef_;
      Eigen::RowVectorXd mv = design * meat_coef_;
      Eigen::MatrixXd jac(p, p), meat(p, p);
      for (int c = 0; c < p * p; ++c) {
        jac(c / p, c % p) = jv[c];
        meat(c / p, c % p) = mv[c];
      }
      auto inv = floored_psd_inverse(meat, kRelFloor);
      if (!inv || degenerate_moment(meat.trace() / p, jac.trace() / p))
        return Eigen::MatrixXd::Identity(p, p);
      return jac * (*inv);
    }
  }
  return Eigen::MatrixXd::Identity(p, p);
}

Eigen::MatrixXd eval_dweight(const DWeightFit& fit, int t_idx, const Eigen::VectorXd& s) {
  return fit.eval(t_idx, s);
}

}  // namespace excursionlab
