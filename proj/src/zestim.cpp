#include "excursionlab/zestim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "excursionlab/errors.hpp"
#include "excursionlab/util.hpp"

namespace excursionlab {

namespace {

struct Accum {
  Eigen::VectorXd f;      // weighted mean of m_i
  Eigen::MatrixXd jac;    // weighted mean of dm_i
  bool finite = true;
};

// Weighted empirical average of (m, dm) over all units; eta_of(i) selects
// the nuisance handle and w(i) the unit weight (1/n for the plain solve).
template <typename EtaOf, typename WeightOf>
Accum accumulate(const EstimatingSystem& sys, const Eigen::VectorXd& theta, EtaOf eta_of,
                 WeightOf w, std::vector<Eigen::VectorXd>* keep_m = nullptr,
                 std::vector<Eigen::MatrixXd>* keep_dm = nullptr) {
  const int q = sys.param_dim();
  const int n = sys.unit_count();
  Accum acc;
  acc.f = Eigen::VectorXd::Zero(q);
  acc.jac = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd m(q);
  Eigen::MatrixXd dm(q, q);
  for (int i = 0; i < n; ++i) {
    sys.evaluate(eta_of(i), i, theta, m, dm);
    if (!m.allFinite() || !dm.allFinite()) {
      acc.finite = false;
      return acc;
    }
    const double wi = w(i);
    acc.f += wi * m;
    acc.jac += wi * dm;
    if (keep_m) (*keep_m)[i] = m;
    if (keep_dm) (*keep_dm)[i] = dm;
  }
  return acc;
}

template <typename EtaOf, typename WeightOf>
void newton_solve(const EstimatingSystem& sys, const SolveOptions& options, EtaOf eta_of,
                  WeightOf w, ZFit& fit) {
  const int q = sys.param_dim();
  const int n = sys.unit_count();
  Eigen::VectorXd theta =
      options.theta0.size() == q ? options.theta0 : Eigen::VectorXd::Zero(q);

  Accum acc = accumulate(sys, theta, eta_of, w);
  if (!acc.finite) throw SolveError("estimating function non-finite at the initial value");
  double merit = acc.f.lpNorm<Eigen::Infinity>();
  fit.converged = merit <= options.tol;
  fit.iterations = 0;

  while (!fit.converged && fit.iterations < options.max_iter) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(acc.jac);
    const Eigen::VectorXd step = lu.solve(-acc.f);
    if (!step.allFinite() || lu.rcond() < 1e-14) {
      fit.bread_invertible = false;
      fit.warnings.push_back("singular bread during Newton iteration");
      break;
    }
    double scale = 1.0;
    bool accepted = false;
    Accum trial;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      const Eigen::VectorXd cand = theta + scale * step;
      trial = accumulate(sys, cand, eta_of, w);
      if (!trial.finite) continue;
      const double cand_merit = trial.f.lpNorm<Eigen::Infinity>();
      if (cand_merit < merit || cand_merit <= options.tol) {
        theta = cand;
        merit = cand_merit;
        acc = trial;
        accepted = true;
        break;
      }
    }
    ++fit.iterations;
    if (!accepted) {
      fit.warnings.push_back("step-halving stalled");
      break;
    }
    fit.converged = merit <= options.tol;
  }

  fit.theta = theta;
  fit.m_i.assign(n, Eigen::VectorXd());
  fit.dm_i.assign(n, Eigen::MatrixXd());
  acc = accumulate(sys, theta, eta_of, w, &fit.m_i, &fit.dm_i);
  fit.bread = acc.jac;
  fit.meat = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < n; ++i) fit.meat += w(i) * fit.m_i[i] * fit.m_i[i].transpose();

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(fit.bread);
  if (lu.rcond() < 1e-14) {
    fit.bread_invertible = false;
    fit.warnings.push_back("singular bread at the solution");
    fit.avar = Eigen::MatrixXd::Constant(q, q, std::numeric_limits<double>::quiet_NaN());
  } else {
    const Eigen::MatrixXd binv = lu.inverse();
    fit.avar = binv * fit.meat * binv.transpose();
    fit.avar = 0.5 * (fit.avar + fit.avar.transpose()).eval();
  }
  fit.cov = fit.avar / n;
}

}  // namespace

ZFit solve_z(const EstimatingSystem& system, const SolveOptions& options) {
  const int n = system.unit_count();
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  ZFit fit;
  fit.eta = system.fit(all);
  const void* eta = fit.eta.get();
  newton_solve(
      system, options, [&](int) { return eta; }, [&](int) { return 1.0 / n; }, fit);
  return fit;
}

std::vector<std::vector<int>> make_folds(int n, int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw std::invalid_argument("make_folds: K must be >= 2");
  if (n < k_folds) throw std::invalid_argument("make_folds: need n >= K");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> folds(k_folds);
  for (int pos = 0; pos < n; ++pos) folds[pos % k_folds].push_back(order[pos]);
  return folds;
}

ZFit crossfit_solve(const EstimatingSystem& system, int k_folds, std::uint64_t seed,
                    const SolveOptions& options) {
  const int n = system.unit_count();
  const auto folds = make_folds(n, k_folds, seed);

  ZFit fit;
  fit.fold_of.assign(n, -1);
  fit.unit_weight.assign(n, 0.0);
  fit.etas.resize(k_folds);
  std::vector<std::string> fold_errors(k_folds);
  parallel_for(static_cast<std::size_t>(k_folds), [&](std::size_t k) {
    std::vector<int> complement;
    complement.reserve(n - folds[k].size());
    std::vector<char> in_fold(n, 0);
    for (int i : folds[k]) in_fold[i] = 1;
    for (int i = 0; i < n; ++i)
      if (!in_fold[i]) complement.push_back(i);
    try {
      fit.etas[k] = system.fit(complement);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "cross-fit fold " << k << " (train size " << complement.size()
         << ") failed to fit nuisance: " << e.what();
      fold_errors[k] = os.str();
    }
  });
  for (int k = 0; k < k_folds; ++k) {
    if (!fold_errors[k].empty()) throw SolveError(fold_errors[k]);
    for (int i : folds[k]) {
      fit.fold_of[i] = k;
      // (1/K) sum_k mean_{B_k} == (1/n) sum_i w_i with w_i = n / (K |B_k|)
      fit.unit_weight[i] = static_cast<double>(n) / (k_folds * folds[k].size());
    }
  }

  newton_solve(
      system, options, [&](int i) { return fit.etas[fit.fold_of[i]].get(); },
      [&](int i) { return fit.unit_weight[i] / n; }, fit);
  return fit;
}

double fd_jacobian_gap(const EstimatingSystem& system, const void* eta,
                       const Eigen::VectorXd& theta, double step) {
  const int q = system.param_dim();
  const int n = system.unit_count();
  auto mean_m = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd m(q);
    Eigen::MatrixXd dm(q, q);
    for (int i = 0; i < n; ++i) {
      system.evaluate(eta, i, th, m, dm);
      total += m;
    }
    return (total / n).eval();
  };
  Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(q, q);
  {
    Eigen::VectorXd m(q);
    Eigen::MatrixXd dm(q, q);
    for (int i = 0; i < n; ++i) {
      system.evaluate(eta, i, theta, m, dm);
      analytic += dm;
    }
    analytic /= n;
  }
  Eigen::MatrixXd fd(q, q);
  for (int j = 0; j < q; ++j) {
    Eigen::VectorXd up = theta, dn = theta;
    up[j] += step;
    dn[j] -= step;
    fd.col(j) = (mean_m(up) - mean_m(dn)) / (2.0 * step);
  }
  const double denom = 1.0 + analytic.cwiseAbs().maxCoeff();
  return (analytic - fd).cwiseAbs().maxCoeff() / denom;
}

RobustnessReport check_global_robustness(
    const std::vector<std::string>& labels, int dim, long n_mc,
    const std::function<void(long draw, Eigen::MatrixXd& out)>& eval) {
  const int J = static_cast<int>(labels.size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, J);
  Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(dim, J);
  Eigen::MatrixXd draw(dim, J);
  for (long r = 0; r < n_mc; ++r) {
    eval(r, draw);
    sum += draw;
    sumsq += draw.cwiseProduct(draw);
  }
  RobustnessReport report;
  report.n_mc = n_mc;
  for (int j = 0; j < J; ++j) {
    RobustnessEntry entry;
    entry.label = labels[j];
    entry.mean = sum.col(j) / n_mc;
    Eigen::VectorXd var =
        (sumsq.col(j) - n_mc * entry.mean.cwiseProduct(entry.mean)) / (n_mc - 1.0);
    entry.mc_se = (var.cwiseMax(0.0) / n_mc).cwiseSqrt();
    entry.flagged = false;
    for (int c = 0; c < dim; ++c)
      if (std::abs(entry.mean[c]) > 4.0 * entry.mc_se[c]) entry.flagged = true;
    report.any_flagged = report.any_flagged || entry.flagged;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::string RobustnessReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.label << ": mean [";
    for (int j = 0; j < e.mean.size(); ++j) os << (j ? ", " : "") << e.mean[j];
    os << "], mc-se [";
    for (int j = 0; j < e.mc_se.size(); ++j) os << (j ? ", " : "") << e.mc_se[j];
    os << "]" << (e.flagged ? " FLAGGED" : "") << "\n";
  }
  return os.str();
}

}  // namespace excursionlab
