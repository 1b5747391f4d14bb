#include <doctest.h>

#include <cmath>
#include <random>

#include "excursionlab/cee_model.hpp"
#include "excursionlab/dweights.hpp"
#include "excursionlab/estimators.hpp"
#include "excursionlab/linalg.hpp"
#include "excursionlab/simgen.hpp"
#include "excursionlab/zestim.hpp"
#include "support.hpp"

using namespace excursionlab;
using namespace testsupport;

namespace {

struct Fitted {
  Panel panel;
  NuisanceFit nuisance;
  Eigen::VectorXd beta_init;
};

Fitted fitted_continuous(int n, std::uint64_t seed) {
  ContinuousConfig cfg;
  cfg.n = n;
  cfg.lambda2 = 0.0;
  cfg.lambda3 = 1.0;
  cfg.rho = 0.0;
  cfg.seed = seed;
  Panel panel = gen_continuous(cfg).first;
  auto idx = all_indices(panel.n());
  NuisanceFit nf = fit_nuisance(panel, RegressorKind::per_time_mean(), false, idx);
  Eigen::VectorXd beta(1);
  beta << 0.5;
  return {std::move(panel), std::move(nf), beta};
}

// stacked estimating equation sum_i sum_t d_t(s) phi_t at a given beta
Eigen::VectorXd stacked_equation(const Panel& panel, const NuisanceFit& nf,
                                 const DWeightFit& d, LinkKind link,
                                 const Eigen::VectorXd& beta) {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(panel.moderator_dim());
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < panel.horizon(); ++t) {
      const auto& pt = panel.at(i, t);
      const PhiAtom atom =
          phi_atom(link, pt, nf.predict(t, pt.history, 1), nf.predict(t, pt.history, 0), beta);
      total += d.eval(t, pt.moderator) * atom.value;
    }
  return total / panel.n();
}

}  // namespace

TEST_CASE("unit mode returns the identity everywhere") {
  auto [panel, nf, beta] = fitted_continuous(30, 1);
  const auto idx = all_indices(panel.n());
  const DWeightFit fit =
      fit_dweights(panel, nf, beta, LinkKind::Identity, DWeightMode::unit(), idx);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(1);
  CHECK(eval_dweight(fit, 0, s)(0, 0) == 1.0);
  CHECK(eval_dweight(fit, 7, s)(0, 0) == 1.0);
}

TEST_CASE("per-time empirical weights are s-constant and negative for the identity link") {
  auto [panel, nf, beta] = fitted_continuous(200, 2);
  const auto idx = all_indices(panel.n());
  const DWeightFit fit =
      fit_dweights(panel, nf, beta, LinkKind::Identity, DWeightMode::per_time(), idx);
  Eigen::VectorXd s1 = Eigen::VectorXd::Ones(1);
  Eigen::VectorXd s2 = Eigen::VectorXd::Constant(1, -3.0);
  for (int t = 0; t < panel.horizon(); ++t) {
    const double v1 = eval_dweight(fit, t, s1)(0, 0);
    const double v2 = eval_dweight(fit, t, s2)(0, 0);
    CHECK(v1 == v2);
    CHECK(v1 < 0.0);  // numerator is -P(available) < 0
  }
}

TEST_CASE("analytic scalar weight equals the per-time empirical weight on marginal designs") {
  auto [panel, nf, beta] = fitted_continuous(150, 3);
  const auto idx = all_indices(panel.n());
  const DWeightFit per_time =
      fit_dweights(panel, nf, beta, LinkKind::Identity, DWeightMode::per_time(), idx);
  const DWeightFit analytic =
      fit_dweights(panel, nf, beta, LinkKind::Identity, DWeightMode::analytic(), idx);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(1);
  for (int t = 0; t < panel.horizon(); ++t)
    CHECK(std::abs(eval_dweight(per_time, t, s)(0, 0) - eval_dweight(analytic, t, s)(0, 0)) <
          1e-10);

  // identical stacked estimating equations at several beta values
  for (double b : {-0.4, 0.0, 0.5, 1.1}) {
    Eigen::VectorXd bv(1);
    bv << b;
    const Eigen::VectorXd g1 = stacked_equation(panel, nf, per_time, LinkKind::Identity, bv);
    const Eigen::VectorXd g2 = stacked_equation(panel, nf, analytic, LinkKind::Identity, bv);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("scalar and matrix forms give the same two-stage estimate") {
  ContinuousConfig cfg;
  cfg.n = 120;
  cfg.lambda2 = 2.0;
  cfg.seed = 4;
  const Panel panel = gen_continuous(cfg).first;
  const auto m1 = MethodSpec::two_stage(LinkKind::Identity, RegressorKind::per_time_mean(),
                                        DWeightMode::per_time());
  const auto m2 = MethodSpec::two_stage(LinkKind::Identity, RegressorKind::per_time_mean(),
                                        DWeightMode::analytic());
  const auto r1 = estimate(panel, m1);
  const auto r2 = estimate(panel, m2);
  CHECK(std::abs(r1.beta[0] - r2.beta[0]) < 1e-10);
}

TEST_CASE("floored inverse scales inversely") {
  Eigen::MatrixXd m(2, 2);
  m << 2.0, 0.3, 0.3, 1.0;
  const double c = 3.7;
  const Eigen::MatrixXd inv1 = *floored_psd_inverse(m);
  const Eigen::MatrixXd inv2 = *floored_psd_inverse((c * m).eval());
  CHECK((inv2 - inv1 / c).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_FALSE(floored_psd_inverse(Eigen::MatrixXd::Zero(2, 2)).has_value());
}

TEST_CASE("the root is invariant to a common positive rescaling of the weights") {
  ContinuousConfig cfg;
  cfg.n = 80;
  cfg.lambda2 = 1.0;
  cfg.seed = 5;
  const Panel panel = gen_continuous(cfg).first;
  const auto idx = all_indices(panel.n());
  const NuisanceFit nf = fit_nuisance(panel, RegressorKind::per_time_mean(), false, idx);
  Eigen::VectorXd beta0(1);
  beta0 << 0.4;
  auto dfit = std::make_shared<DWeightFit>(
      fit_dweights(panel, nf, beta0, LinkKind::Identity, DWeightMode::per_time(), idx));
  auto mu = [nf = std::make_shared<NuisanceFit>(nf), &panel](int i, int t, int a) {
    return nf->predict(t, panel.at(i, t).history, a);
  };
  auto solve_with_scale = [&](double scale) {
    auto d = [dfit, &panel, scale](int i, int t) {
      return (scale * dfit->eval(t, panel.at(i, t).moderator)).eval();
    };
    auto sys = CeeSystem::fixed(panel, LinkKind::Identity, mu, d);
    return solve_z(*sys).theta[0];
  };
  const double b1 = solve_with_scale(1.0);
  const double b2 = solve_with_scale(41.5);
  CHECK(std::abs(b1 - b2) < 1e-9);
}

TEST_CASE("degenerate second moments fall back to the unit weight") {
  // Y = 2 A exactly: residuals vanish at the initial estimate, so every
  // per-time second moment is zero.
  std::mt19937_64 rng(8);
  std::bernoulli_distribution bern(0.5);
  std::vector<Trajectory> trajs(20);
  for (auto& traj : trajs) {
    traj.points.resize(3);
    for (int t = 0; t < 3; ++t) {
      const int a = bern(rng) ? 1 : 0;
      traj.points[t] = point(1, 0.5, a, 2.0 * a, {0.0});
    }
  }
  const Panel panel(std::move(trajs), meta(1, 1));
  const auto idx = all_indices(panel.n());
  const NuisanceFit nf = fit_nuisance(panel, RegressorKind::per_time_mean(), false, idx);
  Eigen::VectorXd beta(1);
  beta << 2.0;
  const DWeightFit fit =
      fit_dweights(panel, nf, beta, LinkKind::Identity, DWeightMode::per_time(), idx);
  CHECK_FALSE(fit.warnings().empty());
  Eigen::VectorXd s = Eigen::VectorXd::Ones(1);
  CHECK(eval_dweight(fit, 0, s)(0, 0) == 1.0);
}

TEST_CASE("pooled smoother matches an independent refit of the moment regressions") {
  auto [panel, nf, beta] = fitted_continuous(100, 9);
  const auto idx = all_indices(panel.n());
  const DWeightFit fit =
      fit_dweights(panel, nf, beta, LinkKind::Identity, DWeightMode::pooled(5), idx);

  // recompute: regress jacobian and squared score on the same (t) basis
  const int T = panel.horizon();
  const int rows = panel.n() * T;
  Eigen::MatrixXd t_raw(rows, 1);
  Eigen::VectorXd jac_resp(rows), meat_resp(rows);
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < T; ++t) {
      const auto& pt = panel.at(i, t);
      const PhiAtom atom = phi_atom(LinkKind::Identity, pt, nf.predict(t, pt.history, 1),
                                    nf.predict(t, pt.history, 0), beta);
      t_raw(i * T + t, 0) = static_cast<double>(t + 1) / T;
      jac_resp[i * T + t] = atom.jac(0, 0);
      meat_resp[i * T + t] = atom.value[0] * atom.value[0];
    }
  const FeatureExpansion basis = FeatureExpansion::spline(t_raw, 5);
  const Eigen::MatrixXd expanded = basis.expand_all(t_raw);
  Eigen::MatrixXd design(rows, expanded.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(expanded.cols()) = expanded;
  Eigen::MatrixXd gram = design.transpose() * design;
  gram.diagonal().array() += 1e-10 * (1.0 + gram.trace());
  const Eigen::VectorXd jac_coef = gram.ldlt().solve(design.transpose() * jac_resp);
  const Eigen::VectorXd meat_coef = gram.ldlt().solve(design.transpose() * meat_resp);

  Eigen::VectorXd s = Eigen::VectorXd::Ones(1);
  for (int t = 0; t < T; ++t) {
    Eigen::RowVectorXd row(1);
    row << static_cast<double>(t + 1) / T;
    Eigen::RowVectorXd dr(design.cols());
    dr[0] = 1.0;
    dr.tail(expanded.cols()) = basis.expand(row);
    const double expect = (dr.dot(jac_coef)) / (dr.dot(meat_coef));
    CHECK(eval_dweight(fit, t, s)(0, 0) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("default mode follows the link") {
  CHECK(default_dmode(LinkKind::Identity).kind == DWeightModeKind::PerTimeEmpirical);
  CHECK(default_dmode(LinkKind::Log).kind == DWeightModeKind::PooledSmoother);
}
