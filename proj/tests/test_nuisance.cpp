#include <doctest.h>

#include <cmath>
#include <random>

#include "excursionlab/nuisance.hpp"
#include "excursionlab/simgen.hpp"
#include "support.hpp"

using namespace excursionlab;
using namespace testsupport;

namespace {

Panel constant_outcome_panel(int n, int T, double c) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution bern(0.5);
  std::vector<Trajectory> trajs(n);
  for (auto& traj : trajs) {
    traj.points.resize(T);
    for (int t = 0; t < T; ++t)
      traj.points[t] = point(1, 0.5, bern(rng) ? 1 : 0, c, {0.1 * t});
  }
  return Panel(std::move(trajs), meta(1, 1));
}

double training_mse(const Panel& panel, const NuisanceFit& fit) {
  double sse = 0.0;
  long m = 0;
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < panel.horizon(); ++t) {
      const auto& pt = panel.at(i, t);
      if (pt.avail != 1) continue;
      const double pred = fit.predict(t, pt.history, pt.treat);
      sse += (pred - pt.outcome) * (pred - pt.outcome);
      ++m;
    }
  return sse / m;
}

}  // namespace

TEST_CASE("per-time mean on constant outcomes") {
  const Panel panel = constant_outcome_panel(20, 4, 3.25);
  const auto idx = all_indices(panel.n());
  const NuisanceFit fit = fit_nuisance(panel, RegressorKind::per_time_mean(), false, idx);
  Eigen::VectorXd h(1);
  h << 0.05;
  for (int t = 0; t < 4; ++t)
    for (int a = 0; a < 2; ++a) CHECK(fit.predict(t, h, a) == doctest::Approx(3.25));
}

TEST_CASE("least squares recovers exactly linear data") {
  // y = 1 + 2x on arm a=1
  std::vector<Trajectory> trajs(10);
  for (int i = 0; i < 10; ++i) {
    const double x = 0.3 * i - 1.0;
    trajs[i].points = {point(1, 0.5, 1, 1.0 + 2.0 * x, {x})};
  }
  // arm 0 needs at least one row
  trajs[0].points[0] = point(1, 0.5, 0, 0.0, {0.0});
  const Panel panel(std::move(trajs), meta(1, 1));
  const auto idx = all_indices(panel.n());
  const NuisanceFit fit = fit_nuisance(panel, RegressorKind::linear_ls(0.0), true, idx);
  Eigen::VectorXd h(1);
  h << 0.77;
  CHECK(fit.predict(0, h, 1) == doctest::Approx(1.0 + 2.0 * 0.77).epsilon(1e-10));
}

TEST_CASE("forest beats the per-time mean on the step form") {
  ContinuousConfig cfg;
  cfg.n = 100;
  cfg.form = CurveForm::Step;
  cfg.lambda1 = 2.0;
  cfg.lambda2 = 0.0;
  cfg.lambda3 = 1.0;
  cfg.seed = 31;
  const Panel panel = gen_continuous(cfg).first;
  const auto idx = all_indices(panel.n());
  const NuisanceFit mean_fit = fit_nuisance(panel, RegressorKind::per_time_mean(), false, idx);
  const NuisanceFit forest_fit =
      fit_nuisance(panel, RegressorKind::forest(100, 6, 5, 0.8, 17), true, idx);
  CHECK(training_mse(panel, forest_fit) < training_mse(panel, mean_fit));
}

TEST_CASE("knn with k equal to the sample is the arm mean") {
  const Panel panel = random_panel(15, 3, 8);
  const auto idx = all_indices(panel.n());
  const NuisanceFit fit = fit_nuisance(panel, RegressorKind::knn(100000), true, idx);
  double sum = 0.0;
  long m = 0;
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < 3; ++t) {
      const auto& pt = panel.at(i, t);
      if (pt.treat == 1) {
        sum += pt.outcome;
        ++m;
      }
    }
  Eigen::VectorXd h(1);
  h << 0.123;
  CHECK(fit.predict(1, h, 1) == doctest::Approx(sum / m).epsilon(1e-12));
}

TEST_CASE("deep tree with unit leaves memorizes training points") {
  const Panel panel = random_panel(12, 2, 21);
  const auto idx = all_indices(panel.n());
  const NuisanceFit fit = fit_nuisance(panel, RegressorKind::tree(64, 1), true, idx);
  const auto& pt = panel.at(3, 1);
  CHECK(fit.predict(1, pt.history, pt.treat) == doctest::Approx(pt.outcome).epsilon(1e-12));
}

TEST_CASE("feature-length mismatch raises") {
  const Panel panel = random_panel(6, 2, 2);
  const auto idx = all_indices(panel.n());
  const NuisanceFit fit = fit_nuisance(panel, RegressorKind::linear_ls(), true, idx);
  Eigen::VectorXd bad(3);
  bad << 1.0, 2.0, 3.0;
  CHECK_THROWS(fit.predict(0, bad, 1));
  Eigen::VectorXd good(1);
  good << 0.0;
  CHECK_THROWS(fit.predict(5, good, 1));  // t outside [T]
}

TEST_CASE("stack weights") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  const int m = 60;
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) y[i] = unif(rng);

  SUBCASE("identical members split evenly") {
    Eigen::MatrixXd preds(m, 2);
    preds.col(0) = y;
    preds.col(1) = y;
    const Eigen::VectorXd w = stack_weights(preds, y, LinkKind::Identity);
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("exact member dominates") {
    Eigen::MatrixXd preds(m, 2);
    preds.col(0) = y;
    preds.col(1).setZero();
    const Eigen::VectorXd w = stack_weights(preds, y, LinkKind::Identity);
    CHECK(w[0] >= 0.99);
  }
  SUBCASE("constant members reproduce the mean") {
    Eigen::MatrixXd preds(m, 3);
    preds.setConstant(y.mean());
    const Eigen::VectorXd w = stack_weights(preds, y, LinkKind::Identity);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((preds.row(0) * w).value() == doctest::Approx(y.mean()).epsilon(1e-8));
  }
  SUBCASE("poisson weighting handles the log link") {
    Eigen::MatrixXd preds(m, 2);
    preds.col(0) = y.array().log();
    preds.col(1).setConstant(1.0);
    const Eigen::VectorXd w = stack_weights(preds, y, LinkKind::Log);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.minCoeff() >= 0.0);
  }
}

TEST_CASE("stack fit: log link predictions stay nonnegative") {
  const Panel panel = random_panel(30, 4, 44, 0.5, true);
  const auto idx = all_indices(panel.n());
  auto kind = RegressorKind::stack(
      {RegressorKind::linear_ls(), RegressorKind::per_time_mean()}, LinkKind::Log);
  const NuisanceFit fit = fit_nuisance(panel, kind, true, idx);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(-4.0, 4.0);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd h(1);
    h << unif(rng);
    CHECK(fit.predict(rep % 4, h, rep % 2) >= 0.0);
  }
}

TEST_CASE("forest fits are deterministic given the seed") {
  const Panel panel = random_panel(40, 5, 66);
  const auto idx = all_indices(panel.n());
  const auto kind = RegressorKind::forest(50, 5, 3, 0.7, 9001);
  const NuisanceFit a = fit_nuisance(panel, kind, true, idx);
  const NuisanceFit b = fit_nuisance(panel, kind, true, idx);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd h(1);
    h << unif(rng);
    const int t = rep % 5, arm = rep % 2;
    CHECK(a.predict(t, h, arm) == b.predict(t, h, arm));  // bitwise
  }
}

TEST_CASE("training on a subset never reads the held-out rows") {
  const Panel panel = random_panel(30, 4, 12);
  std::vector<int> train;
  for (int i = 0; i < 30; ++i)
    if (i % 3 != 0) train.push_back(i);
  const NuisanceFit from_subset = fit_nuisance(panel, RegressorKind::tree(6, 2), true, train);
  const Panel reduced = panel.subset(train);
  const NuisanceFit from_reduced =
      fit_nuisance(panel.subset(train), RegressorKind::tree(6, 2), true, all_indices(reduced.n()));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 60; ++rep) {
    Eigen::VectorXd h(1);
    h << unif(rng);
    CHECK(from_subset.predict(rep % 4, h, rep % 2) == from_reduced.predict(rep % 4, h, rep % 2));
  }
}

TEST_CASE("piecewise-constant learners cannot extrapolate outside the outcome range") {
  const Panel panel = random_panel(40, 4, 77);
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < 4; ++t) {
      lo = std::min(lo, panel.at(i, t).outcome);
      hi = std::max(hi, panel.at(i, t).outcome);
    }
  const auto idx = all_indices(panel.n());
  for (const auto& kind : {RegressorKind::per_time_mean(), RegressorKind::tree(8, 2),
                           RegressorKind::forest(40, 6, 2, 0.8, 4)}) {
    const bool pooled = kind.family != RegressorKind::Family::PerTimeMean;
    const NuisanceFit fit = fit_nuisance(panel, kind, pooled, idx);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unif(-50.0, 50.0);
    for (int rep = 0; rep < 50; ++rep) {
      Eigen::VectorXd h(1);
      h << unif(rng);
      const double pred = fit.predict(rep % 4, h, rep % 2);
      CHECK(pred >= lo);
      CHECK(pred <= hi);
    }
  }
}

TEST_CASE("empty (t, a) cell falls back to the pooled fit with a warning") {
  // arm 1 never occurs at t = 2
  std::vector<Trajectory> trajs(10);
  std::mt19937_64 rng(6);
  std::bernoulli_distribution bern(0.5);
  for (auto& traj : trajs) {
    traj.points.resize(3);
    for (int t = 0; t < 3; ++t) {
      const int a = t == 2 ? 0 : (bern(rng) ? 1 : 0);
      traj.points[t] = point(1, 0.5, a, 1.0 + t, {0.1});
    }
  }
  const Panel panel(std::move(trajs), meta(1, 1));
  const NuisanceFit fit =
      fit_nuisance(panel, RegressorKind::per_time_mean(), false, all_indices(panel.n()));
  REQUIRE_FALSE(fit.warnings().empty());
  Eigen::VectorXd h(1);
  h << 0.1;
  CHECK(std::isfinite(fit.predict(2, h, 1)));
}
