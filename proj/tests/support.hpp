#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "excursionlab/panel.hpp"

namespace testsupport {

using excursionlab::DecisionPoint;
using excursionlab::Panel;
using excursionlab::PanelMeta;
using excursionlab::Trajectory;

inline DecisionPoint point(int avail, double prob, int treat, double outcome,
                           std::vector<double> history = {},
                           std::vector<double> moderator = {1.0}) {
  DecisionPoint pt;
  pt.avail = avail;
  pt.prob = prob;
  pt.treat = treat;
  pt.outcome = outcome;
  pt.history = Eigen::Map<Eigen::VectorXd>(history.data(), static_cast<int>(history.size()));
  pt.moderator =
      Eigen::Map<Eigen::VectorXd>(moderator.data(), static_cast<int>(moderator.size()));
  return pt;
}

inline PanelMeta meta(int h_dim, int f_dim) {
  PanelMeta m;
  for (int j = 0; j < h_dim; ++j) m.history_names.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < f_dim; ++j) m.moderator_names.push_back("f" + std::to_string(j + 1));
  return m;
}

// Random marginal panel (f = [1], one history feature, full availability).
inline Panel random_panel(int n, int T, std::uint64_t seed, double prob = 0.5,
                          bool nonneg_outcome = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::bernoulli_distribution bern(prob);
  std::vector<Trajectory> trajs(n);
  for (auto& traj : trajs) {
    traj.points.resize(T);
    for (int t = 0; t < T; ++t) {
      const double z = unif(rng);
      const int a = bern(rng) ? 1 : 0;
      double y = 1.0 + 0.5 * z + 0.4 * a + 0.3 * unif(rng);
      if (nonneg_outcome) y = std::exp(0.3 * z + 0.2 * a + 0.2 * unif(rng));
      traj.points[t] = point(1, prob, a, y, {z});
    }
  }
  return Panel(std::move(trajs), meta(1, 1));
}

inline std::vector<int> all_indices(int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace testsupport
