#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

namespace excursionlab {

enum class LinkKind { Identity, Log };

const char* link_name(LinkKind link);
LinkKind parse_link(const std::string& name);

// One decision point of one trajectory. `history` holds the numeric
// features extracted from H_t used for nuisance fitting; `moderator` is the
// evaluated CEE design row f_t(S_t).
struct DecisionPoint {
  int avail = 1;        // I_t
  double prob = 0.5;    // p_t = P(A_t = 1 | H_t)
  int treat = 0;        // A_t
  double outcome = 0.0; // Y_{t+1}
  Eigen::VectorXd history;
  Eigen::VectorXd moderator;
};

struct Trajectory {
  std::vector<DecisionPoint> points;
};

struct PanelMeta {
  std::vector<std::string> history_names;
  std::vector<std::string> moderator_names;
};

// Immutable panel of n trajectories with a common horizon T. Construction
// enforces the structural shape (equal T, consistent feature dimensions,
// finite values); the behavioral rules live in validate_panel.
class Panel {
 public:
  Panel(std::vector<Trajectory> trajectories, PanelMeta meta);

  int n() const { return static_cast<int>(trajectories_.size()); }
  int horizon() const { return horizon_; }
  int history_dim() const { return history_dim_; }
  int moderator_dim() const { return moderator_dim_; }

  const DecisionPoint& at(int i, int t) const { return trajectories_[i].points[t]; }
  const Trajectory& trajectory(int i) const { return trajectories_[i]; }
  const PanelMeta& meta() const { return meta_; }

  // Copy of the selected trajectories, in the given order.
  Panel subset(std::span<const int> indices) const;

  // Same data with moderator rows replaced by the evaluated design formula.
  Panel with_moderator(const std::string& formula) const;

 private:
  std::vector<Trajectory> trajectories_;
  PanelMeta meta_;
  int horizon_ = 0;
  int history_dim_ = 0;
  int moderator_dim_ = 0;
};

struct Violation {
  int traj = -1;  // -1 for panel-level rules
  int t = -1;
  std::string rule;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

// Rule checks behind Assumption-2.1-style constraints:
//   treated-while-unavailable, probability-outside-tau-band,
//   negative-outcome-under-log-link, too-few-trajectories.
// Pure: identical inputs give identical reports.
ValidationReport validate_panel(const Panel& panel, LinkKind link, double tau = 0.01);

// Common length of all moderator rows (the CEE parameter dimension p).
int moderator_dim(const Panel& panel);

}  // namespace excursionlab
