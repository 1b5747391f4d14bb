#include "excursionlab/panel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "excursionlab/design.hpp"

namespace excursionlab {

const char* link_name(LinkKind link) {
  return link == LinkKind::Identity ? "identity" : "log";
}

LinkKind parse_link(const std::string& name) {
  if (name == "identity") return LinkKind::Identity;
  if (name == "log") return LinkKind::Log;
  throw std::invalid_argument("unknown link '" + name + "' (expected identity or log)");
}

namespace {

bool finite(double x) { return std::isfinite(x); }

void check_point(const DecisionPoint& pt, int i, int t) {
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << "panel structure: " << what << " at trajectory " << i << ", t " << (t + 1);
    throw std::invalid_argument(os.str());
  };
  if (pt.avail != 0 && pt.avail != 1) fail("availability not in {0,1}");
  if (pt.treat != 0 && pt.treat != 1) fail("treatment not in {0,1}");
  if (!finite(pt.prob) || !finite(pt.outcome)) fail("non-finite value");
  for (int j = 0; j < pt.history.size(); ++j)
    if (!finite(pt.history[j])) fail("non-finite history feature");
  for (int j = 0; j < pt.moderator.size(); ++j)
    if (!finite(pt.moderator[j])) fail("non-finite moderator feature");
}

}  // namespace

Panel::Panel(std::vector<Trajectory> trajectories, PanelMeta meta)
    : trajectories_(std::move(trajectories)), meta_(std::move(meta)) {
  if (trajectories_.empty()) throw std::invalid_argument("panel structure: no trajectories");
  horizon_ = static_cast<int>(trajectories_[0].points.size());
  if (horizon_ < 1) throw std::invalid_argument("panel structure: horizon must be >= 1");
  history_dim_ = static_cast<int>(trajectories_[0].points[0].history.size());
  moderator_dim_ = static_cast<int>(trajectories_[0].points[0].moderator.size());
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    const auto& traj = trajectories_[i];
    if (static_cast<int>(traj.points.size()) != horizon_)
      throw std::invalid_argument("panel structure: trajectories must share a common horizon");
    for (int t = 0; t < horizon_; ++t) {
      const auto& pt = traj.points[t];
      if (static_cast<int>(pt.history.size()) != history_dim_)
        throw std::invalid_argument("panel structure: inconsistent history dimension");
      if (static_cast<int>(pt.moderator.size()) != moderator_dim_)
        throw std::invalid_argument("panel structure: inconsistent moderator dimension");
      check_point(pt, static_cast<int>(i), t);
    }
  }
  if (moderator_dim_ < 1)
    throw std::invalid_argument("panel structure: moderator rows must be non-empty");
}

Panel Panel::subset(std::span<const int> indices) const {
  std::vector<Trajectory> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= n()) throw std::invalid_argument("panel subset: index out of range");
    out.push_back(trajectories_[idx]);
  }
  return Panel(std::move(out), meta_);
}

Panel Panel::with_moderator(const std::string& formula) const {
  std::vector<Trajectory> out = trajectories_;
  for (auto& traj : out)
    for (int t = 0; t < horizon_; ++t)
      traj.points[t].moderator = eval_design(formula, t, horizon_, traj.points[t].history);
  PanelMeta meta = meta_;
  meta.moderator_names.clear();
  int d = design_dim(formula, history_dim_);
  for (int j = 0; j < d; ++j) meta.moderator_names.push_back("f" + std::to_string(j + 1));
  return Panel(std::move(out), std::move(meta));
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  if (ok()) {
    os << "pass";
    return os.str();
  }
  for (const auto& v : violations) {
    os << v.rule << " (trajectory " << v.traj << ", t " << v.t << "): " << v.detail << "\n";
  }
  return os.str();
}

ValidationReport validate_panel(const Panel& panel, LinkKind link, double tau) {
  if (!(tau > 0.0) || tau >= 0.5)
    throw std::invalid_argument("validate_panel: tau must lie in (0, 0.5)");
  ValidationReport report;
  if (panel.n() < 2)
    report.violations.push_back({-1, -1, "too-few-trajectories",
                                 "need n >= 2, got " + std::to_string(panel.n())});
  for (int i = 0; i < panel.n(); ++i) {
    for (int t = 0; t < panel.horizon(); ++t) {
      const auto& pt = panel.at(i, t);
      if (pt.avail == 0 && pt.treat == 1)
        report.violations.push_back({i, t + 1, "treated-while-unavailable",
                                     "A_t = 1 with I_t = 0"});
      if (pt.avail == 1 && (pt.prob < tau || pt.prob > 1.0 - tau)) {
        std::ostringstream os;
        os << "p_t = " << pt.prob << " outside [" << tau << ", " << 1.0 - tau << "]";
        report.violations.push_back({i, t + 1, "probability-outside-tau-band", os.str()});
      }
      if (link == LinkKind::Log && pt.outcome < 0.0)
        report.violations.push_back({i, t + 1, "negative-outcome-under-log-link",
                                     "Y = " + std::to_string(pt.outcome)});
    }
  }
  return report;
}

int moderator_dim(const Panel& panel) { return panel.moderator_dim(); }

}  // namespace excursionlab
