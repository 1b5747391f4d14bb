#include "excursionlab/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "excursionlab/linalg.hpp"
#include "excursionlab/util.hpp"

namespace excursionlab {

RegressorKind RegressorKind::constant(double v) {
  RegressorKind k;
  k.family = Family::Constant;
  k.value = v;
  return k;
}
RegressorKind RegressorKind::per_time_mean() {
  RegressorKind k;
  k.family = Family::PerTimeMean;
  return k;
}
RegressorKind RegressorKind::linear_ls(double ridge) {
  RegressorKind k;
  k.family = Family::LinearLS;
  k.ridge = ridge;
  return k;
}
RegressorKind RegressorKind::spline_ls(int knots, double ridge) {
  RegressorKind k;
  k.family = Family::LinearLS;
  k.ridge = ridge;
  k.spline_expand = true;
  k.spline_knots = knots;
  return k;
}
RegressorKind RegressorKind::knn(int kk) {
  RegressorKind k;
  k.family = Family::KernelKNN;
  k.k = kk;
  return k;
}
RegressorKind RegressorKind::tree(int max_depth, int min_leaf) {
  RegressorKind k;
  k.family = Family::Tree;
  k.max_depth = max_depth;
  k.min_leaf = min_leaf;
  return k;
}
RegressorKind RegressorKind::forest(int n_trees, int max_depth, int min_leaf, double subsample,
                                    std::uint64_t seed) {
  RegressorKind k;
  k.family = Family::Forest;
  k.n_trees = n_trees;
  k.max_depth = max_depth;
  k.min_leaf = min_leaf;
  k.subsample = subsample;
  k.seed = seed;
  return k;
}
RegressorKind RegressorKind::stack(std::vector<RegressorKind> members, LinkKind link) {
  RegressorKind k;
  k.family = Family::Stack;
  k.members = std::move(members);
  k.stack_link = link;
  return k;
}

void RegressorKind::validate() const {
  switch (family) {
    case Family::Constant:
      if (!std::isfinite(value)) throw std::invalid_argument("Constant: non-finite value");
      break;
    case Family::PerTimeMean:
      break;
    case Family::LinearLS:
      if (ridge < 0.0) throw std::invalid_argument("LinearLS: ridge must be >= 0");
      if (spline_expand && spline_knots < 2)
        throw std::invalid_argument("LinearLS: spline knots must be >= 2");
      break;
    case Family::KernelKNN:
      if (k < 1) throw std::invalid_argument("KernelKNN: k must be >= 1");
      break;
    case Family::Tree:
      if (max_depth < 1 || min_leaf < 1)
        throw std::invalid_argument("Tree: max_depth and min_leaf must be >= 1");
      break;
    case Family::Forest:
      if (n_trees < 1 || max_depth < 1 || min_leaf < 1)
        throw std::invalid_argument("Forest: hyperparameters must be >= 1");
      if (!(subsample > 0.0) || subsample > 1.0)
        throw std::invalid_argument("Forest: subsample must lie in (0, 1]");
      break;
    case Family::Stack:
      if (members.size() < 2) throw std::invalid_argument("Stack: needs >= 2 members");
      for (const auto& m : members) {
        if (m.family == Family::Stack) throw std::invalid_argument("Stack: no nested stacks");
        m.validate();
      }
      break;
  }
}

std::string RegressorKind::name() const {
  switch (family) {
    case Family::Constant: return "constant";
    case Family::PerTimeMean: return "mean";
    case Family::LinearLS: return spline_expand ? "spline" : "linear";
    case Family::KernelKNN: return "knn";
    case Family::Tree: return "tree";
    case Family::Forest: return "forest";
    case Family::Stack: return "stack";
  }
  return "?";
}

namespace detail {

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual double predict(const Eigen::RowVectorXd& x) const = 0;
};

namespace {

class ConstantReg final : public Regressor {
 public:
  explicit ConstantReg(double v) : v_(v) {}
  double predict(const Eigen::RowVectorXd&) const override { return v_; }

 private:
  double v_;
};

class LinearReg final : public Regressor {
 public:
  LinearReg(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge,
            FeatureExpansion expansion)
      : expansion_(std::move(expansion)) {
    const Eigen::MatrixXd xe = expansion_.expand_all(x);
    Eigen::MatrixXd design(xe.rows(), xe.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(xe.cols()) = xe;
    coef_ = ridge_solve(design, y, ridge);
  }
  double predict(const Eigen::RowVectorXd& x) const override {
    const Eigen::RowVectorXd xe = expansion_.expand(x);
    return coef_[0] + xe.dot(coef_.tail(xe.size()));
  }

 private:
  FeatureExpansion expansion_;
  Eigen::VectorXd coef_;
};

class KnnReg final : public Regressor {
 public:
  KnnReg(Eigen::MatrixXd x, Eigen::VectorXd y, int k)
      : x_(std::move(x)), y_(std::move(y)), k_(std::min<int>(k, static_cast<int>(y_.size()))) {}
  double predict(const Eigen::RowVectorXd& q) const override {
    const int m = static_cast<int>(x_.rows());
    std::vector<std::pair<double, int>> dist(m);
    for (int i = 0; i < m; ++i) dist[i] = {(x_.row(i) - q).squaredNorm(), i};
    std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());
    double s = 0.0;
    for (int j = 0; j < k_; ++j) s += y_[dist[j].second];
    return s / k_;
  }

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  int k_;
};

struct TreeNode {
  int feature = -1;      // -1: leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1, right = -1;
};

class TreeReg final : public Regressor {
 public:
  // rows: indices into (x, y); sample weights are not used.
  TreeReg(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<int> rows,
          int max_depth, int min_leaf) {
    build(x, y, std::move(rows), 0, max_depth, min_leaf);
  }

  double predict(const Eigen::RowVectorXd& q) const override {
    int at = 0;
    while (nodes_[at].feature >= 0)
      at = q[nodes_[at].feature] <= nodes_[at].threshold ? nodes_[at].left : nodes_[at].right;
    return nodes_[at].value;
  }

 private:
  int build(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<int> rows,
            int depth, int max_depth, int min_leaf) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    for (int r : rows) sum += y[r];
    nodes_[id].value = sum / rows.size();
    if (depth >= max_depth || static_cast<int>(rows.size()) < 2 * min_leaf) return id;

    // best split by within-node SSE reduction
    int best_feat = -1;
    double best_thresh = 0.0, best_score = 0.0;
    const double node_sse_base = sum * sum / rows.size();
    std::vector<int> order;
    for (int f = 0; f < x.cols(); ++f) {
      order = rows;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return x(a, f) < x(b, f); });
      double left_sum = 0.0;
      const double total = sum;
      const int m = static_cast<int>(order.size());
      for (int cut = 1; cut < m; ++cut) {
        left_sum += y[order[cut - 1]];
        if (cut < min_leaf || m - cut < min_leaf) continue;
        if (x(order[cut - 1], f) >= x(order[cut], f)) continue;  // no gap to split on
        const double right_sum = total - left_sum;
        const double score =
            left_sum * left_sum / cut + right_sum * right_sum / (m - cut) - node_sse_base;
        if (score > best_score + 1e-12) {
          best_score = score;
          best_feat = f;
          best_thresh = 0.5 * (x(order[cut - 1], f) + x(order[cut], f));
        }
      }
    }
    if (best_feat < 0) return id;

    std::vector<int> left_rows, right_rows;
    for (int r : rows)
      (x(r, best_feat) <= best_thresh ? left_rows : right_rows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    nodes_[id].feature = best_feat;
    nodes_[id].threshold = best_thresh;
    const int l = build(x, y, std::move(left_rows), depth + 1, max_depth, min_leaf);
    const int r = build(x, y, std::move(right_rows), depth + 1, max_depth, min_leaf);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  std::vector<TreeNode> nodes_;
};

class ForestReg final : public Regressor {
 public:
  ForestReg(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const RegressorKind& kind,
            std::uint64_t arm_salt) {
    const int m = static_cast<int>(y.size());
    const int take = std::max(1, static_cast<int>(std::floor(kind.subsample * m)));
    trees_.reserve(kind.n_trees);
    std::vector<int> all(m);
    std::iota(all.begin(), all.end(), 0);
    for (int b = 0; b < kind.n_trees; ++b) {
      std::mt19937_64 rng(mix_seed(kind.seed, (static_cast<std::uint64_t>(b) << 8) ^ arm_salt));
      std::vector<int> rows = all;
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(take);
      trees_.emplace_back(x, y, std::move(rows), kind.max_depth, kind.min_leaf);
    }
  }
  double predict(const Eigen::RowVectorXd& q) const override {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(q);
    return s / trees_.size();
  }

 private:
  std::vector<TreeReg> trees_;
};

class StackReg final : public Regressor {
 public:
  StackReg(std::vector<std::shared_ptr<const Regressor>> members, Eigen::VectorXd weights,
           LinkKind link)
      : members_(std::move(members)), weights_(std::move(weights)), link_(link) {}
  double predict(const Eigen::RowVectorXd& q) const override {
    double s = 0.0;
    for (std::size_t j = 0; j < members_.size(); ++j) s += weights_[j] * members_[j]->predict(q);
    if (link_ == LinkKind::Log && s < 0.0) s = 0.0;
    return s;
  }

 private:
  std::vector<std::shared_ptr<const Regressor>> members_;
  Eigen::VectorXd weights_;
  LinkKind link_;
};

std::shared_ptr<const Regressor> fit_single(const RegressorKind& kind, const Eigen::MatrixXd& x,
                                            const Eigen::VectorXd& y, std::uint64_t arm_salt,
                                            std::vector<std::string>* warnings);

std::shared_ptr<const Regressor> fit_stack_members(const RegressorKind& kind,
                                                   const Eigen::MatrixXd& x,
                                                   const Eigen::VectorXd& y,
                                                   std::uint64_t arm_salt,
                                                   std::vector<std::string>* warnings) {
  std::vector<std::shared_ptr<const Regressor>> members;
  const int m = static_cast<int>(y.size());
  Eigen::MatrixXd preds(m, static_cast<int>(kind.members.size()));
  for (std::size_t j = 0; j < kind.members.size(); ++j) {
    members.push_back(fit_single(kind.members[j], x, y, arm_salt + j + 1, warnings));
    for (int i = 0; i < m; ++i) preds(i, static_cast<int>(j)) = members.back()->predict(x.row(i));
  }
  // in-sample member predictions feed the weight fit
  std::vector<std::string> local;
  Eigen::VectorXd w = stack_weights(preds, y, kind.stack_link, &local);
  if (warnings) warnings->insert(warnings->end(), local.begin(), local.end());
  return std::make_shared<StackReg>(std::move(members), std::move(w), kind.stack_link);
}

std::shared_ptr<const Regressor> fit_single(const RegressorKind& kind, const Eigen::MatrixXd& x,
                                            const Eigen::VectorXd& y, std::uint64_t arm_salt,
                                            std::vector<std::string>* warnings) {
  const int m = static_cast<int>(y.size());
  std::vector<int> all(m);
  std::iota(all.begin(), all.end(), 0);
  switch (kind.family) {
    case RegressorKind::Family::Constant:
      return std::make_shared<ConstantReg>(kind.value);
    case RegressorKind::Family::PerTimeMean:
      return std::make_shared<ConstantReg>(y.mean());
    case RegressorKind::Family::LinearLS: {
      FeatureExpansion fe = kind.spline_expand
                                ? FeatureExpansion::spline(x, kind.spline_knots)
                                : FeatureExpansion::identity(static_cast<int>(x.cols()));
      return std::make_shared<LinearReg>(x, y, kind.ridge, std::move(fe));
    }
    case RegressorKind::Family::KernelKNN:
      return std::make_shared<KnnReg>(x, y, kind.k);
    case RegressorKind::Family::Tree:
      return std::make_shared<TreeReg>(x, y, all, kind.max_depth, kind.min_leaf);
    case RegressorKind::Family::Forest:
      return std::make_shared<ForestReg>(x, y, kind, arm_salt);
    case RegressorKind::Family::Stack:
      return fit_stack_members(kind, x, y, arm_salt, warnings);
  }
  throw std::logic_error("unreachable regressor family");
}

}  // namespace
}  // namespace detail

Eigen::VectorXd stack_weights(const Eigen::MatrixXd& member_preds, const Eigen::VectorXd& y,
                              LinkKind link, std::vector<std::string>* warnings) {
  const int J = static_cast<int>(member_preds.cols());
  Eigen::VectorXd w;
  bool ok = true;
  if (link == LinkKind::Identity) {
    w = ridge_solve(member_preds, y, 1e-8);
  } else {
    // Poisson score sum_i {y_i - exp(x_i^T w)} x_i = 0, Newton from 0
    w = Eigen::VectorXd::Zero(J);
    ok = false;
    for (int iter = 0; iter < 50; ++iter) {
      Eigen::VectorXd eta = member_preds * w;
      Eigen::VectorXd mu = eta.array().min(30.0).exp();
      Eigen::VectorXd score = member_preds.transpose() * (y - mu);
      if (score.lpNorm<Eigen::Infinity>() < 1e-9 * (1.0 + y.lpNorm<Eigen::Infinity>())) {
        ok = true;
        break;
      }
      Eigen::MatrixXd hess = member_preds.transpose() * mu.asDiagonal() * member_preds;
      hess.diagonal().array() += 1e-10;
      Eigen::VectorXd step = hess.ldlt().solve(score);
      if (!step.allFinite()) break;
      w += step;
      if (!w.allFinite()) break;
    }
  }
  if (!ok || !w.allFinite()) {
    if (warnings) warnings->push_back("stack weight fit did not converge; using equal weights");
    w = Eigen::VectorXd::Constant(J, 1.0 / J);
  }
  w = w.cwiseMax(0.0);
  const double total = w.sum();
  if (total <= 0.0) {
    if (warnings) warnings->push_back("stack weights all clipped; using equal weights");
    return Eigen::VectorXd::Constant(J, 1.0 / J);
  }
  return w / total;
}

namespace {

// Training rows for one (t, a) cell or the pooled arm: features and outcomes
// over available points only. Pooled features get t/T prepended.
void collect_rows(const Panel& panel, std::span<const int> subset, int t_idx, int a, bool pooled,
                  Eigen::MatrixXd& x, Eigen::VectorXd& y) {
  const int T = panel.horizon();
  const int hdim = panel.history_dim();
  std::vector<int> is;
  std::vector<int> ts;
  for (int i : subset) {
    for (int t = 0; t < T; ++t) {
      if (!pooled && t != t_idx) continue;
      const auto& pt = panel.at(i, t);
      if (pt.avail != 1 || pt.treat != a) continue;
      is.push_back(i);
      ts.push_back(t);
    }
  }
  const int m = static_cast<int>(is.size());
  const int d = pooled ? hdim + 1 : hdim;
  x.resize(m, d);
  y.resize(m);
  for (int r = 0; r < m; ++r) {
    const auto& pt = panel.at(is[r], ts[r]);
    if (pooled) {
      x(r, 0) = static_cast<double>(ts[r] + 1) / T;
      x.row(r).tail(hdim) = pt.history.transpose();
    } else {
      x.row(r) = pt.history.transpose();
    }
    y[r] = pt.outcome;
  }
}

}  // namespace

NuisanceFit fit_nuisance(const Panel& panel, const RegressorKind& kind, bool pooled,
                         std::span<const int> subset, int fold_id) {
  kind.validate();
  if (subset.empty()) throw std::invalid_argument("fit_nuisance: empty subset");
  NuisanceFit fit;
  fit.pooled_ = pooled;
  fit.fold_id_ = fold_id;
  fit.horizon_ = panel.horizon();
  fit.log_link_ = kind.family == RegressorKind::Family::Stack && kind.stack_link == LinkKind::Log;

  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  if (pooled) {
    fit.models_.resize(2);
    for (int a = 0; a < 2; ++a) {
      collect_rows(panel, subset, 0, a, true, x, y);
      if (y.size() == 0)
        throw std::invalid_argument("fit_nuisance: arm " + std::to_string(a) +
                                    " has no available observations");
      fit.models_[a] = detail::fit_single(kind, x, y, static_cast<std::uint64_t>(a),
                                          &fit.warnings_);
    }
  } else {
    const int T = panel.horizon();
    fit.models_.resize(2 * static_cast<std::size_t>(T));
    std::vector<std::shared_ptr<const detail::Regressor>> pooled_arm(2);
    for (int t = 0; t < T; ++t) {
      for (int a = 0; a < 2; ++a) {
        collect_rows(panel, subset, t, a, false, x, y);
        if (y.size() == 0) {
          // empty (t, a) cell: pooled fit for that cell
          if (!pooled_arm[a]) {
            Eigen::MatrixXd xp;
            Eigen::VectorXd yp;
            collect_rows(panel, subset, 0, a, true, xp, yp);
            if (yp.size() == 0)
              throw std::invalid_argument("fit_nuisance: arm " + std::to_string(a) +
                                          " has no available observations");
            // pooled fallback sees history only, so predictions stay
            // feature-compatible with the per-t models
            Eigen::MatrixXd xh = xp.rightCols(panel.history_dim());
            pooled_arm[a] = detail::fit_single(kind, xh, yp,
                                               1000 + static_cast<std::uint64_t>(a),
                                               &fit.warnings_);
          }
          fit.warnings_.push_back("no available rows for t=" + std::to_string(t + 1) +
                                  ", a=" + std::to_string(a) + "; pooled fallback");
          fit.models_[2 * t + a] = pooled_arm[a];
        } else {
          fit.models_[2 * t + a] = detail::fit_single(
              kind, x, y,
              (static_cast<std::uint64_t>(t) << 20) + static_cast<std::uint64_t>(a),
              &fit.warnings_);
        }
      }
    }
  }
  return fit;
}

double NuisanceFit::predict(int t_idx, const Eigen::VectorXd& history, int a) const {
  if (t_idx < 0 || t_idx >= horizon_)
    throw std::invalid_argument("predict_mu: t outside [T]");
  if (a != 0 && a != 1) throw std::invalid_argument("predict_mu: arm must be 0 or 1");
  Eigen::RowVectorXd x;
  if (pooled_) {
    x.resize(history.size() + 1);
    x[0] = static_cast<double>(t_idx + 1) / horizon_;
    x.tail(history.size()) = history.transpose();
    return models_[a]->predict(x);
  }
  return models_[2 * t_idx + a]->predict(history.transpose());
}

double predict_mu(const NuisanceFit& fit, int t_idx, const Eigen::VectorXd& history, int a) {
  return fit.predict(t_idx, history, a);
}

}  // namespace excursionlab
