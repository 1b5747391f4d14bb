#include "excursionlab/design.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace excursionlab {

namespace {

std::vector<double> quantile_knots(const Eigen::VectorXd& x, int n_knots) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  std::vector<double> knots;
  for (int j = 0; j < n_knots; ++j) {
    double q = (n_knots == 1) ? 0.5 : static_cast<double>(j) / (n_knots - 1);
    double pos = q * (v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = static_cast<std::size_t>(std::ceil(pos));
    double w = pos - static_cast<double>(lo);
    knots.push_back((1.0 - w) * v[lo] + w * v[hi]);
  }
  knots.erase(std::unique(knots.begin(), knots.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              knots.end());
  return knots;
}

inline double pos3(double z) { return z > 0.0 ? z * z * z : 0.0; }

}  // namespace

SplineBasis1D SplineBasis1D::fit(const Eigen::VectorXd& x, int n_knots) {
  if (x.size() == 0) throw std::invalid_argument("SplineBasis1D: empty sample");
  if (n_knots < 2) throw std::invalid_argument("SplineBasis1D: need at least 2 knots");
  SplineBasis1D b;
  b.knots_ = quantile_knots(x, n_knots);
  // With K distinct knots the natural basis is x plus K-2 curvature terms.
  b.dim_ = b.knots_.size() >= 3 ? static_cast<int>(b.knots_.size()) - 1 : 1;
  return b;
}

void SplineBasis1D::eval(double x, double* out) const {
  out[0] = x;
  if (dim_ == 1) return;
  const auto K = knots_.size();
  const double xi_last = knots_[K - 1];
  auto d = [&](std::size_t k) {
    return (pos3(x - knots_[k]) - pos3(x - xi_last)) / (xi_last - knots_[k]);
  };
  const double d_prev = d(K - 2);
  for (std::size_t k = 0; k + 2 < K; ++k) out[1 + k] = d(k) - d_prev;
}

FeatureExpansion FeatureExpansion::identity(int raw_dim) {
  FeatureExpansion fe;
  fe.identity_ = true;
  fe.raw_dim_ = raw_dim;
  fe.dim_ = raw_dim;
  return fe;
}

FeatureExpansion FeatureExpansion::spline(const Eigen::MatrixXd& raw, int n_knots) {
  FeatureExpansion fe;
  fe.identity_ = false;
  fe.raw_dim_ = static_cast<int>(raw.cols());
  fe.dim_ = 0;
  for (int c = 0; c < raw.cols(); ++c) {
    std::set<double> distinct;
    for (int r = 0; r < raw.rows() && distinct.size() < 4; ++r) distinct.insert(raw(r, c));
    if (distinct.size() < 3) {
      // binary / constant columns pass through linearly
      Eigen::VectorXd two(2);
      two << 0.0, 1.0;
      fe.bases_.push_back(SplineBasis1D::fit(two, 2));
    } else {
      fe.bases_.push_back(SplineBasis1D::fit(raw.col(c), n_knots));
    }
    fe.dim_ += fe.bases_.back().dim();
  }
  return fe;
}

Eigen::RowVectorXd FeatureExpansion::expand(const Eigen::RowVectorXd& raw) const {
  if (raw.size() != raw_dim_)
    throw std::invalid_argument("FeatureExpansion: feature-length mismatch");
  if (identity_) return raw;
  Eigen::RowVectorXd out(dim_);
  int at = 0;
  for (int c = 0; c < raw_dim_; ++c) {
    bases_[c].eval(raw[c], out.data() + at);
    at += bases_[c].dim();
  }
  return out;
}

Eigen::MatrixXd FeatureExpansion::expand_all(const Eigen::MatrixXd& raw) const {
  Eigen::MatrixXd out(raw.rows(), dim_);
  for (int r = 0; r < raw.rows(); ++r) out.row(r) = expand(raw.row(r));
  return out;
}

namespace {

std::vector<std::string> split_tokens(const std::string& formula) {
  std::vector<std::string> tokens;
  std::stringstream ss(formula);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }),
              tok.end());
    if (!tok.empty()) tokens.push_back(tok);
  }
  if (tokens.empty()) throw std::invalid_argument("empty design formula");
  return tokens;
}

}  // namespace

Eigen::VectorXd eval_design(const std::string& formula, int t_idx, int horizon,
                            const Eigen::VectorXd& history) {
  auto tokens = split_tokens(formula);
  std::vector<double> cols;
  for (const auto& tok : tokens) {
    if (tok == "1") {
      cols.push_back(1.0);
    } else if (tok == "t") {
      cols.push_back(static_cast<double>(t_idx + 1) / horizon);
    } else if (tok == "h") {
      for (int j = 0; j < history.size(); ++j) cols.push_back(history[j]);
    } else {
      throw std::invalid_argument("unknown design token '" + tok + "' (expected 1, t, h)");
    }
  }
  return Eigen::Map<Eigen::VectorXd>(cols.data(), static_cast<int>(cols.size()));
}

int design_dim(const std::string& formula, int history_dim) {
  auto tokens = split_tokens(formula);
  int d = 0;
  for (const auto& tok : tokens) {
    if (tok == "h")
      d += history_dim;
    else if (tok == "1" || tok == "t")
      d += 1;
    else
      throw std::invalid_argument("unknown design token '" + tok + "'");
  }
  return d;
}

}  // namespace excursionlab
