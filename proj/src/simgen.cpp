#include "excursionlab/simgen.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>

#include "excursionlab/cee_model.hpp"
#include "excursionlab/linalg.hpp"
#include "excursionlab/util.hpp"

namespace excursionlab {

const char* curve_form_name(CurveForm f) {
  switch (f) {
    case CurveForm::Linear: return "linear";
    case CurveForm::SimpleNonlinear: return "nonlinear";
    case CurveForm::Periodic: return "periodic";
    case CurveForm::Step: return "step";
  }
  return "?";
}

CurveForm parse_curve_form(const std::string& name) {
  if (name == "linear" || name == "loglinear") return CurveForm::Linear;
  if (name == "nonlinear" || name == "simple_nonlinear") return CurveForm::SimpleNonlinear;
  if (name == "periodic") return CurveForm::Periodic;
  if (name == "step") return CurveForm::Step;
  throw std::invalid_argument("unknown form '" + name +
                              "' (expected linear, nonlinear, periodic, step)");
}

double beta22_pdf(double x) {
  if (x < 0.0 || x > 1.0) return 0.0;
  return 6.0 * x * (1.0 - x);
}

namespace {

bool is_even(long v) { return (v % 2) == 0; }

// t here is the 1-based decision point index, as in the model formulas.

double mu0_continuous(const ContinuousConfig& c, int t, double z) {
  switch (c.form) {
    case CurveForm::Linear:
      return c.alpha0 + c.alpha1 * t + c.alpha2 * z;
    case CurveForm::SimpleNonlinear:
      return c.alpha0 +
             c.lambda1 * (beta22_pdf(z / 6.0 + 0.5) + beta22_pdf(static_cast<double>(t) / c.T));
    case CurveForm::Periodic:
      return c.alpha0 + c.lambda1 * (std::sin(static_cast<double>(t)) + std::sin(z));
    case CurveForm::Step:
      return c.alpha0 + c.lambda1 * (is_even(t) + is_even(static_cast<long>(std::floor(10.0 * z))));
  }
  return 0.0;
}

double log_mu0_binary(const BinaryConfig& c, int t, double z, double ylag) {
  const double drift = c.alpha3 * (t - 1.0) / c.T;
  switch (c.form) {
    case CurveForm::Linear:
      return c.alpha0 + c.alpha1 * static_cast<double>(t) / c.T + c.alpha2 * (z / 6.0 + 0.5) +
             c.rho * ylag + drift;
    case CurveForm::SimpleNonlinear:
      // the lag term sits inside the lambda-scaled bracket for this form
      return c.alpha0 + 2.0 * (1.0 - c.lambda) +
             (2.0 / 3.0) * c.lambda *
                 (beta22_pdf(z / 6.0 + 0.5) + beta22_pdf(static_cast<double>(t) / c.T) +
                  c.rho * ylag) +
             drift;
    case CurveForm::Periodic:
      return c.alpha0 + 2.0 * (1.0 - c.lambda) +
             0.5 * c.lambda * (std::sin(static_cast<double>(t) / 5.0) + std::sin(z) + 2.0) +
             c.rho * ylag + drift;
    case CurveForm::Step:
      return c.alpha0 + 2.0 * (1.0 - c.lambda) +
             c.lambda * (is_even(static_cast<long>(std::floor(t / 5.0))) +
                         is_even(static_cast<long>(std::floor(2.0 * z)))) +
             c.rho * ylag + drift;
  }
  return 0.0;
}

double log_mu0_count(const CountConfig& c, int t, double ylag) {
  switch (c.form) {
    case CurveForm::Linear:
      return c.alpha0 + c.alpha1 * t + c.rho * ylag;
    case CurveForm::SimpleNonlinear:
      return c.alpha2 + c.lambda * beta22_pdf(static_cast<double>(t) / c.T) + c.rho * ylag;
    case CurveForm::Periodic:
      return c.alpha2 + c.lambda * std::sin(static_cast<double>(t)) + c.rho * ylag;
    case CurveForm::Step:
      return c.alpha2 + c.lambda * is_even(t) + c.rho * ylag;
  }
  return 0.0;
}

Eigen::MatrixXd error_cholesky(int T, double rho) {
  if (rho < 0.0 || rho >= 1.0)
    throw std::invalid_argument("gen_continuous: rho must lie in [0, 1)");
  Eigen::MatrixXd corr(T, T);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < T; ++u)
      corr(t, u) = t == u ? 1.0 : std::pow(rho, std::abs(t - u) / 2.0);
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("gen_continuous: correlation matrix not positive definite");
  return llt.matrixL();
}

PanelMeta continuous_meta() {
  PanelMeta meta;
  meta.history_names = {"z"};
  meta.moderator_names = {"one"};
  return meta;
}

PanelMeta lagged_meta() {
  PanelMeta meta;
  meta.history_names = {"z", "ylag"};
  meta.moderator_names = {"one"};
  return meta;
}

constexpr std::uint64_t kOracleSalt = 0x0daceULL;

}  // namespace

struct TruthHandle::OracleCache {
  std::mutex mutex;
  std::map<long, std::vector<Eigen::MatrixXd>> per_budget;
};

std::pair<Panel, TruthHandle> gen_continuous(const ContinuousConfig& cfg) {
  if (cfg.n < 1 || cfg.T < 1) throw std::invalid_argument("gen_continuous: need n >= 1, T >= 1");
  if (cfg.lambda2 < 0.0 || cfg.lambda3 < 0.0)
    throw std::invalid_argument("gen_continuous: variance parameters must be >= 0");
  const int T = cfg.T;
  const Eigen::MatrixXd chol = error_cholesky(T, cfg.rho);
  Eigen::VectorXd sd(T);
  for (int t = 0; t < T; ++t) sd[t] = std::sqrt(t * cfg.lambda2 + cfg.lambda3);

  std::vector<Trajectory> trajs(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    std::mt19937_64 rng(mix_seed(cfg.seed, i));
    std::uniform_real_distribution<double> unif_z(-2.0, 2.0);
    std::bernoulli_distribution bern(0.5);
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::VectorXd z(T), g(T);
    std::vector<int> a(T);
    for (int t = 0; t < T; ++t) z[t] = unif_z(rng);
    for (int t = 0; t < T; ++t) a[t] = bern(rng) ? 1 : 0;
    for (int t = 0; t < T; ++t) g[t] = norm(rng);
    const Eigen::VectorXd eps = (chol * g).cwiseProduct(sd);
    trajs[i].points.resize(T);
    for (int t = 0; t < T; ++t) {
      auto& pt = trajs[i].points[t];
      pt.avail = 1;
      pt.prob = 0.5;
      pt.treat = a[t];
      pt.outcome = a[t] * (cfg.beta0 + cfg.beta1 * z[t]) + mu0_continuous(cfg, t + 1, z[t]) + eps[t];
      pt.history = Eigen::VectorXd::Constant(1, z[t]);
      pt.moderator = Eigen::VectorXd::Ones(1);
    }
  }

  TruthHandle truth;
  truth.link = LinkKind::Identity;
  truth.beta_star = Eigen::VectorXd::Constant(1, cfg.beta0);
  truth.horizon = T;
  truth.mu_star = [cfg](int t_idx, const Eigen::VectorXd& h, int a) {
    return a * (cfg.beta0 + cfg.beta1 * h[0]) + mu0_continuous(cfg, t_idx + 1, h[0]);
  };
  truth.sampler = [cfg](int n, std::uint64_t seed) {
    ContinuousConfig c = cfg;
    c.n = n;
    c.seed = seed;
    return gen_continuous(c).first;
  };
  truth.cache = std::make_shared<TruthHandle::OracleCache>();
  return {Panel(std::move(trajs), continuous_meta()), truth};
}

std::pair<Panel, TruthHandle> gen_binary(const BinaryConfig& cfg) {
  if (cfg.n < 1 || cfg.T < 1) throw std::invalid_argument("gen_binary: need n >= 1, T >= 1");
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    throw std::invalid_argument("gen_binary: lambda must lie in [0, 1]");
  auto mean_or_throw = [&cfg](int t, double z, double ylag, int a) {
    const double mu0 = std::exp(log_mu0_binary(cfg, t, z, ylag));
    const double mu = std::exp(a * (cfg.beta0 + cfg.beta1 * z)) * mu0;
    if (!(mu > 0.0) || !(mu < 1.0)) {
      std::ostringstream os;
      os << "gen_binary: mean " << mu << " outside (0,1) at t=" << t << ", z=" << z
         << ", ylag=" << ylag << ", a=" << a << " [form=" << curve_form_name(cfg.form)
         << ", lambda=" << cfg.lambda << ", rho=" << cfg.rho << "]";
      throw std::invalid_argument(os.str());
    }
    return mu;
  };

  std::vector<Trajectory> trajs(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    std::mt19937_64 rng(mix_seed(cfg.seed, i));
    std::uniform_real_distribution<double> unif_z(-2.0, 2.0);
    std::uniform_real_distribution<double> unif01(0.0, 1.0);
    std::bernoulli_distribution bern(0.5);
    trajs[i].points.resize(cfg.T);
    double ylag = 0.0;  // empty-history convention at t = 1
    for (int t = 0; t < cfg.T; ++t) {
      const double z = unif_z(rng);
      const int a = bern(rng) ? 1 : 0;
      const double mu = mean_or_throw(t + 1, z, ylag, a);
      const double y = unif01(rng) < mu ? 1.0 : 0.0;
      auto& pt = trajs[i].points[t];
      pt.avail = 1;
      pt.prob = 0.5;
      pt.treat = a;
      pt.outcome = y;
      pt.history.resize(2);
      pt.history << z, ylag;
      pt.moderator = Eigen::VectorXd::Ones(1);
      ylag = y;
    }
  }

  TruthHandle truth;
  truth.link = LinkKind::Log;
  truth.beta_star = Eigen::VectorXd::Constant(1, cfg.beta0);
  truth.horizon = cfg.T;
  truth.mu_star = [cfg](int t_idx, const Eigen::VectorXd& h, int a) {
    return std::exp(a * (cfg.beta0 + cfg.beta1 * h[0])) *
           std::exp(log_mu0_binary(cfg, t_idx + 1, h[0], h[1]));
  };
  truth.sampler = [cfg](int n, std::uint64_t seed) {
    BinaryConfig c = cfg;
    c.n = n;
    c.seed = seed;
    return gen_binary(c).first;
  };
  truth.cache = std::make_shared<TruthHandle::OracleCache>();
  return {Panel(std::move(trajs), lagged_meta()), truth};
}

std::pair<Panel, TruthHandle> gen_count(const CountConfig& cfg) {
  if (cfg.n < 1 || cfg.T < 1) throw std::invalid_argument("gen_count: need n >= 1, T >= 1");
  if (cfg.lambda < 0.0) throw std::invalid_argument("gen_count: lambda must be >= 0");
  auto mean_or_throw = [&cfg](int t, double ylag, int a) {
    const double mu = std::exp(a * cfg.beta0) * std::exp(log_mu0_count(cfg, t, ylag));
    if (!(mu > 0.0) || !std::isfinite(mu)) {
      std::ostringstream os;
      os << "gen_count: Poisson mean " << mu << " invalid at t=" << t << ", ylag=" << ylag
         << " [form=" << curve_form_name(cfg.form) << ", lambda=" << cfg.lambda
         << ", rho=" << cfg.rho << "]";
      throw std::invalid_argument(os.str());
    }
    return mu;
  };

  std::vector<Trajectory> trajs(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    std::mt19937_64 rng(mix_seed(cfg.seed, i));
    std::uniform_real_distribution<double> unif_z(-2.0, 2.0);
    std::bernoulli_distribution bern(0.5);
    trajs[i].points.resize(cfg.T);
    double ylag = 0.0;
    for (int t = 0; t < cfg.T; ++t) {
      const double z = unif_z(rng);
      const int a = bern(rng) ? 1 : 0;
      const double mu = mean_or_throw(t + 1, ylag, a);
      std::poisson_distribution<long> pois(mu);
      const double y = static_cast<double>(pois(rng));
      auto& pt = trajs[i].points[t];
      pt.avail = 1;
      pt.prob = 0.5;
      pt.treat = a;
      pt.outcome = y;
      pt.history.resize(2);
      pt.history << z, ylag;
      pt.moderator = Eigen::VectorXd::Ones(1);
      ylag = y;
    }
  }

  TruthHandle truth;
  truth.link = LinkKind::Log;
  truth.beta_star = Eigen::VectorXd::Constant(1, cfg.beta0);
  truth.horizon = cfg.T;
  truth.mu_star = [cfg](int t_idx, const Eigen::VectorXd& h, int a) {
    return std::exp(a * cfg.beta0) * std::exp(log_mu0_count(cfg, t_idx + 1, h[1]));
  };
  truth.sampler = [cfg](int n, std::uint64_t seed) {
    CountConfig c = cfg;
    c.n = n;
    c.seed = seed;
    return gen_count(c).first;
  };
  truth.cache = std::make_shared<TruthHandle::OracleCache>();
  return {Panel(std::move(trajs), lagged_meta()), truth};
}

namespace {

std::vector<Eigen::MatrixXd> compute_oracle_weights(const TruthHandle& truth, long mc_budget) {
  const int T = truth.horizon;
  const int p = static_cast<int>(truth.beta_star.size());
  std::vector<Eigen::MatrixXd> jac_sum(T, Eigen::MatrixXd::Zero(p, p));
  std::vector<Eigen::MatrixXd> meat_sum(T, Eigen::MatrixXd::Zero(p, p));
  const long batch = 20000;
  long done = 0;
  std::uint64_t batch_idx = 0;
  while (done < mc_budget) {
    const long take = std::min(batch, mc_budget - done);
    Panel draw = truth.sampler(static_cast<int>(take), mix_seed(kOracleSalt, batch_idx++));
    for (int i = 0; i < draw.n(); ++i) {
      for (int t = 0; t < T; ++t) {
        const auto& pt = draw.at(i, t);
        const double mu1 = truth.mu_star(t, pt.history, 1);
        const double mu0 = truth.mu_star(t, pt.history, 0);
        const PhiAtom atom = phi_atom(truth.link, pt, mu1, mu0, truth.beta_star);
        jac_sum[t] += atom.jac;
        meat_sum[t] += atom.value * atom.value.transpose();
      }
    }
    done += take;
  }
  std::vector<Eigen::MatrixXd> d(T);
  for (int t = 0; t < T; ++t) {
    const Eigen::MatrixXd meat = meat_sum[t] / mc_budget;
    auto inv = floored_psd_inverse(meat);
    if (!inv) throw std::runtime_error("oracle_dstar: singular second moment at t=" +
                                       std::to_string(t + 1));
    d[t] = (jac_sum[t] / mc_budget) * (*inv);
  }
  return d;
}

}  // namespace

Eigen::MatrixXd TruthHandle::d_star(int t_idx, const Eigen::VectorXd&, long mc_budget) const {
  if (!cache) throw std::runtime_error("TruthHandle: no oracle cache attached");
  std::lock_guard<std::mutex> lock(cache->mutex);
  auto it = cache->per_budget.find(mc_budget);
  if (it == cache->per_budget.end())
    it = cache->per_budget.emplace(mc_budget, compute_oracle_weights(*this, mc_budget)).first;
  return it->second[t_idx];
}

Eigen::MatrixXd oracle_dstar(const TruthHandle& truth, int t_idx, const Eigen::VectorXd& s,
                             long mc_budget) {
  if (t_idx < 0 || t_idx >= truth.horizon)
    throw std::invalid_argument("oracle_dstar: t outside [T]");
  if (mc_budget < 1) throw std::invalid_argument("oracle_dstar: budget must be >= 1");
  return truth.d_star(t_idx, s, mc_budget);
}

}  // namespace excursionlab
