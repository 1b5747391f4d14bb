#include "excursionlab/estimators.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "excursionlab/errors.hpp"

namespace excursionlab {

MethodSpec MethodSpec::wcls(std::string b) {
  MethodSpec m;
  m.kind = Kind::Wcls;
  m.link = LinkKind::Identity;
  m.b_formula = std::move(b);
  return m;
}

MethodSpec MethodSpec::emee(std::string b) {
  MethodSpec m;
  m.kind = Kind::Emee;
  m.link = LinkKind::Log;
  m.b_formula = std::move(b);
  return m;
}

MethodSpec MethodSpec::two_stage(LinkKind link, RegressorKind nuis,
                                 std::optional<DWeightMode> dmode) {
  MethodSpec m;
  m.kind = Kind::TwoStage;
  m.link = link;
  // the per-time mean is t-specific by construction; ML learners pool
  // across t with t/T as a feature
  m.nuisance_pooled = nuis.family != RegressorKind::Family::PerTimeMean;
  m.nuisance = std::move(nuis);
  m.dmode = dmode;
  return m;
}

MethodSpec MethodSpec::two_stage_cf(LinkKind link, RegressorKind nuis,
                                    std::optional<DWeightMode> dmode, int folds,
                                    std::uint64_t seed) {
  MethodSpec m = two_stage(link, std::move(nuis), dmode);
  m.kind = Kind::TwoStageCF;
  m.folds = folds;
  m.cf_seed = seed;
  return m;
}

MethodSpec MethodSpec::oracle(std::shared_ptr<const TruthHandle> truth, long budget) {
  MethodSpec m;
  m.kind = Kind::Oracle;
  m.truth = std::move(truth);
  m.link = m.truth->link;
  m.oracle_budget = budget;
  return m;
}

std::string MethodSpec::name() const {
  if (!label.empty()) return label;
  switch (kind) {
    case Kind::Wcls: return "wcls";
    case Kind::Emee: return "emee";
    case Kind::TwoStage: return "two_stage(" + nuisance.name() + ")";
    case Kind::TwoStageCF: return "two_stage_cf(" + nuisance.name() + ")";
    case Kind::Oracle: return "oracle";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// CeeSystem

namespace {

struct CeeEta {
  Eigen::MatrixXd mu1, mu0;            // n x T predictions
  std::vector<Eigen::MatrixXd> d;      // (i * T + t) -> p x p weight
  Eigen::VectorXd beta_init;
  std::vector<std::string> warnings;
};

// Newton for the unweighted Step-2 system over the training subset only.
Eigen::VectorXd solve_beta_init(const Panel& panel, LinkKind link, const CeeEta& eta,
                                std::span<const int> subset) {
  const int p = panel.moderator_dim();
  const int T = panel.horizon();
  auto assemble = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& f, Eigen::MatrixXd& jac) {
    f.setZero();
    jac.setZero();
    for (int i : subset) {
      for (int t = 0; t < T; ++t) {
        const PhiAtom atom = phi_atom(link, panel.at(i, t), eta.mu1(i, t), eta.mu0(i, t), beta);
        f += atom.value;
        jac += atom.jac;
      }
    }
    f /= static_cast<double>(subset.size());
    jac /= static_cast<double>(subset.size());
  };
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd f(p);
  Eigen::MatrixXd jac(p, p);
  assemble(beta, f, jac);
  double merit = f.lpNorm<Eigen::Infinity>();
  for (int iter = 0; iter < 100 && merit > 1e-10; ++iter) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    Eigen::VectorXd step = lu.solve(-f);
    if (!step.allFinite() || lu.rcond() < 1e-14)
      throw SolveError("initial-step solve: singular jacobian");
    bool accepted = false;
    double scale = 1.0;
    for (int h = 0; h <= 30; ++h, scale *= 0.5) {
      Eigen::VectorXd cand = beta + scale * step;
      Eigen::VectorXd fc(p);
      Eigen::MatrixXd jc(p, p);
      assemble(cand, fc, jc);
      if (!fc.allFinite() || !jc.allFinite()) continue;
      const double mc = fc.lpNorm<Eigen::Infinity>();
      if (mc < merit || mc <= 1e-10) {
        beta = cand;
        f = fc;
        jac = jc;
        merit = mc;
        accepted = true;
        break;
      }
    }
    if (!accepted) throw SolveError("initial-step solve: step-halving stalled");
  }
  if (merit > 1e-8) throw SolveError("initial-step solve did not converge");
  return beta;
}

}  // namespace

CeeSystem::CeeSystem(const Panel& panel, LinkKind link)
    : panel_(panel), link_(link), p_(panel.moderator_dim()) {}

CeeSystem::CeeSystem(const Panel& panel, LinkKind link, RegressorKind nuis, bool pooled,
                     DWeightMode dmode)
    : CeeSystem(panel, link) {
  pipeline_ = true;
  nuis_ = std::move(nuis);
  pooled_ = pooled;
  dmode_ = dmode;
}

std::unique_ptr<CeeSystem> CeeSystem::fixed(const Panel& panel, LinkKind link, MuFn mu, DFn d) {
  std::unique_ptr<CeeSystem> sys(new CeeSystem(panel, link));
  sys->pipeline_ = false;
  sys->fixed_mu_ = std::move(mu);
  sys->fixed_d_ = std::move(d);
  return sys;
}

int CeeSystem::param_dim() const { return p_; }
int CeeSystem::unit_count() const { return panel_.n(); }

std::shared_ptr<const void> CeeSystem::fit(std::span<const int> subset) const {
  const int n = panel_.n();
  const int T = panel_.horizon();
  auto eta = std::make_shared<CeeEta>();
  eta->mu1.resize(n, T);
  eta->mu0.resize(n, T);
  eta->d.resize(static_cast<std::size_t>(n) * T);

  if (!pipeline_) {
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < T; ++t) {
        eta->mu1(i, t) = fixed_mu_(i, t, 1);
        eta->mu0(i, t) = fixed_mu_(i, t, 0);
        eta->d[static_cast<std::size_t>(i) * T + t] = fixed_d_(i, t);
      }
    return eta;
  }

  // Steps 1-3: nuisance fit, initial solve, weight fit, all on the subset.
  NuisanceFit nf = fit_nuisance(panel_, nuis_, pooled_, subset);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t) {
      const auto& pt = panel_.at(i, t);
      eta->mu1(i, t) = nf.predict(t, pt.history, 1);
      eta->mu0(i, t) = nf.predict(t, pt.history, 0);
    }
  eta->beta_init = solve_beta_init(panel_, link_, *eta, subset);
  DWeightFit dfit = fit_dweights(panel_, nf, eta->beta_init, link_, dmode_, subset);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t)
      eta->d[static_cast<std::size_t>(i) * T + t] = dfit.eval(t, panel_.at(i, t).moderator);
  eta->warnings = nf.warnings();
  eta->warnings.insert(eta->warnings.end(), dfit.warnings().begin(), dfit.warnings().end());
  return eta;
}

void CeeSystem::evaluate(const void* eta_ptr, int unit, const Eigen::VectorXd& theta,
                         Eigen::VectorXd& m, Eigen::MatrixXd& dm) const {
  const auto& eta = *static_cast<const CeeEta*>(eta_ptr);
  const int T = panel_.horizon();
  m = Eigen::VectorXd::Zero(p_);
  dm = Eigen::MatrixXd::Zero(p_, p_);
  for (int t = 0; t < T; ++t) {
    const PhiAtom atom =
        phi_atom(link_, panel_.at(unit, t), eta.mu1(unit, t), eta.mu0(unit, t), theta);
    const auto& d = eta.d[static_cast<std::size_t>(unit) * T + t];
    m.noalias() += d * atom.value;
    dm.noalias() += d * atom.jac;
  }
}

void CeeSystem::correction_rows(const void* eta_ptr, int unit, const Eigen::VectorXd& beta,
                                Eigen::MatrixXd& D, Eigen::VectorXd& r,
                                Eigen::MatrixXd& dr) const {
  const auto& eta = *static_cast<const CeeEta*>(eta_ptr);
  const int T = panel_.horizon();
  D.resize(T, p_);
  r.resize(T);
  dr.resize(T, p_);
  for (int t = 0; t < T; ++t) {
    const auto& pt = panel_.at(unit, t);
    const PhiAtom atom = phi_atom(link_, pt, eta.mu1(unit, t), eta.mu0(unit, t), beta);
    const auto& d = eta.d[static_cast<std::size_t>(unit) * T + t];
    D.row(t) = (d * atom.dvec).transpose();
    r[t] = atom.resid * (pt.avail == 1 ? 1.0 : 0.0);
    dr.row(t) = (pt.avail == 1 ? atom.jac_scale : 0.0) * pt.moderator.transpose();
  }
}

Eigen::VectorXd CeeSystem::beta_init_of(const void* eta_ptr) const {
  return static_cast<const CeeEta*>(eta_ptr)->beta_init;
}

const std::vector<std::string>& CeeSystem::eta_warnings(const void* eta_ptr) const {
  return static_cast<const CeeEta*>(eta_ptr)->warnings;
}

// ---------------------------------------------------------------------------
// WCLS / EMEE joint system

namespace {
struct BaselineEta {
  double ptilde = 0.5;
};
}  // namespace

JointBaselineSystem::JointBaselineSystem(const Panel& panel, const CeeSpec& spec,
                                         std::string b_formula)
    : panel_(panel), spec_(spec), b_formula_(std::move(b_formula)) {
  b_dim_ = design_dim(b_formula_, panel.history_dim());
  spec_.p = panel.moderator_dim();
}

int JointBaselineSystem::param_dim() const { return b_dim_ + spec_.p; }
int JointBaselineSystem::unit_count() const { return panel_.n(); }

std::shared_ptr<const void> JointBaselineSystem::fit(std::span<const int> subset) const {
  auto eta = std::make_shared<BaselineEta>();
  if (spec_.tilde_prob) {
    eta->ptilde = *spec_.tilde_prob;
  } else {
    double sum = 0.0;
    long count = 0;
    for (int i : subset)
      for (int t = 0; t < panel_.horizon(); ++t)
        if (panel_.at(i, t).avail == 1) {
          sum += panel_.at(i, t).prob;
          ++count;
        }
    if (count == 0) throw SolveError("wcls/emee: no available decision points");
    eta->ptilde = sum / count;
  }
  return eta;
}

double JointBaselineSystem::tilde_prob(const void* eta) const {
  return static_cast<const BaselineEta*>(eta)->ptilde;
}

void JointBaselineSystem::evaluate(const void* eta_ptr, int unit, const Eigen::VectorXd& theta,
                                   Eigen::VectorXd& m, Eigen::MatrixXd& dm) const {
  const auto& eta = *static_cast<const BaselineEta*>(eta_ptr);
  const int q = param_dim();
  const int T = panel_.horizon();
  CeeSpec spec = spec_;
  spec.tilde_prob = eta.ptilde;
  const Eigen::VectorXd alpha = theta.head(b_dim_);
  const Eigen::VectorXd beta = theta.tail(spec_.p);
  m = Eigen::VectorXd::Zero(q);
  dm = Eigen::MatrixXd::Zero(q, q);
  for (int t = 0; t < T; ++t) {
    const auto& pt = panel_.at(unit, t);
    const Eigen::VectorXd b_t = eval_design(b_formula_, t, T, pt.history);
    const JointAtom atom = spec_.link == LinkKind::Identity
                               ? wcls_atom(pt, spec, alpha, beta, b_t)
                               : emee_atom(pt, spec, alpha, beta, b_t);
    m += atom.value;
    dm += atom.jac;
  }
}

void JointBaselineSystem::correction_rows(const void* eta_ptr, int unit,
                                          const Eigen::VectorXd& theta, Eigen::MatrixXd& D,
                                          Eigen::VectorXd& r, Eigen::MatrixXd& dr) const {
  const auto& eta = *static_cast<const BaselineEta*>(eta_ptr);
  const int q = param_dim();
  const int T = panel_.horizon();
  CeeSpec spec = spec_;
  spec.tilde_prob = eta.ptilde;
  const Eigen::VectorXd alpha = theta.head(b_dim_);
  const Eigen::VectorXd beta = theta.tail(spec_.p);
  D.resize(T, q);
  r.resize(T);
  dr.resize(T, q);
  for (int t = 0; t < T; ++t) {
    const auto& pt = panel_.at(unit, t);
    const Eigen::VectorXd b_t = eval_design(b_formula_, t, T, pt.history);
    const JointAtom atom = spec_.link == LinkKind::Identity
                               ? wcls_atom(pt, spec, alpha, beta, b_t)
                               : emee_atom(pt, spec, alpha, beta, b_t);
    D.row(t) = atom.drow.transpose();
    r[t] = atom.resid;
    dr.row(t) = atom.dresid;
  }
}

// ---------------------------------------------------------------------------
// estimate()

namespace {

struct SolvedSystem {
  ZFit zfit;
  int q = 0;
  int beta_offset = 0;  // position of the beta block inside theta
};

CorrectionInputs assemble_correction(const EstimatingSystem& sys, const ZFit& zfit,
                                     const std::function<void(const void*, int, Eigen::MatrixXd&,
                                                              Eigen::VectorXd&, Eigen::MatrixXd&)>&
                                         rows) {
  const int n = sys.unit_count();
  CorrectionInputs inputs;
  inputs.D.resize(n);
  inputs.r.resize(n);
  inputs.dr.resize(n);
  inputs.bread = zfit.bread;
  inputs.unit_weight = zfit.unit_weight;  // empty for the plain solve
  for (int i = 0; i < n; ++i) {
    const void* eta = zfit.fold_of.empty() ? zfit.eta.get() : zfit.etas[zfit.fold_of[i]].get();
    rows(eta, i, inputs.D[i], inputs.r[i], inputs.dr[i]);
  }
  return inputs;
}

void finalize_report(EstimateReport& report, const SolvedSystem& solved, int n, bool ssc,
                     const CorrectionInputs* correction) {
  const int p = static_cast<int>(report.beta.size());
  const auto& zfit = solved.zfit;
  report.iterations = zfit.iterations;
  report.converged = zfit.converged;
  report.warnings.insert(report.warnings.end(), zfit.warnings.begin(), zfit.warnings.end());
  report.sigma = zfit.cov.block(solved.beta_offset, solved.beta_offset, p, p);
  report.sigma_corrected = report.sigma;
  report.ssc_applied = false;
  if (ssc && correction) {
    try {
      CorrectionResult corr = small_sample_correct(*correction);
      report.warnings.insert(report.warnings.end(), corr.warnings.begin(), corr.warnings.end());
      if (corr.applied) {
        report.sigma_corrected = corr.sigma.block(solved.beta_offset, solved.beta_offset, p, p);
        report.ssc_applied = true;
      }
    } catch (const std::exception& e) {
      report.warnings.push_back(std::string("small-sample correction failed: ") + e.what());
    }
  }
  report.se = report.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
  report.se_corrected = report.sigma_corrected.diagonal().cwiseMax(0.0).cwiseSqrt();
  const CiSpec ci_spec = CiSpec::choose(report.level, n, solved.q);
  report.ci = confidence_interval(
      report.beta, report.ssc_applied ? report.sigma_corrected : report.sigma, ci_spec);
}

}  // namespace

EstimateReport estimate(const Panel& panel, const MethodSpec& method, double level, bool ssc) {
  if (method.kind == MethodSpec::Kind::Wcls && method.link != LinkKind::Identity)
    throw std::invalid_argument("wcls requires the identity link");
  if (method.kind == MethodSpec::Kind::Emee && method.link != LinkKind::Log)
    throw std::invalid_argument("emee requires the log link");
  if (!(level > 0.0) || !(level < 1.0))
    throw std::invalid_argument("confidence level must lie in (0,1)");
  const ValidationReport validation = validate_panel(panel, method.link);
  if (!validation.ok())
    throw ValidationError("panel failed validation:\n" + validation.to_string());

  const int p = panel.moderator_dim();
  const int n = panel.n();
  EstimateReport report;
  report.level = level;
  report.method = method.name();

  const bool joint =
      method.kind == MethodSpec::Kind::Wcls || method.kind == MethodSpec::Kind::Emee;

  auto solve_options = [&](int q) {
    SolveOptions opts;
    if (!method.solver_init.empty()) {
      if (static_cast<int>(method.solver_init.size()) != q)
        throw std::invalid_argument("solver init has length " +
                                    std::to_string(method.solver_init.size()) + ", expected " +
                                    std::to_string(q));
      opts.theta0 = Eigen::Map<const Eigen::VectorXd>(method.solver_init.data(), q);
    }
    return opts;
  };

  if (joint) {
    CeeSpec spec{method.link, p, method.tilde_prob};
    JointBaselineSystem system(panel, spec, method.b_formula);
    SolvedSystem solved;
    solved.zfit = solve_z(system, solve_options(system.param_dim()));
    solved.q = system.param_dim();
    solved.beta_offset = system.beta_offset();
    if (!solved.zfit.converged)
      throw SolveError(method.name() + " did not converge after " +
                       std::to_string(solved.zfit.iterations) + " iterations");
    report.beta = solved.zfit.theta.tail(p);
    CorrectionInputs inputs = assemble_correction(
        system, solved.zfit,
        [&](const void* eta, int i, Eigen::MatrixXd& D, Eigen::VectorXd& r, Eigen::MatrixXd& dr) {
          system.correction_rows(eta, i, solved.zfit.theta, D, r, dr);
        });
    finalize_report(report, solved, n, ssc, &inputs);
    return report;
  }

  std::unique_ptr<CeeSystem> system;
  if (method.kind == MethodSpec::Kind::Oracle) {
    if (!method.truth) throw std::invalid_argument("oracle method requires a truth handle");
    const TruthHandle& truth = *method.truth;
    if (truth.link != method.link)
      throw std::invalid_argument("oracle truth handle link mismatch");
    // per-t optimal weights, Monte Carlo approximated once and shared
    std::vector<Eigen::MatrixXd> dstar(panel.horizon());
    for (int t = 0; t < panel.horizon(); ++t)
      dstar[t] = oracle_dstar(truth, t, Eigen::VectorXd(), method.oracle_budget);
    auto mu = [&panel, &truth](int i, int t, int a) {
      return truth.mu_star(t, panel.at(i, t).history, a);
    };
    auto d = [dstar = std::move(dstar)](int, int t) { return dstar[t]; };
    system = CeeSystem::fixed(panel, method.link, mu, d);
  } else {
    const DWeightMode dmode = method.dmode ? *method.dmode : default_dmode(method.link);
    system = std::make_unique<CeeSystem>(panel, method.link, method.nuisance,
                                         method.nuisance_pooled, dmode);
  }

  SolvedSystem solved;
  if (method.kind == MethodSpec::Kind::TwoStageCF) {
    solved.zfit = crossfit_solve(*system, method.folds, method.cf_seed, solve_options(p));
    report.warnings.push_back("cross-fitted small-sample correction is fold-local (experimental)");
  } else {
    solved.zfit = solve_z(*system, solve_options(p));
  }
  solved.q = p;
  solved.beta_offset = 0;
  if (!solved.zfit.converged)
    throw SolveError(method.name() + " did not converge after " +
                     std::to_string(solved.zfit.iterations) + " iterations");
  report.beta = solved.zfit.theta;
  if (method.kind == MethodSpec::Kind::TwoStage)
    report.beta_init = system->beta_init_of(solved.zfit.eta.get());
  for (const auto& eta : solved.zfit.etas) {
    const auto& w = system->eta_warnings(eta.get());
    report.warnings.insert(report.warnings.end(), w.begin(), w.end());
  }
  if (solved.zfit.eta && method.kind != MethodSpec::Kind::Oracle) {
    const auto& w = system->eta_warnings(solved.zfit.eta.get());
    report.warnings.insert(report.warnings.end(), w.begin(), w.end());
  }
  CorrectionInputs inputs = assemble_correction(
      *system, solved.zfit,
      [&](const void* eta, int i, Eigen::MatrixXd& D, Eigen::VectorXd& r, Eigen::MatrixXd& dr) {
        system->correction_rows(eta, i, solved.zfit.theta, D, r, dr);
      });
  finalize_report(report, solved, n, ssc, &inputs);
  return report;
}

Eigen::MatrixXd diagnose_wa2(const Panel& panel, const Eigen::VectorXd& beta,
                             const NuisanceFit& nuisance, LinkKind link) {
  const int T = panel.horizon();
  const int p = panel.moderator_dim();
  const int n = panel.n();
  std::vector<std::vector<Eigen::VectorXd>> phi(n, std::vector<Eigen::VectorXd>(T));
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t) {
      const auto& pt = panel.at(i, t);
      phi[i][t] = phi_atom(link, pt, nuisance.predict(t, pt.history, 1),
                           nuisance.predict(t, pt.history, 0), beta)
                      .value;
    }
  Eigen::MatrixXd norms(T, T);
  for (int t = 0; t < T; ++t)
    for (int u = t; u < T; ++u) {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
      for (int i = 0; i < n; ++i) g += phi[i][t] * phi[i][u].transpose();
      g /= n;
      norms(t, u) = norms(u, t) = g.norm();
    }
  Eigen::MatrixXd out(T, T);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < T; ++u) {
      const double denom = std::sqrt(norms(t, t) * norms(u, u));
      out(t, u) = denom > 0.0 ? norms(t, u) / denom : 0.0;
    }
  return out;
}

}  // namespace excursionlab
