#include "excursionlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "excursionlab/errors.hpp"
#include "excursionlab/util.hpp"

namespace excursionlab {

using nlohmann::json;

LinkKind generator_link(const GeneratorConfig& gen) {
  return std::holds_alternative<ContinuousConfig>(gen) ? LinkKind::Identity : LinkKind::Log;
}

std::pair<Panel, TruthHandle> generate(const GeneratorConfig& gen, int n_override,
                                       std::uint64_t seed) {
  return std::visit(
      [&](auto cfg) {
        if (n_override > 0) cfg.n = n_override;
        cfg.seed = seed;
        using T = std::decay_t<decltype(cfg)>;
        if constexpr (std::is_same_v<T, ContinuousConfig>) return gen_continuous(cfg);
        else if constexpr (std::is_same_v<T, BinaryConfig>) return gen_binary(cfg);
        else return gen_count(cfg);
      },
      gen);
}

double relative_efficiency(double var_target, double var_baseline) {
  if (!(var_target > 0.0) || !(var_baseline > 0.0))
    throw std::invalid_argument("relative_efficiency: variances must be positive");
  return var_baseline / var_target;
}

namespace {

struct Slot {
  ReplicateRow row;
};

}  // namespace

std::vector<MetricsRow> run_study(const StudyConfig& config, std::vector<ReplicateRow>* raw) {
  if (config.replicates < 1) throw std::invalid_argument("run_study: replicates must be >= 1");
  if (config.settings.empty()) throw std::invalid_argument("run_study: no settings");
  if (config.methods.empty()) throw std::invalid_argument("run_study: no methods");

  const int R = config.replicates;
  const int M = static_cast<int>(config.methods.size());
  std::vector<MetricsRow> metrics;
  std::vector<ReplicateRow> all_raw;

  for (const auto& setting : config.settings) {
    // Truth handle shared across replicates so the oracle weights are
    // Monte Carlo approximated once per setting.
    auto shared_truth = std::make_shared<TruthHandle>(
        generate(setting.gen, 0, config.base_seed).second);
    const double truth_value = shared_truth->beta_star[0];

    std::vector<MethodSpec> methods = config.methods;
    for (auto& m : methods) {
      if (m.kind == MethodSpec::Kind::Oracle) {
        m.truth = shared_truth;
        m.oracle_budget = config.oracle_budget;
      }
    }
    if (std::any_of(methods.begin(), methods.end(), [](const MethodSpec& m) {
          return m.kind == MethodSpec::Kind::Oracle;
        })) {
      // warm the cache outside the worker pool
      oracle_dstar(*shared_truth, 0, Eigen::VectorXd(), config.oracle_budget);
    }

    std::vector<Slot> slots(static_cast<std::size_t>(R) * M);
    parallel_for(static_cast<std::size_t>(R), [&](std::size_t r) {
      // replicate r draws stream (base, r); methods share the identical panel
      Panel panel = generate(setting.gen, 0, config.base_seed + static_cast<std::uint64_t>(r)).first;
      for (int m = 0; m < M; ++m) {
        Slot& slot = slots[r * M + m];
        slot.row.setting = setting.id;
        slot.row.method = methods[m].name();
        slot.row.replicate = static_cast<int>(r);
        const auto start = std::chrono::steady_clock::now();
        try {
          EstimateReport rep = estimate(panel, methods[m], config.level, config.ssc);
          slot.row.ok = true;
          slot.row.beta = rep.beta[0];
          slot.row.se = rep.se[0];
          slot.row.se_corrected = rep.se_corrected[0];
          slot.row.covered = rep.ci(0, 0) <= truth_value && truth_value <= rep.ci(0, 1);
        } catch (const std::exception& e) {
          slot.row.ok = false;
          slot.row.error = e.what();
        }
        slot.row.runtime_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
      }
    });

    // aggregate per method (sequential, order-independent over replicates)
    std::vector<double> variances(M, 0.0);
    std::vector<MetricsRow> setting_rows(M);
    for (int m = 0; m < M; ++m) {
      MetricsRow row;
      row.setting = setting.id;
      row.method = methods[m].name();
      row.truth = truth_value;
      double sum = 0.0, sum_sq = 0.0, sum_se = 0.0, sum_rt = 0.0;
      long covered = 0;
      for (int r = 0; r < R; ++r) {
        const ReplicateRow& rr = slots[static_cast<std::size_t>(r) * M + m].row;
        if (!rr.ok) {
          ++row.n_fail;
          continue;
        }
        ++row.n_ok;
        sum += rr.beta;
        sum_sq += rr.beta * rr.beta;
        sum_se += config.ssc ? rr.se_corrected : rr.se;
        sum_rt += rr.runtime_ms;
        covered += rr.covered ? 1 : 0;
      }
      if (row.n_fail > config.max_failure_rate * R) {
        std::ostringstream os;
        os << "run_study: method " << row.method << " failed " << row.n_fail << "/" << R
           << " replicates in setting " << setting.id;
        const ReplicateRow* first_fail = nullptr;
        for (int r = 0; r < R && !first_fail; ++r)
          if (!slots[static_cast<std::size_t>(r) * M + m].row.ok)
            first_fail = &slots[static_cast<std::size_t>(r) * M + m].row;
        if (first_fail) os << " (first: " << first_fail->error << ")";
        throw SolveError(os.str());
      }
      if (row.n_ok > 0) {
        const double mean = sum / row.n_ok;
        row.mean_bias = mean - truth_value;
        row.mse = sum_sq / row.n_ok - 2.0 * truth_value * mean + truth_value * truth_value;
        const double var =
            row.n_ok > 1 ? (sum_sq - row.n_ok * mean * mean) / (row.n_ok - 1) : 0.0;
        row.emp_sd = std::sqrt(std::max(0.0, var));
        variances[m] = var;
        row.mean_se = sum_se / row.n_ok;
        row.coverage = static_cast<double>(covered) / row.n_ok;
        row.mean_runtime_ms = sum_rt / row.n_ok;
      }
      setting_rows[m] = row;
    }

    // default baseline: wcls for the identity link, emee for the log link
    int baseline_idx = 0;
    if (!config.baseline.empty()) {
      for (int m = 0; m < M; ++m)
        if (methods[m].name() == config.baseline) baseline_idx = m;
    } else {
      for (int m = 0; m < M; ++m)
        if (methods[m].kind == MethodSpec::Kind::Wcls ||
            methods[m].kind == MethodSpec::Kind::Emee) {
          baseline_idx = m;
          break;
        }
    }
    for (int m = 0; m < M; ++m) {
      if (variances[baseline_idx] > 0.0 && variances[m] > 0.0)
        setting_rows[m].rel_efficiency =
            relative_efficiency(variances[m], variances[baseline_idx]);
      metrics.push_back(setting_rows[m]);
    }
    for (const auto& slot : slots) all_raw.push_back(slot.row);
  }

  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    write_metrics_csv(metrics, config.output_dir + "/metrics.csv");
    write_raw_csv(all_raw, config.output_dir + "/raw.csv");
  }
  if (raw) *raw = std::move(all_raw);
  return metrics;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "setting,method,n_ok,n_fail,truth,mean_bias,mse,emp_sd,mean_se,coverage,"
         "rel_efficiency,mean_runtime_ms\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.setting << ',' << r.method << ',' << r.n_ok << ',' << r.n_fail << ',' << r.truth
        << ',' << r.mean_bias << ',' << r.mse << ',' << r.emp_sd << ',' << r.mean_se << ','
        << r.coverage << ',' << r.rel_efficiency << ',' << r.mean_runtime_ms << '\n';
}

void write_raw_csv(const std::vector<ReplicateRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "setting,method,replicate,ok,beta,se,se_corrected,covered,runtime_ms,error\n";
  out.precision(17);
  for (const auto& r : rows) {
    std::string err = r.error;
    for (auto& c : err)
      if (c == ',' || c == '\n') c = ';';
    out << r.setting << ',' << r.method << ',' << r.replicate << ',' << (r.ok ? 1 : 0) << ','
        << r.beta << ',' << r.se << ',' << r.se_corrected << ',' << (r.covered ? 1 : 0) << ','
        << r.runtime_ms << ',' << err << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON bindings

namespace {

RegressorKind parse_regressor(const json& j);

RegressorKind regressor_from_name(const std::string& name) {
  if (name == "mean") return RegressorKind::per_time_mean();
  if (name == "zero") return RegressorKind::constant(0.0);
  if (name == "linear") return RegressorKind::linear_ls();
  if (name == "spline") return RegressorKind::spline_ls();
  if (name == "knn") return RegressorKind::knn(5);
  if (name == "tree") return RegressorKind::tree();
  if (name == "forest") return RegressorKind::forest();
  throw std::invalid_argument("unknown nuisance '" + name + "'");
}

RegressorKind parse_regressor(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.rfind("constant:", 0) == 0) return RegressorKind::constant(std::stod(s.substr(9)));
    if (s.rfind("knn:", 0) == 0) return RegressorKind::knn(std::stoi(s.substr(4)));
    if (s == "stack")
      throw std::invalid_argument("stack nuisance needs an object with members");
    return regressor_from_name(s);
  }
  const std::string kind = j.at("kind").get<std::string>();
  RegressorKind k;
  if (kind == "stack") {
    std::vector<RegressorKind> members;
    for (const auto& mj : j.at("members")) members.push_back(parse_regressor(mj));
    LinkKind link = parse_link(j.value("link", std::string("identity")));
    k = RegressorKind::stack(std::move(members), link);
    return k;
  }
  if (kind == "constant") return RegressorKind::constant(j.value("value", 0.0));
  k = regressor_from_name(kind);
  if (j.contains("ridge")) k.ridge = j["ridge"].get<double>();
  if (j.contains("k")) k.k = j["k"].get<int>();
  if (j.contains("max_depth")) k.max_depth = j["max_depth"].get<int>();
  if (j.contains("min_leaf")) k.min_leaf = j["min_leaf"].get<int>();
  if (j.contains("n_trees")) k.n_trees = j["n_trees"].get<int>();
  if (j.contains("subsample")) k.subsample = j["subsample"].get<double>();
  if (j.contains("seed")) k.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("knots")) k.spline_knots = j["knots"].get<int>();
  return k;
}

DWeightMode parse_dmode(const std::string& s) {
  if (s == "unit") return DWeightMode::unit();
  if (s == "per_time") return DWeightMode::per_time();
  if (s == "pooled") return DWeightMode::pooled();
  if (s == "analytic") return DWeightMode::analytic();
  throw std::invalid_argument("unknown dmode '" + s + "' (unit, per_time, pooled, analytic)");
}

MethodSpec method_from_json(const json& j, LinkKind default_link) {
  const std::string name = j.at("name").get<std::string>();
  MethodSpec m;
  if (name == "wcls") {
    m = MethodSpec::wcls(j.value("b", std::string("1,t")));
  } else if (name == "emee") {
    m = MethodSpec::emee(j.value("b", std::string("1,t")));
  } else if (name == "two_stage" || name == "two_stage_cf") {
    LinkKind link = j.contains("link") ? parse_link(j["link"].get<std::string>()) : default_link;
    RegressorKind nuis = j.contains("nuisance") ? parse_regressor(j["nuisance"])
                                                : RegressorKind::per_time_mean();
    std::optional<DWeightMode> dmode;
    if (j.contains("dmode")) dmode = parse_dmode(j["dmode"].get<std::string>());
    if (name == "two_stage") {
      m = MethodSpec::two_stage(link, std::move(nuis), dmode);
    } else {
      m = MethodSpec::two_stage_cf(link, std::move(nuis), dmode, j.value("folds", 5),
                                   j.value("cf_seed", std::uint64_t{0}));
    }
    if (j.contains("pooled")) m.nuisance_pooled = j["pooled"].get<bool>();
  } else if (name == "oracle") {
    m.kind = MethodSpec::Kind::Oracle;
    m.link = default_link;
  } else {
    throw std::invalid_argument("unknown method '" + name + "'");
  }
  if (j.contains("tilde_prob")) m.tilde_prob = j["tilde_prob"].get<double>();
  if (j.contains("init"))
    for (const auto& v : j["init"]) m.solver_init.push_back(v.get<double>());
  m.label = j.value("label", std::string());
  return m;
}

GeneratorConfig generator_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "continuous") {
    ContinuousConfig c;
    c.n = j.value("n", c.n);
    c.T = j.value("T", c.T);
    if (j.contains("form")) c.form = parse_curve_form(j["form"].get<std::string>());
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.lambda3 = j.value("lambda3", c.lambda3);
    c.rho = j.value("rho", c.rho);
    c.seed = j.value("seed", c.seed);
    return c;
  }
  if (type == "binary") {
    BinaryConfig c;
    c.n = j.value("n", c.n);
    c.T = j.value("T", c.T);
    if (j.contains("form")) c.form = parse_curve_form(j["form"].get<std::string>());
    c.lambda = j.value("lambda", c.lambda);
    c.rho = j.value("rho", c.rho);
    c.seed = j.value("seed", c.seed);
    return c;
  }
  if (type == "count") {
    CountConfig c;
    c.n = j.value("n", c.n);
    c.T = j.value("T", c.T);
    if (j.contains("form")) c.form = parse_curve_form(j["form"].get<std::string>());
    c.lambda = j.value("lambda", c.lambda);
    c.rho = j.value("rho", c.rho);
    c.seed = j.value("seed", c.seed);
    return c;
  }
  throw std::invalid_argument("unknown generator type '" + type +
                              "' (continuous, binary, count)");
}

json parse_or_throw(const std::string& text) {
  return json::parse(text);  // throws json::parse_error on malformed input
}

}  // namespace

GeneratorConfig parse_generator_config(const std::string& json_text) {
  return generator_from_json(parse_or_throw(json_text));
}

MethodSpec parse_method_config(const std::string& json_text, LinkKind default_link) {
  return method_from_json(parse_or_throw(json_text), default_link);
}

StudyConfig parse_study_config(const std::string& json_text) {
  const json j = parse_or_throw(json_text);
  StudyConfig cfg;
  const GeneratorConfig base_gen = generator_from_json(j.at("generator"));
  const LinkKind link = generator_link(base_gen);

  if (j.contains("sweep")) {
    const auto& sweep = j["sweep"];
    const std::string param = sweep.at("param").get<std::string>();
    for (const auto& vj : sweep.at("values")) {
      const double v = vj.get<double>();
      GeneratorConfig gen = base_gen;
      std::visit(
          [&](auto& c) {
            using T = std::decay_t<decltype(c)>;
            if (param == "n") {
              c.n = static_cast<int>(v);
            } else if constexpr (std::is_same_v<T, ContinuousConfig>) {
              if (param == "lambda1") c.lambda1 = v;
              else if (param == "lambda2") c.lambda2 = v;
              else if (param == "lambda3") c.lambda3 = v;
              else if (param == "rho") c.rho = v;
              else throw std::invalid_argument("unknown sweep param '" + param + "'");
            } else {
              if (param == "lambda") c.lambda = v;
              else if (param == "rho") c.rho = v;
              else throw std::invalid_argument("unknown sweep param '" + param + "'");
            }
          },
          gen);
      std::ostringstream id;
      id << param << "=" << v;
      cfg.settings.push_back({id.str(), gen});
    }
  } else {
    cfg.settings.push_back({"base", base_gen});
  }

  for (const auto& mj : j.at("methods")) cfg.methods.push_back(method_from_json(mj, link));
  cfg.replicates = j.value("replicates", 1);
  cfg.base_seed = j.value("base_seed", std::uint64_t{1});
  cfg.level = j.value("level", 0.95);
  cfg.ssc = j.value("ssc", true);
  cfg.baseline = j.value("baseline", std::string());
  cfg.output_dir = j.value("output_dir", std::string());
  cfg.oracle_budget = j.value("oracle_budget", 1000000L);
  cfg.max_failure_rate = j.value("max_failure_rate", 0.02);
  return cfg;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace

std::string report_to_json(const EstimateReport& report, const Panel& panel) {
  json j;
  j["method"] = report.method;
  j["n"] = panel.n();
  j["T"] = panel.horizon();
  j["p"] = panel.moderator_dim();
  j["level"] = report.level;
  j["beta"] = vector_to_json(report.beta);
  j["se"] = vector_to_json(report.se);
  j["se_corrected"] = vector_to_json(report.se_corrected);
  j["ci"] = matrix_to_json(report.ci);
  j["sigma"] = matrix_to_json(report.sigma);
  j["sigma_corrected"] = matrix_to_json(report.sigma_corrected);
  if (report.beta_init.size() > 0) j["beta_init"] = vector_to_json(report.beta_init);
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["ssc_applied"] = report.ssc_applied;
  j["warnings"] = report.warnings;
  return j.dump(2);
}

std::string metrics_to_json(const std::vector<MetricsRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["setting"] = r.setting;
    j["method"] = r.method;
    j["n_ok"] = r.n_ok;
    j["n_fail"] = r.n_fail;
    j["truth"] = r.truth;
    j["mean_bias"] = r.mean_bias;
    j["mse"] = r.mse;
    j["emp_sd"] = r.emp_sd;
    j["mean_se"] = r.mean_se;
    j["coverage"] = r.coverage;
    j["rel_efficiency"] = r.rel_efficiency;
    j["mean_runtime_ms"] = r.mean_runtime_ms;
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace excursionlab
