// Command-line front end over the excursionlab C API.
//
// Subcommands: simulate (generator -> CSV), estimate (CSV + method flags ->
// report JSON), bench (study config JSON -> metrics CSV + JSON), diagnose
// (cross-time Gram summary). Exit code 0 on success; failures print a
// machine-readable error JSON to stdout and exit nonzero.

#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "excursionlab.h"

using nlohmann::json;

namespace {

struct PanelGuard {
  xlab_panel* ptr = nullptr;
  ~PanelGuard() { xlab_panel_free(ptr); }
};

struct StringGuard {
  char* ptr = nullptr;
  ~StringGuard() { xlab_string_free(ptr); }
};

int fail(xlab_status status) {
  json err;
  err["error"]["status"] = xlab_status_name(status);
  err["error"]["message"] = xlab_last_error();
  std::cout << err.dump(2) << std::endl;
  return 1;
}

int fail_message(const std::string& status, const std::string& message) {
  json err;
  err["error"]["status"] = status;
  err["error"]["message"] = message;
  std::cout << err.dump(2) << std::endl;
  return 1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text << std::endl;
  } else {
    std::ofstream out(out_path);
    out << text << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"excursionlab: causal excursion effect estimation for micro-randomized trials"};
  app.require_subcommand(1);

  // --- simulate ---
  auto* sim = app.add_subcommand("simulate", "draw a panel from a generative model");
  std::string sim_outcome = "continuous", sim_form = "linear", sim_out = "panel.csv";
  int sim_n = 100, sim_T = 10;
  double l1 = 0.0, l2 = 0.0, l3 = 1.0, sim_rho = -1.0, sim_lambda = 0.8;
  std::uint64_t sim_seed = 1;
  sim->add_option("--outcome", sim_outcome, "continuous | binary | count");
  sim->add_option("--form", sim_form, "linear | nonlinear | periodic | step");
  sim->add_option("--n", sim_n, "trajectories");
  sim->add_option("--T", sim_T, "decision points");
  sim->add_option("--lambda1", l1, "nonlinearity scale (continuous)");
  sim->add_option("--lambda2", l2, "variance growth (continuous)");
  sim->add_option("--lambda3", l3, "variance level (continuous)");
  sim->add_option("--lambda", sim_lambda, "nonlinearity (binary/count)");
  sim->add_option("--rho", sim_rho, "within-subject correlation");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--out", sim_out, "output CSV path");

  // --- estimate ---
  auto* est = app.add_subcommand("estimate", "estimate the CEE from a panel CSV");
  std::string est_in, est_link = "identity", est_method = "wcls", est_nuisance = "mean";
  std::string est_dmode, est_b = "1,t", est_moderator, est_out, est_ssc = "on";
  std::vector<double> est_init;
  int est_folds = 5;
  double est_level = 0.95;
  est->add_option("--in", est_in, "panel CSV")->required();
  est->add_option("--link", est_link, "identity | log");
  est->add_option("--method", est_method, "wcls | emee | two_stage | two_stage_cf");
  est->add_option("--nuisance", est_nuisance,
                  "mean | zero | linear | spline | knn:K | tree | forest");
  est->add_option("--dmode", est_dmode, "unit | per_time | pooled | analytic");
  est->add_option("--folds", est_folds, "cross-fitting folds");
  est->add_option("--level", est_level, "confidence level");
  est->add_option("--ssc", est_ssc, "small-sample correction: on | off");
  est->add_option("--b", est_b, "control design for wcls/emee (tokens 1,t,h)");
  est->add_option("--moderator", est_moderator, "override moderator design (tokens 1,t,h)");
  est->add_option("--init", est_init, "solver starting values (default zeros)");
  est->add_option("--out", est_out, "report JSON path (default stdout)");

  // --- bench ---
  auto* bench = app.add_subcommand("bench", "run a Monte Carlo study from a config JSON");
  std::string bench_config, bench_outdir;
  bench->add_option("--config", bench_config, "study config JSON")->required();
  bench->add_option("--out-dir", bench_outdir, "directory for metrics.csv and raw.csv");

  // --- diagnose ---
  auto* diag = app.add_subcommand("diagnose", "cross-time Gram summary of the score atoms");
  std::string diag_in, diag_link = "identity", diag_nuisance = "mean", diag_out;
  diag->add_option("--in", diag_in, "panel CSV")->required();
  diag->add_option("--link", diag_link, "identity | log");
  diag->add_option("--nuisance", diag_nuisance, "nuisance regressor");
  diag->add_option("--out", diag_out, "report JSON path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      json cfg;
      cfg["type"] = sim_outcome;
      cfg["form"] = sim_form;
      cfg["n"] = sim_n;
      cfg["T"] = sim_T;
      cfg["seed"] = sim_seed;
      if (sim_outcome == "continuous") {
        cfg["lambda1"] = l1;
        cfg["lambda2"] = l2;
        cfg["lambda3"] = l3;
        if (sim_rho >= 0.0) cfg["rho"] = sim_rho;
      } else {
        cfg["lambda"] = sim_lambda;
        if (sim_rho >= 0.0) cfg["rho"] = sim_rho;
      }
      PanelGuard panel;
      if (auto st = xlab_simulate(cfg.dump().c_str(), &panel.ptr); st != XLAB_OK) return fail(st);
      if (auto st = xlab_panel_to_csv(panel.ptr, sim_out.c_str()); st != XLAB_OK) return fail(st);
      int n = 0, T = 0, p = 0;
      xlab_panel_dims(panel.ptr, &n, &T, &p);
      json ok;
      ok["written"] = sim_out;
      ok["n"] = n;
      ok["T"] = T;
      std::cout << ok.dump(2) << std::endl;
      return 0;
    }

    if (est->parsed()) {
      PanelGuard panel;
      if (auto st = xlab_panel_from_csv(est_in.c_str(), &panel.ptr); st != XLAB_OK)
        return fail(st);
      json method;
      method["name"] = est_method;
      method["link"] = est_link;
      method["nuisance"] = est_nuisance;
      if (!est_dmode.empty()) method["dmode"] = est_dmode;
      method["folds"] = est_folds;
      method["level"] = est_level;
      method["ssc"] = est_ssc != "off";
      method["b"] = est_b;
      if (!est_moderator.empty()) method["moderator"] = est_moderator;
      if (!est_init.empty()) method["init"] = est_init;
      StringGuard report;
      if (auto st = xlab_estimate(panel.ptr, method.dump().c_str(), &report.ptr); st != XLAB_OK)
        return fail(st);
      emit(report.ptr, est_out);
      return 0;
    }

    if (bench->parsed()) {
      const std::string cfg = read_file(bench_config);
      StringGuard metrics;
      if (auto st = xlab_run_study(cfg.c_str(), bench_outdir.c_str(), &metrics.ptr);
          st != XLAB_OK)
        return fail(st);
      std::cout << metrics.ptr << std::endl;
      return 0;
    }

    if (diag->parsed()) {
      PanelGuard panel;
      if (auto st = xlab_panel_from_csv(diag_in.c_str(), &panel.ptr); st != XLAB_OK)
        return fail(st);
      json method;
      method["link"] = diag_link;
      method["nuisance"] = diag_nuisance;
      StringGuard report;
      if (auto st = xlab_diagnose(panel.ptr, method.dump().c_str(), &report.ptr); st != XLAB_OK)
        return fail(st);
      emit(report.ptr, diag_out);
      return 0;
    }
  } catch (const std::exception& e) {
    return fail_message("io_error", e.what());
  }
  return fail_message("invalid_argument", "no subcommand");
}
