#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "excursionlab/bench.hpp"
#include "excursionlab/csv_io.hpp"
#include "excursionlab/errors.hpp"
#include "support.hpp"

using namespace excursionlab;
using namespace testsupport;

TEST_CASE("relative efficiency") {
  CHECK(relative_efficiency(0.5, 1.0) == doctest::Approx(2.0));
  CHECK(relative_efficiency(0.7, 0.7) == doctest::Approx(1.0));
  CHECK_THROWS(relative_efficiency(0.0, 1.0));
  CHECK_THROWS(relative_efficiency(1.0, -2.0));
}

TEST_CASE("panel csv: load a well-formed file") {
  std::istringstream in(
      "id,t,avail,prob,treat,outcome,h_z,f_one\n"
      "1,1,1,0.5,1,2.5,0.1,1\n"
      "1,2,1,0.5,0,1.5,0.2,1\n"
      "1,3,1,0.5,0,0.5,0.3,1\n"
      "2,1,1,0.4,1,2.0,-0.1,1\n"
      "2,2,1,0.4,0,1.0,-0.2,1\n"
      "2,3,0,0.4,0,0.0,-0.3,1\n");
  const Panel panel = load_panel_csv(in);
  CHECK(panel.n() == 2);
  CHECK(panel.horizon() == 3);
  CHECK(panel.at(1, 0).prob == 0.4);
  CHECK(panel.at(0, 2).history[0] == 0.3);
  CHECK(panel.meta().history_names[0] == "z");
}

TEST_CASE("panel csv: missing required column is named") {
  std::istringstream in("id,t,avail,treat,outcome,f_one\n1,1,1,0,1.0,1\n");
  try {
    load_panel_csv(in);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("prob") != std::string::npos);
  }
}

TEST_CASE("panel csv: ragged decision points are rejected") {
  std::istringstream in(
      "id,t,avail,prob,treat,outcome,f_one\n"
      "1,1,1,0.5,0,1.0,1\n"
      "1,3,1,0.5,0,1.0,1\n");
  CHECK_THROWS_AS(load_panel_csv(in), IoError);
}

TEST_CASE("panel csv round trip is bit exact") {
  ContinuousConfig cfg;
  cfg.n = 17;
  cfg.seed = 555;
  const Panel panel = gen_continuous(cfg).first;
  std::stringstream buffer;
  write_panel_csv(panel, buffer);
  const Panel reload = load_panel_csv(buffer);
  REQUIRE(reload.n() == panel.n());
  REQUIRE(reload.horizon() == panel.horizon());
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < panel.horizon(); ++t) {
      CHECK(reload.at(i, t).outcome == panel.at(i, t).outcome);
      CHECK(reload.at(i, t).prob == panel.at(i, t).prob);
      CHECK(reload.at(i, t).history[0] == panel.at(i, t).history[0]);
      CHECK(reload.at(i, t).moderator[0] == panel.at(i, t).moderator[0]);
      CHECK(reload.at(i, t).treat == panel.at(i, t).treat);
      CHECK(reload.at(i, t).avail == panel.at(i, t).avail);
    }
}

namespace {

StudyConfig tiny_study(int replicates) {
  StudyConfig cfg;
  ContinuousConfig gen;
  gen.n = 40;
  cfg.settings.push_back({"base", gen});
  auto wcls = MethodSpec::wcls("1,t");
  auto ts = MethodSpec::two_stage(LinkKind::Identity, RegressorKind::per_time_mean());
  cfg.methods = {wcls, ts};
  cfg.replicates = replicates;
  cfg.base_seed = 12345;
  cfg.baseline = "wcls";
  return cfg;
}

}  // namespace

TEST_CASE("single replicate: coverage is zero or one and raw rows line up") {
  std::vector<ReplicateRow> raw;
  const auto metrics = run_study(tiny_study(1), &raw);
  REQUIRE(metrics.size() == 2);
  for (const auto& m : metrics) CHECK((m.coverage == 0.0 || m.coverage == 1.0));
  CHECK(raw.size() == 2);  // one per method
}

TEST_CASE("two replicates produce exactly two raw rows per method") {
  std::vector<ReplicateRow> raw;
  run_study(tiny_study(2), &raw);
  int wcls_rows = 0, ts_rows = 0;
  for (const auto& r : raw) {
    if (r.method == "wcls") ++wcls_rows;
    else ++ts_rows;
  }
  CHECK(wcls_rows == 2);
  CHECK(ts_rows == 2);
}

TEST_CASE("baseline relative efficiency is exactly one") {
  const auto metrics = run_study(tiny_study(8));
  for (const auto& m : metrics)
    if (m.method == "wcls") CHECK(m.rel_efficiency == 1.0);
}

TEST_CASE("methods see bitwise-identical panels within a replicate") {
  // two copies of the same method must give identical estimates
  StudyConfig cfg = tiny_study(3);
  auto again = MethodSpec::wcls("1,t");
  again.label = "wcls#2";
  cfg.methods = {MethodSpec::wcls("1,t"), again};
  std::vector<ReplicateRow> raw;
  run_study(cfg, &raw);
  std::map<int, std::vector<double>> by_rep;
  for (const auto& r : raw) by_rep[r.replicate].push_back(r.beta);
  for (const auto& [rep, betas] : by_rep) {
    REQUIRE(betas.size() == 2);
    CHECK(betas[0] == betas[1]);
  }
}

TEST_CASE("replicate seeds are independent streams") {
  // replicate r of a study equals replicate 0 of a study based at base + r
  std::vector<ReplicateRow> raw_a, raw_b;
  run_study(tiny_study(3), &raw_a);
  StudyConfig shifted = tiny_study(1);
  shifted.base_seed = 12345 + 2;
  run_study(shifted, &raw_b);
  double beta_a = 0.0, beta_b = 0.0;
  for (const auto& r : raw_a)
    if (r.method == "wcls" && r.replicate == 2) beta_a = r.beta;
  for (const auto& r : raw_b)
    if (r.method == "wcls") beta_b = r.beta;
  CHECK(beta_a == beta_b);
}

TEST_CASE("study runs are reproducible under the worker pool") {
  const auto a = run_study(tiny_study(6));
  const auto b = run_study(tiny_study(6));
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].mse == b[k].mse);
    CHECK(a[k].coverage == b[k].coverage);
  }
}

TEST_CASE("study config json with a sweep") {
  const std::string text = R"({
    "generator": {"type": "continuous", "form": "periodic", "n": 50, "lambda3": 1.0, "rho": 0.5},
    "sweep": {"param": "lambda1", "values": [0, 1, 2]},
    "methods": [{"name": "wcls", "b": "1,t"},
                {"name": "two_stage", "nuisance": "spline", "dmode": "per_time"}],
    "replicates": 4, "base_seed": 99, "baseline": "wcls"
  })";
  const StudyConfig cfg = parse_study_config(text);
  REQUIRE(cfg.settings.size() == 3);
  CHECK(cfg.settings[1].id == "lambda1=1");
  CHECK(cfg.methods.size() == 2);
  CHECK(cfg.replicates == 4);
  const auto metrics = run_study(cfg);
  CHECK(metrics.size() == 6);  // 3 settings x 2 methods
}

TEST_CASE("metrics and raw csv files are written") {
  const auto dir = std::filesystem::temp_directory_path() / "xlab_bench_test";
  std::filesystem::remove_all(dir);
  StudyConfig cfg = tiny_study(2);
  cfg.output_dir = dir.string();
  run_study(cfg);
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "raw.csv"));
  std::ifstream metrics(dir / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  CHECK(header.find("rel_efficiency") != std::string::npos);
  std::filesystem::remove_all(dir);
}
