#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "excursionlab/estimators.hpp"
#include "excursionlab/simgen.hpp"

namespace excursionlab {

using GeneratorConfig = std::variant<ContinuousConfig, BinaryConfig, CountConfig>;

LinkKind generator_link(const GeneratorConfig& gen);
std::pair<Panel, TruthHandle> generate(const GeneratorConfig& gen, int n_override,
                                       std::uint64_t seed);

// One sweep cell: a generator configuration under a human-readable id.
struct StudySetting {
  std::string id;
  GeneratorConfig gen;
};

struct StudyConfig {
  std::vector<StudySetting> settings;
  std::vector<MethodSpec> methods;
  int replicates = 1;
  std::uint64_t base_seed = 1;
  double level = 0.95;
  bool ssc = true;
  std::string baseline;        // method label for relative efficiency
  std::string output_dir;      // empty: no files written
  long oracle_budget = 1000000;
  double max_failure_rate = 0.02;
};

// Per-replicate raw record (coordinate 0 of beta).
struct ReplicateRow {
  std::string setting, method;
  int replicate = 0;
  bool ok = false;
  double beta = 0.0, se = 0.0, se_corrected = 0.0;
  bool covered = false;
  double runtime_ms = 0.0;
  std::string error;
};

struct MetricsRow {
  std::string setting, method;
  int n_ok = 0, n_fail = 0;
  double truth = 0.0;
  double mean_bias = 0.0;
  double mse = 0.0;
  double emp_sd = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
  double rel_efficiency = 1.0;   // baseline variance / this variance
  double mean_runtime_ms = 0.0;
};

// var_baseline / var_target: > 1 means the target is the more efficient.
double relative_efficiency(double var_target, double var_baseline);

// Runs every method on identical per-replicate panels (seed = base +
// replicate index), aggregates the metrics, and optionally returns the raw
// rows. Replicates run on a worker pool (EXCURSIONLAB_THREADS caps it),
// each single-threaded end-to-end. Failures are recorded and excluded from
// aggregation; exceeding max_failure_rate aborts the study.
std::vector<MetricsRow> run_study(const StudyConfig& config,
                                  std::vector<ReplicateRow>* raw = nullptr);

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
void write_raw_csv(const std::vector<ReplicateRow>& rows, const std::string& path);

// JSON bindings for configs and reports (schemas documented in README).
StudyConfig parse_study_config(const std::string& json_text);
GeneratorConfig parse_generator_config(const std::string& json_text);
MethodSpec parse_method_config(const std::string& json_text, LinkKind default_link);
std::string report_to_json(const EstimateReport& report, const Panel& panel);
std::string metrics_to_json(const std::vector<MetricsRow>& rows);

}  // namespace excursionlab
