#include "excursionlab.h"

#include <cstdlib>
#include <cstring>
#include <json.hpp>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "excursionlab/bench.hpp"
#include "excursionlab/csv_io.hpp"
#include "excursionlab/errors.hpp"
#include "excursionlab/estimators.hpp"
#include "excursionlab/panel.hpp"

using nlohmann::json;

struct xlab_panel {
  excursionlab::Panel panel;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
xlab_status guarded(Fn&& fn) {
  try {
    fn();
    return XLAB_OK;
  } catch (const excursionlab::ValidationError& e) {
    g_last_error = e.what();
    return XLAB_ERR_VALIDATION;
  } catch (const excursionlab::IoError& e) {
    g_last_error = e.what();
    return XLAB_ERR_IO;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return XLAB_ERR_INVALID_ARGUMENT;
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return XLAB_ERR_PARSE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return XLAB_ERR_NUMERIC;
  }
}

xlab_status invalid(const char* msg) {
  g_last_error = msg;
  return XLAB_ERR_INVALID_ARGUMENT;
}

// method JSON carries estimation-wide knobs (link, level, ssc, moderator)
// next to the method fields.
xlab_status estimate_impl(const xlab_panel* panel, const char* method_json, char** report_json,
                          bool diagnose_only) {
  return guarded([&] {
    const json j = json::parse(method_json);
    const excursionlab::LinkKind link =
        excursionlab::parse_link(j.value("link", std::string("identity")));
    const excursionlab::Panel* work = &panel->panel;
    std::optional<excursionlab::Panel> derived;
    if (j.contains("moderator")) {
      derived = panel->panel.with_moderator(j["moderator"].get<std::string>());
      work = &*derived;
    }
    if (diagnose_only) {
      const auto validation = excursionlab::validate_panel(*work, link);
      if (!validation.ok())
        throw excursionlab::ValidationError("panel failed validation:\n" +
                                            validation.to_string());
      json mj = {{"name", "two_stage"}, {"nuisance", j.contains("nuisance") ? j["nuisance"] : json("mean")}};
      auto method = excursionlab::parse_method_config(mj.dump(), link);
      method.link = link;
      std::vector<int> all(work->n());
      for (int i = 0; i < work->n(); ++i) all[i] = i;
      const auto nf = excursionlab::fit_nuisance(*work, method.nuisance, true, all);
      const auto rep = excursionlab::estimate(*work, method, j.value("level", 0.95), false);
      const auto gram = excursionlab::diagnose_wa2(*work, rep.beta, nf, link);
      json out;
      out["beta"] = json::array();
      for (int c = 0; c < rep.beta.size(); ++c) out["beta"].push_back(rep.beta[c]);
      json rows = json::array();
      for (int t = 0; t < gram.rows(); ++t) {
        json row = json::array();
        for (int u = 0; u < gram.cols(); ++u) row.push_back(gram(t, u));
        rows.push_back(row);
      }
      out["cross_time_gram"] = rows;
      *report_json = dup_string(out.dump(2));
      return;
    }
    auto method = excursionlab::parse_method_config(method_json, link);
    method.link = link;
    const auto report =
        excursionlab::estimate(*work, method, j.value("level", 0.95), j.value("ssc", true));
    *report_json = dup_string(excursionlab::report_to_json(report, *work));
  });
}

}  // namespace

extern "C" {

const char* xlab_status_name(xlab_status status) {
  switch (status) {
    case XLAB_OK: return "ok";
    case XLAB_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case XLAB_ERR_PARSE: return "parse_error";
    case XLAB_ERR_VALIDATION: return "validation_error";
    case XLAB_ERR_NUMERIC: return "numeric_error";
    case XLAB_ERR_IO: return "io_error";
  }
  return "unknown";
}

const char* xlab_last_error(void) { return g_last_error.c_str(); }

const char* xlab_version(void) { return "0.1.0"; }

void xlab_panel_free(xlab_panel* panel) { delete panel; }

void xlab_string_free(char* s) { std::free(s); }

xlab_status xlab_panel_from_csv(const char* path, xlab_panel** out) {
  if (!path || !out) return invalid("null argument");
  return guarded([&] { *out = new xlab_panel{excursionlab::load_panel_csv(path)}; });
}

xlab_status xlab_panel_to_csv(const xlab_panel* panel, const char* path) {
  if (!panel || !path) return invalid("null argument");
  return guarded([&] { excursionlab::write_panel_csv(panel->panel, path); });
}

xlab_status xlab_panel_dims(const xlab_panel* panel, int* n, int* horizon, int* p) {
  if (!panel) return invalid("null panel");
  if (n) *n = panel->panel.n();
  if (horizon) *horizon = panel->panel.horizon();
  if (p) *p = panel->panel.moderator_dim();
  return XLAB_OK;
}

xlab_status xlab_panel_with_moderator(const xlab_panel* panel, const char* formula,
                                      xlab_panel** out) {
  if (!panel || !formula || !out) return invalid("null argument");
  return guarded([&] { *out = new xlab_panel{panel->panel.with_moderator(formula)}; });
}

xlab_status xlab_panel_validate(const xlab_panel* panel, const char* link, double tau,
                                char** report_json) {
  if (!panel || !link || !report_json) return invalid("null argument");
  return guarded([&] {
    const auto report = excursionlab::validate_panel(
        panel->panel, excursionlab::parse_link(link), tau > 0.0 ? tau : 0.01);
    json j;
    j["ok"] = report.ok();
    json viols = json::array();
    for (const auto& v : report.violations) {
      json vj;
      vj["trajectory"] = v.traj;
      vj["t"] = v.t;
      vj["rule"] = v.rule;
      vj["detail"] = v.detail;
      viols.push_back(vj);
    }
    j["violations"] = viols;
    *report_json = dup_string(j.dump(2));
  });
}

xlab_status xlab_simulate(const char* config_json, xlab_panel** out) {
  if (!config_json || !out) return invalid("null argument");
  return guarded([&] {
    const auto gen = excursionlab::parse_generator_config(config_json);
    auto [panel, truth] = std::visit(
        [](const auto& cfg) {
          using T = std::decay_t<decltype(cfg)>;
          if constexpr (std::is_same_v<T, excursionlab::ContinuousConfig>)
            return excursionlab::gen_continuous(cfg);
          else if constexpr (std::is_same_v<T, excursionlab::BinaryConfig>)
            return excursionlab::gen_binary(cfg);
          else
            return excursionlab::gen_count(cfg);
        },
        gen);
    *out = new xlab_panel{std::move(panel)};
  });
}

xlab_status xlab_estimate(const xlab_panel* panel, const char* method_json, char** report_json) {
  if (!panel || !method_json || !report_json) return invalid("null argument");
  return estimate_impl(panel, method_json, report_json, false);
}

xlab_status xlab_diagnose(const xlab_panel* panel, const char* method_json, char** report_json) {
  if (!panel || !method_json || !report_json) return invalid("null argument");
  return estimate_impl(panel, method_json, report_json, true);
}

xlab_status xlab_run_study(const char* study_json, const char* output_dir, char** metrics_json) {
  if (!study_json) return invalid("null study config");
  return guarded([&] {
    auto cfg = excursionlab::parse_study_config(study_json);
    if (output_dir && output_dir[0] != '\0') cfg.output_dir = output_dir;
    const auto metrics = excursionlab::run_study(cfg);
    if (metrics_json) *metrics_json = dup_string(excursionlab::metrics_to_json(metrics));
  });
}

}  // extern "C"
