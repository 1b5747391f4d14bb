/*
 * excursionlab C API.
 *
 * Shared-library surface over the causal excursion effect engine: panels
 * are opaque handles, every call returns a status code, and structured
 * results come back as JSON strings owned by the library (release them with
 * xlab_string_free). xlab_last_error() returns a thread-local message for
 * the most recent failing call.
 */
#ifndef EXCURSIONLAB_H
#define EXCURSIONLAB_H

#ifdef __cplusplus
extern "C" {
#endif

typedef struct xlab_panel xlab_panel;

typedef enum xlab_status {
  XLAB_OK = 0,
  XLAB_ERR_INVALID_ARGUMENT = 1,
  XLAB_ERR_PARSE = 2,
  XLAB_ERR_VALIDATION = 3,
  XLAB_ERR_NUMERIC = 4,
  XLAB_ERR_IO = 5
} xlab_status;

const char* xlab_status_name(xlab_status status);
const char* xlab_last_error(void);
const char* xlab_version(void);

void xlab_panel_free(xlab_panel* panel);
void xlab_string_free(char* s);

/* Long-format CSV: id,t,avail,prob,treat,outcome plus h_* and f_* columns. */
xlab_status xlab_panel_from_csv(const char* path, xlab_panel** out);
xlab_status xlab_panel_to_csv(const xlab_panel* panel, const char* path);
xlab_status xlab_panel_dims(const xlab_panel* panel, int* n, int* horizon, int* p);

/* Replaces moderator rows by a design formula over tokens 1,t,h. */
xlab_status xlab_panel_with_moderator(const xlab_panel* panel, const char* formula,
                                      xlab_panel** out);

/* Rule checks; report_json lists violations keyed by (trajectory, t, rule). */
xlab_status xlab_panel_validate(const xlab_panel* panel, const char* link, double tau,
                                char** report_json);

/* Generator config JSON -> simulated panel (see README for the schema). */
xlab_status xlab_simulate(const char* config_json, xlab_panel** out);

/* Method config JSON -> estimate report JSON (point, covariances, CIs). */
xlab_status xlab_estimate(const xlab_panel* panel, const char* method_json,
                          char** report_json);

/* Cross-time Gram summary of the estimating-function atoms. */
xlab_status xlab_diagnose(const xlab_panel* panel, const char* method_json,
                          char** report_json);

/* Study config JSON -> aggregated metrics JSON; CSV artifacts are written
 * to output_dir when it is non-NULL and non-empty. */
xlab_status xlab_run_study(const char* study_json, const char* output_dir,
                           char** metrics_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* EXCURSIONLAB_H */
