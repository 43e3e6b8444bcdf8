#ifndef FORMSIM_H
#define FORMSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  // Bad argument value, dimension or graph.
  FS_STATUS_INVALID_ARGUMENT = 2,
  // Malformed scenario text or unknown schema version.
  FS_STATUS_SCHEMA = 3,
  // A hypothesis of the selected controller does not hold.
  FS_STATUS_HYPOTHESIS = 4,
  FS_STATUS_UNSUPPORTED = 5,
  FS_STATUS_NUMERICAL = 6,
  // The integration produced a non-finite state.
  FS_STATUS_BLOWUP = 7,
  FS_STATUS_IO = 8,
  FS_STATUS_PANIC = 9,
  FS_STATUS_OTHER = 10,
} FsStatus;

typedef enum FsSignMode {
  FS_SIGN_MODE_STRICT = 0,
  FS_SIGN_MODE_HYSTERESIS = 1,
  FS_SIGN_MODE_SMOOTH = 2,
} FsSignMode;

typedef enum FsScheme {
  FS_SCHEME_EULER = 0,
  FS_SCHEME_RK4 = 1,
} FsScheme;

// Opaque handle to a finished run.
typedef struct FsRun FsRun;

// Opaque scenario handle.
typedef struct FsScenario FsScenario;

// Final-time figures of a run. Quantities the controller mode lacks are NaN.
typedef struct FsSummary {
  double z_tilde_inf;
  double xi_inf;
  double eta_tilde_inf;
  double theta_tilde_final;
  double xi_tilde_inf;
  double v_initial;
  double v_final;
  uint64_t flips_total;
  bool lyapunov_passed;
  bool passivity_passed;
} FsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *formsim_version(void);

// Message of the last failing call on this thread, or NULL. Valid until
// the next failing call on this thread.
const char *formsim_last_error(void);

// Parses and validates a scenario from JSON text.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum FsStatus formsim_scenario_from_json(const char *json, struct FsScenario **out);

// Loads a bundled preset by name (see `formsim presets list`).
//
// # Safety
// `name` must be NUL-terminated; `out` must be writable.
enum FsStatus formsim_scenario_from_preset(const char *name, struct FsScenario **out);

// Loads and validates a scenario file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum FsStatus formsim_scenario_from_file(const char *path, struct FsScenario **out);

// # Safety
// `s` must come from this library and not be used afterwards. NULL is a no-op.
void formsim_scenario_free(struct FsScenario *s);

// # Safety
// `s` must be a live scenario handle; `out` must be writable.
enum FsStatus formsim_scenario_n_agents(struct FsScenario *s, size_t *out);

// # Safety
// `s` must be a live scenario handle.
enum FsStatus formsim_scenario_set_dt(struct FsScenario *s, double dt);

// # Safety
// `s` must be a live scenario handle.
enum FsStatus formsim_scenario_set_t_final(struct FsScenario *s, double t_final);

// Sets the sign selection; `eps` is the width of the regularized modes and
// is ignored for the strict mode.
//
// # Safety
// `s` must be a live scenario handle.
enum FsStatus formsim_scenario_set_sign_mode(struct FsScenario *s,
                                             enum FsSignMode mode,
                                             double eps);

// # Safety
// `s` must be a live scenario handle.
enum FsStatus formsim_scenario_set_scheme(struct FsScenario *s, enum FsScheme scheme);

// Keeps every `stride`-th step in the run's records.
//
// # Safety
// `s` must be a live scenario handle.
enum FsStatus formsim_scenario_set_output_stride(struct FsScenario *s, size_t stride);

// Scenario as pretty JSON; release with [`formsim_string_free`]. NULL on
// failure.
//
// # Safety
// `s` must be a live scenario handle.
char *formsim_scenario_to_json(struct FsScenario *s);

// # Safety
// `text` must come from this library and not be used afterwards. NULL is a no-op.
void formsim_string_free(char *text);

// Integrates a scenario.
//
// # Safety
// `s` must be a live scenario handle; `out` must be writable.
enum FsStatus formsim_run(struct FsScenario *s, struct FsRun **out);

// # Safety
// `r` must come from this library and not be used afterwards. NULL is a no-op.
void formsim_run_free(struct FsRun *r);

// # Safety
// `r` must be a live run handle; `out` must be writable.
enum FsStatus formsim_run_summary(const struct FsRun *r, struct FsSummary *out);

// Full run summary as JSON, owned by the run handle. NULL if `r` is NULL.
//
// # Safety
// `r` must be a live run handle or NULL.
const char *formsim_run_summary_json(const struct FsRun *r);

// # Safety
// `r` must be a live run handle; `out` must be writable.
enum FsStatus formsim_run_n_records(const struct FsRun *r, size_t *out);

// Number of columns of a record row (same as the trajectory CSV).
//
// # Safety
// `r` must be a live run handle; `out` must be writable.
enum FsStatus formsim_run_n_columns(const struct FsRun *r, size_t *out);

// Name of column `index`, owned by the run handle; NULL if out of range.
//
// # Safety
// `r` must be a live run handle or NULL.
const char *formsim_run_column_name(const struct FsRun *r, size_t index);

// Copies record `index` into `buf`, which must hold exactly
// `formsim_run_n_columns` values.
//
// # Safety
// `r` must be a live run handle; `buf` must point to `len` writable doubles.
enum FsStatus formsim_run_row(const struct FsRun *r, size_t index, double *buf, size_t len);

// Writes `trajectory.csv`, `positions.csv` and `summary.json` into `dir`.
//
// # Safety
// `r` must be a live run handle; `dir` must be NUL-terminated.
enum FsStatus formsim_run_write(const struct FsRun *r, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORMSIM_H */
