#ifndef STORMCAUSE_H
#define STORMCAUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of every fallible call.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  /*
   Null pointer, invalid UTF-8 or out-of-range argument.
   */
  SC_STATUS_INVALID_ARGUMENT = 1,
  SC_STATUS_IO = 2,
  SC_STATUS_PARSE = 3,
  SC_STATUS_VALIDATION = 4,
  SC_STATUS_RANK_DEFICIENT = 5,
  SC_STATUS_NUMERICAL_FAILURE = 6,
  SC_STATUS_INTERNAL = 7,
  /*
   A Rust panic was caught at the boundary.
   */
  SC_STATUS_PANIC = 8,
} ScStatus;

/*
 Selected (predictor, lag) set.
 */
typedef struct ScFeatureSet ScFeatureSet;

/*
 Trained regression model.
 */
typedef struct ScModel ScModel;

/*
 Loaded storm panel with its training/test split.
 */
typedef struct ScPanel ScPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/*
 Copies the calling thread's last error message into `buf` (capacity
 `cap` bytes, including the NUL) and returns its length; 0 if none.

 # Safety
 `buf` must be null or valid for `cap` bytes.
 */
size_t sc_last_error_message(char *buf, size_t cap);

/*
 Loads storms listed in a manifest. `align_sigma > 0` aligns storms at
 their smoothed pressure minimum; otherwise storms stay unaligned.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_panel_load_manifest(const char *path, double align_sigma, struct ScPanel **out);

/*
 Simulates a panel from a synthetic model spec file; its target column
 is already set.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_panel_from_synth_spec(const char *path, struct ScPanel **out);

/*
 # Safety
 `panel` must be null or a handle from this library, freed once.
 */
void sc_panel_free(struct ScPanel *panel);

/*
 # Safety
 Handles and outputs must be valid.
 */
enum ScStatus sc_panel_storm_count(const struct ScPanel *panel, size_t *total, size_t *training);

/*
 Adds the intensity-change target for `lead_hours` and marks it.

 # Safety
 `panel` must be a valid handle.
 */
enum ScStatus sc_panel_set_intensity_target(struct ScPanel *panel, uint32_t lead_hours);

/*
 Standardizes predictors with training-storm statistics.

 # Safety
 `panel` must be a valid handle.
 */
enum ScStatus sc_panel_standardize(struct ScPanel *panel);

/*
 Causal predictor selection for the panel target over training storms.
 `max_cond_size < 0` leaves conditioning sets unbounded.

 # Safety
 `panel` must be a valid handle with a target; `out` must be writable.
 */
enum ScStatus sc_discover(const struct ScPanel *panel,
                          size_t lag_min,
                          size_t lag_max,
                          double pc_alpha,
                          int32_t max_cond_size,
                          struct ScFeatureSet **out);

/*
 # Safety
 `set` must be null or a handle from this library, freed once.
 */
void sc_feature_set_free(struct ScFeatureSet *set);

/*
 # Safety
 `set` must be a valid handle.
 */
size_t sc_feature_set_len(const struct ScFeatureSet *set);

/*
 Reads member `index`: its code into `code_buf`, and its lag and
 strength. `code_len` receives the code length.

 # Safety
 `set` must be valid; `code_buf` valid for `cap` bytes or null; other
 outputs writable.
 */
enum ScStatus sc_feature_set_get(const struct ScFeatureSet *set,
                                 size_t index,
                                 char *code_buf,
                                 size_t cap,
                                 size_t *code_len,
                                 size_t *lag,
                                 double *strength);

/*
 Fits a linear model on the training storms using the set's features.

 # Safety
 Handles must be valid; `out` writable.
 */
enum ScStatus sc_model_fit_mlr(const struct ScPanel *panel,
                               const struct ScFeatureSet *set,
                               struct ScModel **out);

/*
 # Safety
 `path` NUL-terminated; `out` writable.
 */
enum ScStatus sc_model_load(const char *path, struct ScModel **out);

/*
 # Safety
 `model` valid; `path` NUL-terminated.
 */
enum ScStatus sc_model_save(const struct ScModel *model, const char *path);

/*
 # Safety
 `model` must be null or a handle from this library, freed once.
 */
void sc_model_free(struct ScModel *model);

/*
 # Safety
 `model` must be a valid handle.
 */
size_t sc_model_n_features(const struct ScModel *model);

/*
 Predicts `n` rows of the row-major `n x d` matrix `x` into `out`.

 # Safety
 `x` valid for `n * d` doubles; `out` valid for `n` doubles.
 */
enum ScStatus sc_model_predict(const struct ScModel *model,
                               const double *x,
                               size_t n,
                               size_t d,
                               double *out);

/*
 Partial correlation of `x` and `y` given the row-major `n x k` matrix
 `z` (null when `k == 0`). Untestable inputs (too few rows) return
 `SC_STATUS_VALIDATION`.

 # Safety
 `x`, `y` valid for `n` doubles; `z` valid for `n * k` doubles.
 */
enum ScStatus sc_partial_correlation(const double *x,
                                     const double *y,
                                     const double *z,
                                     size_t n,
                                     size_t k,
                                     double *r,
                                     double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STORMCAUSE_H */
