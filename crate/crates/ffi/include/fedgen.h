#ifndef FEDGEN_H
#define FEDGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FedgenStatus {
  FEDGEN_STATUS_OK = 0,
  FEDGEN_STATUS_NULL_POINTER = 1,
  FEDGEN_STATUS_INVALID_UTF8 = 2,
  FEDGEN_STATUS_PARSE_ERROR = 3,
  FEDGEN_STATUS_VALIDATION_ERROR = 4,
  FEDGEN_STATUS_RUNTIME_ERROR = 5,
  FEDGEN_STATUS_TOO_FEW_ROWS = 6,
  FEDGEN_STATUS_INDEX_OUT_OF_RANGE = 7,
  FEDGEN_STATUS_PANIC = 8,
} FedgenStatus;

// Parsed experiment configuration.
typedef struct FedgenSpec FedgenSpec;

// Results of a sweep, one row per number of rounds.
typedef struct FedgenTable FedgenTable;

// One results row. Columns that were not computed are NaN.
typedef struct FedgenRow {
  size_t rounds;
  double gen_mean;
  double gen_se;
  double bound_term1;
  double bound_term2;
  double bound_total;
  double bound_se;
  double emp_risk;
  double pop_risk;
  double proxy_delta;
  double seconds;
} FedgenRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *fedgen_last_error(void);

// Library version as a static NUL-terminated string.
const char *fedgen_version(void);

// Parses `key = value` configuration text into a new spec handle.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum FedgenStatus fedgen_spec_parse(const char *text, struct FedgenSpec **out);

// # Safety
// `spec` must come from [`fedgen_spec_parse`] and not be used afterwards. Null is ignored.
void fedgen_spec_free(struct FedgenSpec *spec);

// # Safety
// `spec` must be a live handle.
enum FedgenStatus fedgen_spec_set_seed(struct FedgenSpec *spec, uint64_t seed);

// Sets the number of Monte-Carlo replicates `M`.
//
// # Safety
// `spec` must be a live handle.
enum FedgenStatus fedgen_spec_set_replicates(struct FedgenSpec *spec, size_t m);

// Canonical configuration text of the spec.
//
// # Safety
// `spec` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
enum FedgenStatus fedgen_spec_to_config(const struct FedgenSpec *spec,
                                        char **out);

// Runs the sweep described by `spec`.
//
// # Safety
// `spec` must be a live handle and `out` a valid pointer.
enum FedgenStatus fedgen_sweep_run(const struct FedgenSpec *spec, struct FedgenTable **out);

// # Safety
// `table` must come from [`fedgen_sweep_run`] and not be used afterwards. Null is ignored.
void fedgen_table_free(struct FedgenTable *table);

// Number of rows; 0 for a null handle.
//
// # Safety
// `table` must be a live handle or null.
size_t fedgen_table_row_count(const struct FedgenTable *table);

// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum FedgenStatus fedgen_table_row(const struct FedgenTable *table,
                                   size_t index,
                                   struct FedgenRow *out);

// # Safety
// `table` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
enum FedgenStatus fedgen_table_to_csv(const struct FedgenTable *table,
                                      char **out);

// # Safety
// `table` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
enum FedgenStatus fedgen_table_to_json(const struct FedgenTable *table,
                                       char **out);

// # Safety
// `table` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
enum FedgenStatus fedgen_table_to_svg(const struct FedgenTable *table,
                                      char **out);

// # Safety
// `s` must come from this library and not be used afterwards. Null is ignored.
void fedgen_string_free(char *s);

// `b_{r+1}` for a constant rate `eta`, `rounds` rounds of `steps` steps and smoothness `l`.
//
// # Safety
// `out` must be a valid pointer.
enum FedgenStatus fedgen_b_coefficient(double eta,
                                       double l,
                                       size_t steps,
                                       size_t rounds,
                                       size_t r,
                                       double *out);

// Runs the exact verification suite. `passed` is set to whether every check held;
// `report` (optional) receives the printed report.
//
// # Safety
// `passed` must be valid; `report` may be null.
enum FedgenStatus fedgen_verify(bool *passed, char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDGEN_H */
