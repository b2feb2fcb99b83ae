#ifndef RBCV_H
#define RBCV_H

/* Generated by cbindgen from rbcv-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of every fallible call.
 */
typedef enum RbcvStatus {
  RBCV_STATUS_OK = 0,
  /*
   Null pointer, malformed UTF-8/NUL, or bad argument shape.
   */
  RBCV_STATUS_INVALID_ARGUMENT = 1,
  /*
   Configuration file missing or inconsistent.
   */
  RBCV_STATUS_CONFIG = 2,
  /*
   File IO or serialization failure.
   */
  RBCV_STATUS_IO = 3,
  /*
   Numerical failure (non-finite state, solver breakdown).
   */
  RBCV_STATUS_NUMERICAL = 4,
  /*
   Basis and configuration describe different models.
   */
  RBCV_STATUS_MISMATCH = 5,
  /*
   A panic was caught at the boundary.
   */
  RBCV_STATUS_INTERNAL = 6,
} RbcvStatus;

/*
 Opaque reduced-basis handle.
 */
typedef struct RbcvBasis RbcvBasis;

/*
 Opaque experiment handle (a parsed configuration).
 */
typedef struct RbcvExperiment RbcvExperiment;

/*
 One estimation summary crossing the boundary by value.
 */
typedef struct RbcvReport {
  double mean;
  double variance;
  double half_width;
  uint64_t replicates;
  /*
   Raw-over-controlled variance; 1 when no basis was used.
   */
  double reduction_factor;
} RbcvReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *rbcv_version(void);

/*
 Copies the last error message of this thread into `buf` (truncating) and
 returns the full message length, not counting the terminator.

 # Safety
 `buf` must point to `len` writable bytes, or be null (then only the
 length is returned).
 */
size_t rbcv_last_error_message(char *buf, size_t len);

/*
 Parses an experiment configuration file into a handle.

 # Safety
 `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum RbcvStatus rbcv_experiment_load(const char *path, struct RbcvExperiment **out);

/*
 Frees an experiment handle (null is ignored).

 # Safety
 `exp` must have come from [`rbcv_experiment_load`] and not be freed twice.
 */
void rbcv_experiment_free(struct RbcvExperiment *exp);

/*
 Number of coordinates of the experiment's parameter vector.

 # Safety
 `exp` must be a live experiment handle.
 */
size_t rbcv_experiment_param_dim(const struct RbcvExperiment *exp);

/*
 Runs the offline stage, writing the basis manifest, payloads and the
 selection trace under `out_dir` (null keeps the configured directory).

 # Safety
 `exp` must be a live experiment handle; `out_dir` NUL-terminated or null.
 */
enum RbcvStatus rbcv_offline_run(const struct RbcvExperiment *exp, const char *out_dir);

/*
 Loads a stored basis (manifest path or its directory).

 # Safety
 `path` must be NUL-terminated; `out` must be valid.
 */
enum RbcvStatus rbcv_basis_load(const char *path, struct RbcvBasis **out);

/*
 Frees a basis handle (null is ignored).

 # Safety
 `basis` must have come from [`rbcv_basis_load`] and not be freed twice.
 */
void rbcv_basis_free(struct RbcvBasis *basis);

/*
 Number of elements in a stored basis.

 # Safety
 `basis` must be a live basis handle.
 */
size_t rbcv_basis_len(const struct RbcvBasis *basis);

/*
 Runs the online sweep of a stored basis over a fresh test sample,
 writing the per-query and summary tables under `out_dir` (null keeps the
 configured directory).

 # Safety
 `exp` and `basis` must be live handles; `out_dir` NUL-terminated or null.
 */
enum RbcvStatus rbcv_online_run(const struct RbcvExperiment *exp,
                                const struct RbcvBasis *basis,
                                const char *out_dir);

/*
 One estimation at an explicit parameter vector, optionally controlled by
 a basis handle. `m` overrides the replicate count when nonzero.

 # Safety
 `exp` must be live, `basis` live or null, `lambda` must point to
 `lambda_len` doubles, and `out` must be valid.
 */
enum RbcvStatus rbcv_single(const struct RbcvExperiment *exp,
                            const struct RbcvBasis *basis,
                            const double *lambda,
                            size_t lambda_len,
                            size_t m,
                            struct RbcvReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBCV_H */
