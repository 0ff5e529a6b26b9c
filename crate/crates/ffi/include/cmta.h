#ifndef CMTA_H
#define CMTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmtaStatus {
  CMTA_STATUS_OK = 0,
  CMTA_STATUS_NULL_POINTER = 1,
  CMTA_STATUS_INVALID_ARGUMENT = 2,
  CMTA_STATUS_IO = 3,
  CMTA_STATUS_FORMAT = 4,
  CMTA_STATUS_INTEGRITY = 5,
  CMTA_STATUS_DIMENSION = 6,
  CMTA_STATUS_UNDEFINED_STATISTIC = 7,
  CMTA_STATUS_BUFFER_TOO_SMALL = 8,
  CMTA_STATUS_PANIC = 9,
  CMTA_STATUS_OTHER = 10,
} CmtaStatus;

typedef struct CmtaCohort CmtaCohort;

// Trained model plus its configuration.
typedef struct CmtaModel CmtaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread; empty after a
// success. The pointer stays valid until the next call on this thread.
const char *cmta_last_error_message(void);

// Loads a checkpoint file into a new model handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out_model` a writable pointer.
enum CmtaStatus cmta_model_load(const char *path, struct CmtaModel **out_model);

// Releases a model handle; null is ignored.
//
// # Safety
// `model` must come from [`cmta_model_load`] and not have been freed.
void cmta_model_free(struct CmtaModel *model);

// Number of discrete time bins the model predicts.
//
// # Safety
// `model` must be a live handle and `out_bins` writable.
enum CmtaStatus cmta_model_num_bins(const struct CmtaModel *model, size_t *out_bins);

// Predicts hazards and the risk score of one patient.
//
// `pathology` is a row-major `rows×cols` matrix. `genomics` holds the
// genomic groups back to back, group `k` having `group_widths[k]` values.
// `hazards_out` must have room for `hazards_len ≥ bins` values.
//
// # Safety
// All pointers must reference buffers of the stated lengths.
enum CmtaStatus cmta_model_predict(const struct CmtaModel *model,
                                   const double *pathology,
                                   size_t rows,
                                   size_t cols,
                                   const double *genomics,
                                   const size_t *group_widths,
                                   size_t groups,
                                   double *hazards_out,
                                   size_t hazards_len,
                                   double *risk_out);

// Loads a cohort manifest into a new cohort handle.
//
// # Safety
// `manifest` must be a NUL-terminated string and `out_cohort` writable.
enum CmtaStatus cmta_cohort_load(const char *manifest, struct CmtaCohort **out_cohort);

// Releases a cohort handle; null is ignored.
//
// # Safety
// `cohort` must come from [`cmta_cohort_load`] and not have been freed.
void cmta_cohort_free(struct CmtaCohort *cohort);

// # Safety
// `cohort` must be a live handle and `out_len` writable.
enum CmtaStatus cmta_cohort_len(const struct CmtaCohort *cohort, size_t *out_len);

// Scores every patient of `cohort` and writes the concordance index.
//
// # Safety
// Handles must be live and `out_cindex` writable.
enum CmtaStatus cmta_model_cindex(const struct CmtaModel *model,
                                  const struct CmtaCohort *cohort,
                                  double *out_cindex);

// Harrell's concordance index. `censored[i] != 0` marks a censored patient.
//
// # Safety
// Input arrays must hold `n` elements; `out_cindex` must be writable.
enum CmtaStatus cmta_concordance_index(const double *risks,
                                       const double *times,
                                       const uint8_t *censored,
                                       size_t n,
                                       double *out_cindex);

// Kaplan-Meier estimate at each distinct time. Writes up to `capacity`
// points and the number of points into `out_len`; when `capacity` is too
// small nothing is written except `out_len` and `BufferTooSmall` is
// returned.
//
// # Safety
// `times`/`censored` hold `n` elements; output buffers hold `capacity`.
enum CmtaStatus cmta_kaplan_meier(const double *times,
                                  const uint8_t *censored,
                                  size_t n,
                                  double *times_out,
                                  double *survival_out,
                                  size_t capacity,
                                  size_t *out_len);

// Two-group logrank test.
//
// # Safety
// Group arrays hold `n_a` / `n_b` elements; outputs must be writable.
enum CmtaStatus cmta_logrank(const double *times_a,
                             const uint8_t *censored_a,
                             size_t n_a,
                             const double *times_b,
                             const uint8_t *censored_b,
                             size_t n_b,
                             double *out_chi_square,
                             double *out_p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMTA_H */
