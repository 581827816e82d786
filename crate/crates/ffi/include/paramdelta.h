/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PARAMDELTA_H
#define PARAMDELTA_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum PdDtype {
  PD_DTYPE_F32 = 0,
  PD_DTYPE_F16 = 1,
  PD_DTYPE_BF16 = 2,
} PdDtype;

typedef enum PdFitMode {
  PD_FIT_MODE_THROUGH_ORIGIN = 0,
  PD_FIT_MODE_WITH_INTERCEPT = 1,
} PdFitMode;

typedef enum PdKind {
  PD_KIND_BASE = 0,
  PD_KIND_POST = 1,
  PD_KIND_DELTA = 2,
  PD_KIND_FUSED = 3,
} PdKind;

typedef enum PdMissingPolicy {
  PD_MISSING_POLICY_STRICT = 0,
  PD_MISSING_POLICY_INTERSECT = 1,
  PD_MISSING_POLICY_ANCHOR_PASSTHROUGH = 2,
} PdMissingPolicy;

// Result of every fallible call. One code per library error class, plus
// argument and panic codes for the boundary itself.
typedef enum PdStatus {
  PD_STATUS_OK = 0,
  PD_STATUS_IO_FAILURE = 1,
  PD_STATUS_MALFORMED_HEADER = 2,
  PD_STATUS_OVERLAPPING_REGIONS = 3,
  PD_STATUS_TRUNCATED_FILE = 4,
  PD_STATUS_DUPLICATE_TENSOR_NAME = 5,
  PD_STATUS_UNSUPPORTED_D_TYPE = 6,
  PD_STATUS_UNKNOWN_TENSOR = 7,
  PD_STATUS_SHAPE_MISMATCH = 8,
  PD_STATUS_NOT_HOMOLOGOUS = 9,
  PD_STATUS_SHAPE_CONFLICT = 10,
  PD_STATUS_EMPTY_INTERSECTION = 11,
  PD_STATUS_NON_FINITE_COEFFICIENT = 12,
  PD_STATUS_INVALID_SPEC = 13,
  PD_STATUS_NO_SHARED_TENSORS = 14,
  PD_STATUS_EMPTY_INPUT = 15,
  PD_STATUS_INVALID_SCORE_TABLE = 16,
  PD_STATUS_NO_COMPLETE_TRIPLES = 17,
  PD_STATUS_DEGENERATE_INPUT = 18,
  PD_STATUS_DUPLICATE_ALPHA = 19,
  PD_STATUS_NON_FINITE_ALPHA = 20,
  PD_STATUS_INVALID_JSON = 21,
  // A null pointer, bad UTF-8 or out-of-range argument.
  PD_STATUS_INVALID_ARGUMENT = 100,
  // The caller's buffer is too small; the required size was reported.
  PD_STATUS_BUFFER_TOO_SMALL = 101,
  // A Rust panic was caught at the boundary.
  PD_STATUS_PANIC = 102,
} PdStatus;

// An open checkpoint. Opaque to C.
typedef struct PdCheckpoint PdCheckpoint;

// Summary of a transfer-efficiency fit.
typedef struct PdGammaFit {
  double gamma;
  double intercept;
  double r_squared;
  size_t n_points;
} PdGammaFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// Valid until the next library call on the same thread.
const char *pd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pd_version(void);

// Opens and validates a checkpoint. No tensor data is read.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PdStatus pd_checkpoint_open(const char *path, struct PdCheckpoint **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `ck` must come from this library and not be used afterwards.
void pd_checkpoint_free(struct PdCheckpoint *ck);

// Number of tensors; 0 for a null handle.
//
// # Safety
// `ck` must be null or a live handle.
size_t pd_checkpoint_tensor_count(const struct PdCheckpoint *ck);

// Name of the `index`-th tensor in sorted order, owned by the handle.
// Null when out of range.
//
// # Safety
// `ck` must be null or a live handle.
const char *pd_checkpoint_tensor_name(const struct PdCheckpoint *ck, size_t index);

// Kind tag recorded in the checkpoint's metadata.
//
// # Safety
// `ck` must be a live handle; `out` must be writable.
enum PdStatus pd_checkpoint_kind(const struct PdCheckpoint *ck, enum PdKind *out);

// Storage dtype, rank and element count of a tensor. When `dims` is
// non-null, up to `dims_cap` extents are written there; `*ndim` always
// receives the rank, and `PD_STATUS_BUFFER_TOO_SMALL` is returned if
// `dims_cap` is short.
//
// # Safety
// Pointers must be null or valid for the stated sizes.
enum PdStatus pd_checkpoint_tensor_info(const struct PdCheckpoint *ck,
                                        const char *name,
                                        enum PdDtype *dtype,
                                        size_t *ndim,
                                        size_t *dims,
                                        size_t dims_cap,
                                        size_t *numel);

// Reads one tensor in 32-bit working precision into `out`, which must
// hold exactly the tensor's element count.
//
// # Safety
// `out` must be valid for `len` floats.
enum PdStatus pd_read_tensor(const struct PdCheckpoint *ck,
                             const char *name,
                             float *out,
                             size_t len);

// Writes `post − base` to `out_path` (F32). On success `*out`, when
// non-null, receives a handle to the result.
//
// # Safety
// Handles must be live; strings NUL-terminated; `out` null or writable.
enum PdStatus pd_extract_delta(const struct PdCheckpoint *post,
                               const struct PdCheckpoint *base,
                               const char *out_path,
                               uint32_t threads,
                               struct PdCheckpoint **out);

// Writes `anchor + alpha · delta` in the anchor's dtypes.
//
// # Safety
// As for `pd_extract_delta`.
enum PdStatus pd_apply_delta(const struct PdCheckpoint *anchor,
                             const struct PdCheckpoint *delta,
                             double alpha,
                             enum PdMissingPolicy policy,
                             const char *out_path,
                             uint32_t threads,
                             struct PdCheckpoint **out);

// Writes `anchor + Σ coeffs[i] · deltas[i]` for `count` deltas.
//
// # Safety
// `deltas` and `coeffs` must be valid for `count` elements.
enum PdStatus pd_fuse(const struct PdCheckpoint *anchor,
                      const struct PdCheckpoint *const *deltas,
                      const double *coeffs,
                      size_t count,
                      enum PdMissingPolicy policy,
                      const char *out_path,
                      uint32_t threads,
                      struct PdCheckpoint **out);

// Structural comparison. `*homologous` receives the verdict; when
// `report_json` is non-null it receives the full report, to be released
// with `pd_string_free`.
//
// # Safety
// Handles must be live; out pointers null or writable.
enum PdStatus pd_validate_homologous(const struct PdCheckpoint *a,
                                     const struct PdCheckpoint *b,
                                     bool *homologous,
                                     char **report_json);

// Per-tensor cosine map of two deltas as a JSON report.
//
// # Safety
// Handles must be live; `json_out` writable. Release with `pd_string_free`.
enum PdStatus pd_cosine_map_json(const struct PdCheckpoint *a,
                                 const struct PdCheckpoint *b,
                                 uint32_t bins,
                                 uint32_t threads,
                                 char **json_out);

// Per-tensor norm map of a delta as a JSON report.
//
// # Safety
// As for `pd_cosine_map_json`.
enum PdStatus pd_norm_map_json(const struct PdCheckpoint *delta,
                               uint32_t bins,
                               uint32_t threads,
                               char **json_out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void pd_string_free(char *s);

// `base_i + post_j − base_j`.
double pd_hypothetical(double base_i, double post_j, double base_j);

// Least-squares fit of `real` on `hypothetical` over `n` points.
//
// # Safety
// `hyp` and `real` must be valid for `n` doubles; `out` writable.
enum PdStatus pd_fit_gamma(const double *hyp,
                           const double *real,
                           size_t n,
                           enum PdFitMode mode,
                           struct PdGammaFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARAMDELTA_H */
