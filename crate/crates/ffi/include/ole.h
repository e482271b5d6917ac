#ifndef OLE_H
#define OLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum {
  OLE_STATUS_OK = 0,
  // A required pointer argument was null.
  OLE_STATUS_NULL_POINTER = 1,
  // Shapes, labels, thresholds or other arguments are invalid.
  OLE_STATUS_INVALID_ARGUMENT = 2,
  // The SVD did not converge.
  OLE_STATUS_DECOMPOSITION = 3,
  // A file could not be read.
  OLE_STATUS_IO = 4,
  // A file was read but its contents are malformed.
  OLE_STATUS_FORMAT = 5,
  // An internal panic was caught.
  OLE_STATUS_PANIC = 6,
} OleStatus;

// Opaque row-major matrix of doubles.
typedef struct OleMatrix OleMatrix;

// Opaque trained network loaded from a checkpoint.
typedef struct OleNetwork OleNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread ("" after a success).
const char *ole_last_error_message(void);

// Static, human-readable name of a status code.
const char *ole_status_string(OleStatus status);

// Library version as a static string.
const char *ole_version(void);

// Creates a `rows`×`cols` matrix from `rows*cols` row-major values, or a
// zero matrix when `data` is null.
//
// # Safety
// `data` must be null or point to `rows*cols` readable doubles; `out` must
// be a valid pointer.
OleStatus ole_matrix_new(size_t rows, size_t cols, const double *data, OleMatrix **out);

// Releases a matrix. Null is ignored.
//
// # Safety
// `m` must be null or a handle from this library not yet freed.
void ole_matrix_free(OleMatrix *m);

// Row count, or 0 for null.
//
// # Safety
// `m` must be null or a live handle.
size_t ole_matrix_rows(const OleMatrix *m);

// Column count, or 0 for null.
//
// # Safety
// `m` must be null or a live handle.
size_t ole_matrix_cols(const OleMatrix *m);

// Borrowed pointer to the row-major values, valid while `m` lives and is
// not modified. Null for a null handle.
//
// # Safety
// `m` must be null or a live handle.
const double *ole_matrix_data(const OleMatrix *m);

// Copies the row-major values into `out`, which must hold `len` doubles
// with `len == rows*cols`.
//
// # Safety
// `m` must be a live handle and `out` must point to `len` writable doubles.
OleStatus ole_matrix_copy_data(const OleMatrix *m, double *out, size_t len);

// Sum of singular values.
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
OleStatus ole_nuclear_norm(const OleMatrix *m, double *out);

// Projected subgradient `U1·V1ᵀ` over singular values above `sv_threshold`.
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
OleStatus ole_nuclear_subgradient(const OleMatrix *m, double sv_threshold, OleMatrix **out);

// Embedding loss of D×N `features` with one label per column. Writes the
// value to `out_value` and, when `out_grad` is not null, the D×N gradient.
//
// # Safety
// `features` must be a live handle, `labels` must point to `n_labels`
// values, `out_value` must be valid, and `out_grad` null or valid.
OleStatus ole_loss(const OleMatrix *features,
                   const size_t *labels,
                   size_t n_labels,
                   size_t class_count,
                   double delta_clamp,
                   double sv_threshold,
                   double *out_value,
                   OleMatrix **out_grad);

// Mean softmax cross-entropy of C×N `logits`; optional C×N gradient.
//
// # Safety
// As for [`ole_loss`].
OleStatus ole_softmax_cross_entropy(const OleMatrix *logits,
                                    const size_t *labels,
                                    size_t n_labels,
                                    double *out_value,
                                    OleMatrix **out_grad);

// Loads a checkpoint written by `ole train`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
OleStatus ole_network_load(const char *path, OleNetwork **out);

// Releases a network. Null is ignored.
//
// # Safety
// `net` must be null or a handle from this library not yet freed.
void ole_network_free(OleNetwork *net);

// Input, feature and class dimensions. Any out-pointer may be null.
//
// # Safety
// `net` must be a live handle; non-null out-pointers must be valid.
OleStatus ole_network_dims(const OleNetwork *net,
                           size_t *input_dim,
                           size_t *feature_dim,
                           size_t *class_count);

// Inference-mode forward pass of `input` (input_dim×N). Writes the D×N
// features and C×N logits to whichever out-pointers are not null.
//
// # Safety
// `net` and `input` must be live handles; non-null out-pointers must be valid.
OleStatus ole_network_forward(const OleNetwork *net,
                              const OleMatrix *input,
                              OleMatrix **out_features,
                              OleMatrix **out_logits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OLE_H */
