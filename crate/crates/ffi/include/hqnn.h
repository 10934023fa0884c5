#ifndef HQNN_H
#define HQNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define HQNN_GATE_RX 0

#define HQNN_GATE_RY 1

#define HQNN_GATE_RZ 2

#define HQNN_GATE_ROT 3

#define HQNN_GATE_X 4

#define HQNN_GATE_Y 5

#define HQNN_GATE_Z 6

#define HQNN_GATE_H 7

#define HQNN_GATE_CNOT 8

#define HQNN_GATE_CZ 9

#define HQNN_NOISE_NONE 0

#define HQNN_NOISE_BIT_FLIP 1

#define HQNN_NOISE_PHASE_FLIP 2

#define HQNN_NOISE_DEPOLARIZING 3

#define HQNN_NOISE_PHASE_DAMPING 4

#define HQNN_NOISE_AMPLITUDE_DAMPING 5

#define HQNN_MODEL_QUANNN 0

#define HQNN_MODEL_QCNN 1

// Number of logits written by [`hqnn_model_forward`].
#define HQNN_N_CLASSES 4

// Result of every call.
typedef enum HqnnStatus {
  HQNN_STATUS_OK = 0,
  HQNN_STATUS_NULL_POINTER = 1,
  HQNN_STATUS_INVALID_ARGUMENT = 2,
  HQNN_STATUS_SHAPE = 3,
  HQNN_STATUS_CONFIG = 4,
  HQNN_STATUS_VALIDATION = 5,
  HQNN_STATUS_NUMERICAL = 6,
  HQNN_STATUS_UNSUPPORTED = 7,
  HQNN_STATUS_FORMAT = 8,
  HQNN_STATUS_IO = 9,
  HQNN_STATUS_PANIC = 10,
} HqnnStatus;

// Opaque density-matrix handle.
typedef struct HqnnDensityMatrix HqnnDensityMatrix;

// Opaque hybrid-model handle.
typedef struct HqnnModel HqnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL,
// or 0 if the last call succeeded.
//
// # Safety
// `buf` must be NULL or point to `len` writable bytes.
size_t hqnn_last_error(char *buf, size_t len);

// `|0…0⟩⟨0…0|` on `n_qubits` wires.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum HqnnStatus hqnn_density_new(size_t n_qubits, struct HqnnDensityMatrix **out);

// # Safety
// `rho` must be NULL or a handle from [`hqnn_density_new`] not yet freed.
void hqnn_density_free(struct HqnnDensityMatrix *rho);

// # Safety
// `rho` must be a live handle and `out` writable.
enum HqnnStatus hqnn_density_n_qubits(const struct HqnnDensityMatrix *rho, size_t *out);

// Apply one gate. `wires` holds 1 or 2 wire indices, `angles` the gate's
// angles (0, 1 or 3 of them).
//
// # Safety
// `rho` must be a live handle; `wires`/`angles` must point to the given
// number of elements (or be NULL when the count is 0).
enum HqnnStatus hqnn_density_apply_gate(struct HqnnDensityMatrix *rho,
                                        uint32_t gate,
                                        const size_t *wires,
                                        size_t n_wires,
                                        const double *angles,
                                        size_t n_angles);

// Apply a noise channel of strength `prob` to `wire`.
//
// # Safety
// `rho` must be a live handle.
enum HqnnStatus hqnn_density_apply_channel(struct HqnnDensityMatrix *rho,
                                           uint32_t noise,
                                           double prob,
                                           size_t wire);

// `⟨Z⟩` on `wire`.
//
// # Safety
// `rho` must be a live handle and `out` writable.
enum HqnnStatus hqnn_density_expect_z(const struct HqnnDensityMatrix *rho,
                                      size_t wire,
                                      double *out);

// Real part of the trace.
//
// # Safety
// `rho` must be a live handle and `out` writable.
enum HqnnStatus hqnn_density_trace(const struct HqnnDensityMatrix *rho, double *out);

// Check unit trace, Hermiticity and positivity.
//
// # Safety
// `rho` must be a live handle.
enum HqnnStatus hqnn_density_validate(const struct HqnnDensityMatrix *rho);

// Max entry of `|Σ K†K − I|` for the given channel.
//
// # Safety
// `out` must be writable.
enum HqnnStatus hqnn_channel_completeness(uint32_t noise, double prob, double *out);

// Freshly initialised model for `height × width` images.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum HqnnStatus hqnn_model_new(uint32_t kind,
                               size_t height,
                               size_t width,
                               uint64_t seed,
                               struct HqnnModel **out);

// # Safety
// `model` must be NULL or a live model handle.
void hqnn_model_free(struct HqnnModel *model);

// Total trainable parameter count.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum HqnnStatus hqnn_model_n_params(const struct HqnnModel *model, size_t *out);

// Logits for one row-major image with pixels in `[0, 1]`. Writes
// [`HQNN_N_CLASSES`] values to `logits`.
//
// # Safety
// `model` must be a live handle, `pixels` must hold `n_pixels` values and
// `logits` must have room for [`HQNN_N_CLASSES`] values.
enum HqnnStatus hqnn_model_forward(const struct HqnnModel *model,
                                   const double *pixels,
                                   size_t n_pixels,
                                   uint32_t noise,
                                   double prob,
                                   double *logits);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
enum HqnnStatus hqnn_model_save(const struct HqnnModel *model, const char *path);

// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid handle slot.
enum HqnnStatus hqnn_model_load(const char *path, struct HqnnModel **out);

// Run the built-in invariant checks; `failed` receives the failure count.
//
// # Safety
// `failed` must be writable.
enum HqnnStatus hqnn_selftest(size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HQNN_H */
