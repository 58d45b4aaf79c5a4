#ifndef SEDX_H
#define SEDX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SedxStatus {
  SEDX_STATUS_OK = 0,
  SEDX_STATUS_NULL_POINTER = 1,
  SEDX_STATUS_INVALID_ARGUMENT = 2,
  SEDX_STATUS_DIMENSION = 3,
  SEDX_STATUS_DOMAIN = 4,
  SEDX_STATUS_IO = 5,
  SEDX_STATUS_FORMAT = 6,
  SEDX_STATUS_CONFIG = 7,
  SEDX_STATUS_VALIDATION = 8,
  SEDX_STATUS_NON_FINITE = 9,
  SEDX_STATUS_PANIC = 10,
} SedxStatus;

/*
 A loaded network, student or teacher weights.
 */
typedef struct SedxModel SedxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *sedx_version(void);

/*
 Copies the calling thread's last error message into `buf` (NUL-terminated,
 truncated to `cap - 1` bytes) and returns the full message length. Passing
 a null `buf` or zero `cap` only queries the length. Empty after a success.

 # Safety
 `buf` must be null or point to `cap` writable bytes.
 */
size_t sedx_last_error(char *buf, size_t cap);

/*
 Loads a checkpoint. The teacher weights are used unless `use_student`.
 On success `*out` owns a model released with [`sedx_model_free`].

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SedxStatus sedx_model_load(const char *path, bool use_student, struct SedxModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from [`sedx_model_load`] and not be used afterwards.
 */
void sedx_model_free(struct SedxModel *model);

/*
 Input mel bins, output classes and the frame reduction factor of the network.

 # Safety
 `model` must be live; each out pointer must be writable.
 */
enum SedxStatus sedx_model_dims(const struct SedxModel *model,
                                size_t *n_bins,
                                size_t *n_classes,
                                size_t *temporal_pool);

/*
 Frame-level class probabilities for one clip.

 `features` holds `n_frames x n_bins` values. The output has
 `n_frames / temporal_pool` rows of `n_classes` values; `*out_frames`
 receives the row count and `out_cap` must cover the whole output.

 # Safety
 Buffers must hold the stated number of elements.
 */
enum SedxStatus sedx_model_predict(const struct SedxModel *model,
                                   const double *features,
                                   size_t n_frames,
                                   size_t n_bins,
                                   double *probs,
                                   size_t out_cap,
                                   size_t *out_frames);

/*
 Frame-wise contrastive loss of one clip.

 `z` holds `n_classes` blocks of `n_frames x dim` projections and `labels`
 the `n_frames x n_classes` ground-truth grid. `infonce` adds the positive to
 the denominator; `normalize` L2-normalizes projections first.

 # Safety
 Buffers must hold the stated number of elements; `out` must be writable.
 */
enum SedxStatus sedx_fc_loss(const double *z,
                             size_t n_classes,
                             size_t n_frames,
                             size_t dim,
                             const uint8_t *labels,
                             double tau,
                             bool infonce,
                             bool normalize,
                             double *out);

/*
 Ramp-up weight of the semi-supervised term at (fractional) epoch `t`.

 # Safety
 `out` must be writable.
 */
enum SedxStatus sedx_lambda2(double t, double lambda1, size_t rampup_epochs, double *out);

/*
 Binary median filter with an odd window; `input` and `output` hold `len`
 values and may not alias.

 # Safety
 Buffers must hold `len` elements.
 */
enum SedxStatus sedx_median_filter(const uint8_t *input,
                                   size_t len,
                                   size_t window,
                                   uint8_t *output);

/*
 Generates a synthetic dataset from a spec file into `out_dir`.

 # Safety
 Both arguments must be NUL-terminated strings.
 */
enum SedxStatus sedx_generate(const char *spec_path, const char *out_dir);

/*
 Trains from a run config file. `*frame_f1` receives the final macro
 frame F1; artifacts land in the configured output directory.

 # Safety
 `config_path` must be a NUL-terminated string; `frame_f1` null or writable.
 */
enum SedxStatus sedx_train(const char *config_path, double *frame_f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEDX_H */
