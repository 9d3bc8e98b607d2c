#ifndef PDSM_H
#define PDSM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PDSM_METHOD_GRADIENT 0

#define PDSM_METHOD_GRAD_INPUT 1

#define PDSM_METHOD_IG 2

#define PDSM_METHOD_GRADSHAP 3

#define PDSM_METHOD_GUIDED_BP 4

#define PDSM_METHOD_DEEPLIFT 5

#define PDSM_PRESET_TT2 0

#define PDSM_PRESET_FS2 1

// Status codes returned by every fallible function.
typedef enum PdsmStatus {
  PDSM_STATUS_OK = 0,
  PDSM_STATUS_NULL_POINTER = 1,
  PDSM_STATUS_VALIDATION = 2,
  PDSM_STATUS_FORMAT = 3,
  PDSM_STATUS_SHAPE = 4,
  PDSM_STATUS_IO = 5,
  PDSM_STATUS_PANIC = 6,
} PdsmStatus;

// Opaque classifier handle.
typedef struct PdsmModel PdsmModel;

// Attribution settings. A negative `noise_sigma` selects the default
// (0.1 times the input's standard deviation). Baselines are all-zero.
typedef struct PdsmAttributionConfig {
  uint32_t ig_steps;
  uint32_t gradshap_samples;
  double noise_sigma;
  uint64_t seed;
} PdsmAttributionConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pdsm_version(void);

// Message of the last failed call on this thread, or NULL after a success.
// Valid until the next call into the library on the same thread.
const char *pdsm_last_error_message(void);

// Number of doubles in a flat parameter vector.
size_t pdsm_model_param_count(void);

// Loads a model directory written by `pdsm train`.
//
// # Safety
// `dir` must be a NUL-terminated UTF-8 path; `out` must be writable.
enum PdsmStatus pdsm_model_load(const char *dir, struct PdsmModel **out);

// Builds a model from `len == pdsm_model_param_count()` parameters.
//
// # Safety
// `params` must point to `len` doubles; `out` must be writable.
enum PdsmStatus pdsm_model_from_params(const double *params, size_t len, struct PdsmModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void pdsm_model_free(struct PdsmModel *model);

// Writes the two class probabilities of a `rows x cols` spectrogram.
//
// # Safety
// `x` holds `rows * cols` doubles; `probs_out` has room for 2.
enum PdsmStatus pdsm_model_forward(const struct PdsmModel *model,
                                   const double *x,
                                   size_t rows,
                                   size_t cols,
                                   double *probs_out);

// Defaults used by the command-line tool.
struct PdsmAttributionConfig pdsm_attribution_config_default(void);

// Saliency map of class `target_class` with method `method`
// (`PDSM_METHOD_*`). `out` receives `rows * cols` doubles.
//
// # Safety
// Buffers must match the given shape; `config` may be NULL for defaults.
enum PdsmStatus pdsm_attribute(const struct PdsmModel *model,
                               uint32_t method,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               size_t target_class,
                               const struct PdsmAttributionConfig *config,
                               double *out);

// Phoneme mask of a `rows x cols` map against an `n_phonemes x ppg_frames`
// posteriorgram using preset `PDSM_PRESET_*`. `mask_out` receives
// `rows * cols` doubles; `on_frames_out` (optional) the covered frames.
//
// # Safety
// Buffers must match the given shapes.
enum PdsmStatus pdsm_discretize(const double *map,
                                size_t rows,
                                size_t cols,
                                const double *ppg,
                                size_t n_phonemes,
                                size_t ppg_frames,
                                uint32_t preset,
                                size_t k,
                                double *mask_out,
                                size_t *on_frames_out);

// `f_c(X) - f_c(X * (1 - M))` for a mask with entries in [0, 1].
//
// # Safety
// `x` and `mask` hold `rows * cols` doubles; `ff_out` is writable.
enum PdsmStatus pdsm_faithfulness(const struct PdsmModel *model,
                                  const double *x,
                                  const double *mask,
                                  size_t rows,
                                  size_t cols,
                                  size_t target_class,
                                  double *ff_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDSM_H */
