#ifndef SPIKEDIFF_H
#define SPIKEDIFF_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdArch {
  SD_ARCH_MLP = 0,
  SD_ARCH_UNET = 1,
} SdArch;

typedef enum SdSolver {
  SD_SOLVER_DDPM = 0,
  SD_SOLVER_DDIM = 1,
} SdSolver;

typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  SD_STATUS_INVALID_ARGUMENT = 2,
  SD_STATUS_SHAPE = 3,
  SD_STATUS_IO = 4,
  SD_STATUS_FORMAT = 5,
  SD_STATUS_RUNTIME = 6,
  SD_STATUS_PANIC = 7,
} SdStatus;

/**
 * Opaque network handle.
 */
typedef struct SdNet SdNet;

/**
 * Network description. `dim`/`hidden` apply to MLPs, `channels`,
 * `height`, `width` to UNets.
 */
typedef struct SdNetSpec {
  enum SdArch arch;
  size_t dim;
  size_t hidden;
  size_t channels;
  size_t height;
  size_t width;
  size_t t_snn;
  size_t t_diff;
} SdNetSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sd_version(void);

/**
 * Copies the last error message of this thread into `buf` (always
 * NUL-terminated when `len > 0`). Returns the full message length, or 0
 * when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sd_last_error_message(char *buf, size_t len);

/**
 * Creates a freshly initialized network.
 *
 * # Safety
 * `spec` must point to a valid spec and `out` to writable storage.
 */
enum SdStatus sd_net_new(const struct SdNetSpec *spec, uint64_t seed, struct SdNet **out);

/**
 * Loads a checkpoint written by [`sd_net_save`] or the command-line tool.
 *
 * # Safety
 * `spec` and `path` must be valid; `out` must be writable.
 */
enum SdStatus sd_net_load(const struct SdNetSpec *spec, const char *path, struct SdNet **out);

/**
 * # Safety
 * `net` and `path` must be valid.
 */
enum SdStatus sd_net_save(const struct SdNet *net, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void sd_net_free(struct SdNet *net);

/**
 * Number of trainable scalars, 0 for a null handle.
 *
 * # Safety
 * `net` must be null or valid.
 */
size_t sd_net_num_params(const struct SdNet *net);

/**
 * Number of floats in one sample.
 *
 * # Safety
 * `net` must be null or valid.
 */
size_t sd_net_sample_len(const struct SdNet *net);

/**
 * Scales every spiking threshold by `rho` (1 restores the trained value).
 *
 * # Safety
 * `net` must be valid.
 */
enum SdStatus sd_net_set_threshold_scale(struct SdNet *net, float rho);

/**
 * Predicted noise for `n` samples `x` at diffusion steps `t`.
 *
 * # Safety
 * `x` and `out` must hold `n · sample_len` floats; `t` must hold `n`
 * entries.
 */
enum SdStatus sd_net_predict(const struct SdNet *net,
                             const float *x,
                             const size_t *t,
                             size_t n,
                             float *out,
                             size_t out_len);

/**
 * Draws `n` samples with a linear β schedule (1e-4 to 0.02) over the
 * network's diffusion length.
 *
 * # Safety
 * `net` must be valid and `out` must hold `out_len = n · sample_len`
 * floats.
 */
enum SdStatus sd_sample(struct SdNet *net,
                        enum SdSolver solver,
                        size_t steps,
                        float rho,
                        uint64_t seed,
                        size_t n,
                        float *out,
                        size_t out_len);

/**
 * Clipped uniform activation quantizer.
 *
 * # Safety
 * `out` must be writable.
 */
enum SdStatus sd_quantize_act(double x, double clip, uint32_t bits, double *out);

/**
 * Firing rate of an integrate-and-fire neuron under constant input.
 *
 * # Safety
 * `out` must be writable.
 */
enum SdStatus sd_if_firing_rate(double current, double threshold, uint32_t steps, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKEDIFF_H */
