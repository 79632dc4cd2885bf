#ifndef AQUAVIS_H
#define AQUAVIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AquavisStatus {
  AQUAVIS_STATUS_OK = 0,
  AQUAVIS_STATUS_NULL_POINTER = 1,
  AQUAVIS_STATUS_INVALID_ARGUMENT = 2,
  AQUAVIS_STATUS_DIMENSION = 3,
  AQUAVIS_STATUS_IO = 4,
  AQUAVIS_STATUS_PARSE = 5,
  AQUAVIS_STATUS_NUMERIC = 6,
  AQUAVIS_STATUS_CHECKPOINT = 7,
  // A check ran but did not pass (self-check failures).
  AQUAVIS_STATUS_CHECK_FAILED = 8,
  AQUAVIS_STATUS_PANIC = 9,
} AquavisStatus;

// Per-pixel depth map.
typedef struct AquavisDepth AquavisDepth;

// RGB image with values in `[0, 1]`, stored row-major and interleaved.
typedef struct AquavisImage AquavisImage;

// Parameters of the feature enhancement module.
typedef struct AquavisVfeParams AquavisVfeParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if the last
// call succeeded. The copy must be released with `aquavis_string_free`.
char *aquavis_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void aquavis_string_free(char *s);

// Static, NUL-terminated library version.
const char *aquavis_version(void);

// Creates an image from `height * width * 3` interleaved RGB values.
//
// # Safety
// `data` must point to `height * width * 3` doubles; `out` must be writable.
enum AquavisStatus aquavis_image_new(size_t height,
                                     size_t width,
                                     const double *data,
                                     struct AquavisImage **out);

// Reads an 8- or 16-bit RGB(A) PNG; `bits` (optional) receives 8 or 16.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AquavisStatus aquavis_image_read_png(const char *path,
                                          struct AquavisImage **out,
                                          uint32_t *bits);

// Writes `image` as an RGB PNG with 8 or 16 bits per channel.
//
// # Safety
// `image` must be a live handle and `path` a NUL-terminated string.
enum AquavisStatus aquavis_image_write_png(const struct AquavisImage *image,
                                           const char *path,
                                           uint32_t bits);

// Image height, or 0 for NULL.
//
// # Safety
// `image` must be NULL or a live handle.
size_t aquavis_image_height(const struct AquavisImage *image);

// Image width, or 0 for NULL.
//
// # Safety
// `image` must be NULL or a live handle.
size_t aquavis_image_width(const struct AquavisImage *image);

// Copies the interleaved pixel values into `buf`, which must hold exactly
// `height * width * 3` doubles.
//
// # Safety
// `image` must be a live handle; `buf` must be writable for `len` doubles.
enum AquavisStatus aquavis_image_copy_data(const struct AquavisImage *image,
                                           double *buf,
                                           size_t len);

// # Safety
// `image` must be NULL or a handle not yet freed.
void aquavis_image_free(struct AquavisImage *image);

// Creates a depth map from `height * width` values.
//
// # Safety
// `data` must point to `height * width` doubles; `out` must be writable.
enum AquavisStatus aquavis_depth_new(size_t height,
                                     size_t width,
                                     const double *data,
                                     struct AquavisDepth **out);

// Reads a depth map: `.png` with a `.json` scale sidecar, anything else
// as raw `UWDM`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AquavisStatus aquavis_depth_read(const char *path, struct AquavisDepth **out);

// # Safety
// `depth` must be NULL or a handle not yet freed.
void aquavis_depth_free(struct AquavisDepth *depth);

// Renders `clean * exp(-beta * z) + backscatter`, clamped to `[0, 1]`.
// `clamped` (optional) receives the number of clamped channel values.
//
// # Safety
// Handles must be live; `beta` and `backscatter` must point to 3 doubles.
enum AquavisStatus aquavis_degrade(const struct AquavisImage *clean,
                                   const struct AquavisDepth *depth,
                                   const double *beta,
                                   const double *backscatter,
                                   struct AquavisImage **out,
                                   size_t *clamped);

// Inverts the formation model with a transmission floor of 1e-6.
//
// # Safety
// Handles must be live; `beta` and `backscatter` must point to 3 doubles.
enum AquavisStatus aquavis_restore(const struct AquavisImage *degraded,
                                   const struct AquavisDepth *depth,
                                   const double *beta,
                                   const double *backscatter,
                                   struct AquavisImage **out);

// Backscatter as the per-channel mean of the darkest `patch x patch`
// patch. `patch_index` (optional) receives its row-major index.
//
// # Safety
// `image` must be live; `out_rgb` must be writable for 3 doubles.
enum AquavisStatus aquavis_estimate_backscatter(const struct AquavisImage *image,
                                                size_t patch,
                                                double *out_rgb,
                                                size_t *patch_index);

// Near-identity initialisation (the absorption weights start at zero).
//
// # Safety
// `out` must be writable.
enum AquavisStatus aquavis_vfe_params_init(size_t d,
                                           size_t e,
                                           size_t h,
                                           double w_max,
                                           uint64_t seed,
                                           struct AquavisVfeParams **out);

// Loads parameters from a JSON tensor manifest.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AquavisStatus aquavis_vfe_params_load(const char *path, struct AquavisVfeParams **out);

// # Safety
// `params` must be live and `path` a NUL-terminated string.
enum AquavisStatus aquavis_vfe_params_save(const struct AquavisVfeParams *params, const char *path);

// # Safety
// `params` must be NULL or a handle not yet freed.
void aquavis_vfe_params_free(struct AquavisVfeParams *params);

// Enhances `rows * cols` vision tokens of width `d` (row-major) given the
// dark-token index `k` and `depth_rows * depth_cols` depth tokens of width
// `e`. Writes `rows * cols * d` values to `out`.
//
// # Safety
// All buffers must hold the stated number of doubles.
enum AquavisStatus aquavis_vfe_enhance(const struct AquavisVfeParams *params,
                                       const double *vision,
                                       size_t rows,
                                       size_t cols,
                                       size_t k,
                                       const double *depth,
                                       size_t depth_rows,
                                       size_t depth_cols,
                                       double *out);

// Runs the module self-check. `params` may be NULL to use random
// parameters of the given dimensions. The JSON report is written to
// `report_json` (free with `aquavis_string_free`) even when a check fails,
// in which case `AQUAVIS_STATUS_CHECK_FAILED` is returned.
//
// # Safety
// `params` must be NULL or live; `report_json` must be writable.
enum AquavisStatus aquavis_vfe_selfcheck(const struct AquavisVfeParams *params,
                                         uint64_t seed,
                                         size_t d,
                                         size_t e,
                                         size_t h,
                                         double w_max,
                                         char **report_json);

// Scores a prediction JSONL file against gold QA records. `subset` may be
// NULL. The JSON report goes to `report_json` (free with
// `aquavis_string_free`).
//
// # Safety
// Paths must be NUL-terminated strings; `report_json` must be writable.
enum AquavisStatus aquavis_evaluate_files(const char *predictions,
                                          const char *gold,
                                          const char *subset,
                                          char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AQUAVIS_H */
