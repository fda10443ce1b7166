#ifndef GAVE_H
#define GAVE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum GaveStatus {
  GAVE_STATUS_OK = 0,
  GAVE_STATUS_NULL_POINTER = 1,
  GAVE_STATUS_INVALID_ARGUMENT = 2,
  GAVE_STATUS_CONFIG = 3,
  GAVE_STATUS_IO = 4,
  GAVE_STATUS_FORMAT = 5,
  GAVE_STATUS_SHAPE = 6,
  GAVE_STATUS_WEIGHTS = 7,
  GAVE_STATUS_NO_VALID_DEPTH = 8,
  GAVE_STATUS_DEGENERATE = 9,
  GAVE_STATUS_PANIC = 10,
} GaveStatus;

// Pipeline configuration: network sizes, matching, alignment and loss settings.
typedef struct GaveConfig GaveConfig;

// A feature extractor together with the configuration it was built for.
typedef struct GaveExtractor GaveExtractor;

// An RGB-D frame with its intrinsics.
typedef struct GaveFrame GaveFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *gave_last_error(void);

// Library version as a static nul-terminated string.
const char *gave_version(void);

// Default configuration.
//
// # Safety
// `out` must be a valid pointer.
enum GaveStatus gave_config_new(struct GaveConfig **out);

// Configuration read from a key-value file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum GaveStatus gave_config_load(const char *path, struct GaveConfig **out);

// Sets one configuration key. The configuration is unchanged on failure.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be nul-terminated.
enum GaveStatus gave_config_set(struct GaveConfig *cfg, const char *key, const char *value);

// # Safety
// `cfg` must come from this library or be null.
void gave_config_free(struct GaveConfig *cfg);

// Frame from interleaved RGB in `[0, 1]` (`3 * width * height` floats) and
// depth in meters (`width * height` floats, zero where missing).
//
// # Safety
// The buffers must hold the stated number of elements; `out` must be valid.
enum GaveStatus gave_frame_new(size_t width,
                               size_t height,
                               double fx,
                               double fy,
                               double cx,
                               double cy,
                               const float *rgb,
                               const float *depth,
                               struct GaveFrame **out);

// Frame from an 8-bit RGB PNG, a 16-bit millimeter depth PNG and an intrinsics file.
//
// # Safety
// Paths must be nul-terminated strings; `out` must be valid.
enum GaveStatus gave_frame_load(const char *rgb_path,
                                const char *depth_path,
                                const char *intrinsics_path,
                                struct GaveFrame **out);

// Width and height of a frame.
//
// # Safety
// `frame` must come from this library; the out pointers must be valid.
enum GaveStatus gave_frame_size(const struct GaveFrame *frame, size_t *width, size_t *height);

// Copies a frame's depth (`width * height` floats) into `out`.
//
// # Safety
// `out` must have room for `width * height` floats.
enum GaveStatus gave_frame_depth(const struct GaveFrame *frame, float *out);

// # Safety
// `frame` must come from this library or be null.
void gave_frame_free(struct GaveFrame *frame);

// Synthetic frame pair. `params` is a comma-separated `key=value` list and
// may be null or empty for defaults.
//
// # Safety
// Out pointers must be valid; `out_gt_pose` must hold 16 doubles.
enum GaveStatus gave_synth_pair(uint64_t seed,
                                const char *params,
                                struct GaveFrame **out_ref,
                                struct GaveFrame **out_tgt,
                                double *out_gt_pose);

// Extractor with deterministically initialized weights. `cfg` may be null.
//
// # Safety
// `cfg` must come from this library or be null; `out` must be valid.
enum GaveStatus gave_model_from_seed(const struct GaveConfig *cfg,
                                     uint64_t seed,
                                     struct GaveExtractor **out);

// Extractor with weights from an LLTW file. `cfg` may be null.
//
// # Safety
// `path` must be nul-terminated; `cfg` must come from this library or be null.
enum GaveStatus gave_model_load(const struct GaveConfig *cfg,
                                const char *path,
                                struct GaveExtractor **out);

// # Safety
// `model` must come from this library or be null.
void gave_model_free(struct GaveExtractor *model);

// Registers `reference` onto `target` with network features. `cfg` may be
// null; its network sizes must match the ones the model was built with.
//
// # Safety
// Handles must come from this library; `out_pose` must hold 16 doubles.
enum GaveStatus gave_register(const struct GaveFrame *reference,
                              const struct GaveFrame *target,
                              const struct GaveExtractor *model,
                              const struct GaveConfig *cfg,
                              double *out_pose);

// Registers with descriptors derived from a known ground-truth pose.
//
// # Safety
// Handles must come from this library; pose buffers must hold 16 doubles.
enum GaveStatus gave_register_oracle(const struct GaveFrame *reference,
                                     const struct GaveFrame *target,
                                     const double *gt_pose,
                                     const struct GaveConfig *cfg,
                                     double *out_pose);

// Weighted least-squares rigid transform taking `x` onto `y`. Points are
// `n` packed xyz triples; `w` holds `n` non-negative weights.
//
// # Safety
// Buffers must hold the stated number of elements.
enum GaveStatus gave_procrustes(size_t n,
                                const double *x,
                                const double *y,
                                const double *w,
                                double *out_pose);

// Geodesic angle in degrees and translation distance in millimeters between two poses.
//
// # Safety
// Pose buffers must hold 16 doubles; out pointers must be valid.
enum GaveStatus gave_pose_error(const double *est,
                                const double *gt,
                                double *rotation_deg,
                                double *translation_mm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAVE_H */
