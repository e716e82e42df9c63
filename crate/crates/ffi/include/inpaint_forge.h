#ifndef INPAINT_FORGE_H
#define INPAINT_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ForgeStatus {
  FORGE_STATUS_OK = 0,
  FORGE_STATUS_NULL_POINTER = 1,
  FORGE_STATUS_INVALID_UTF8 = 2,
  FORGE_STATUS_INVALID_ARGUMENT = 3,
  FORGE_STATUS_IO = 4,
  FORGE_STATUS_PARSE = 5,
  FORGE_STATUS_CONFIG = 6,
  FORGE_STATUS_EMPTY_INPUT = 7,
  FORGE_STATUS_CONTRACT = 8,
  FORGE_STATUS_NUMERIC = 9,
  FORGE_STATUS_IMAGE = 10,
  FORGE_STATUS_PROVIDER = 11,
  FORGE_STATUS_PANIC = 12,
} ForgeStatus;

typedef enum ForgeLocation {
  FORGE_LOCATION_LEFT = 0,
  FORGE_LOCATION_CENTER = 1,
  FORGE_LOCATION_RIGHT = 2,
} ForgeLocation;

/**
 * Binary mask.
 */
typedef struct ForgeMask ForgeMask;

/**
 * Parsed annotation file.
 */
typedef struct ForgeSceneGraphs ForgeSceneGraphs;

/**
 * Pixel box: `x`, `y` top-left, `w`, `h` extent.
 */
typedef struct ForgeBBox {
  int64_t x;
  int64_t y;
  int64_t w;
  int64_t h;
} ForgeBBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *forge_version(void);

/**
 * Message of the most recent failed call on this thread; empty if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *forge_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void forge_string_free(char *s);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ForgeStatus forge_scene_graphs_load(const char *path, struct ForgeSceneGraphs **out);

/**
 * Number of graphs; 0 for a null handle.
 *
 * # Safety
 * `graphs` must be null or a live handle.
 */
size_t forge_scene_graphs_len(const struct ForgeSceneGraphs *graphs);

/**
 * Dropped objects plus dropped relations seen while parsing.
 *
 * # Safety
 * `graphs` must be null or a live handle.
 */
size_t forge_scene_graphs_warning_count(const struct ForgeSceneGraphs *graphs);

/**
 * # Safety
 * `graphs` must be a live handle; `out` must be writable.
 */
enum ForgeStatus forge_scene_graphs_object_count(const struct ForgeSceneGraphs *graphs,
                                                 size_t index,
                                                 size_t *out);

/**
 * # Safety
 * `graphs` must be null or a handle not yet freed.
 */
void forge_scene_graphs_free(struct ForgeSceneGraphs *graphs);

/**
 * # Safety
 * `out` must be writable.
 */
enum ForgeStatus forge_mask_new(size_t width, size_t height, struct ForgeMask **out);

/**
 * Mask with `bbox` (clipped to the mask) set.
 *
 * # Safety
 * `out` must be writable.
 */
enum ForgeStatus forge_mask_from_bbox(size_t width,
                                      size_t height,
                                      struct ForgeBBox bbox,
                                      struct ForgeMask **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ForgeStatus forge_mask_load_png(const char *path, struct ForgeMask **out);

/**
 * # Safety
 * `mask` must be a live handle; `path` a NUL-terminated string.
 */
enum ForgeStatus forge_mask_save_png(const struct ForgeMask *mask, const char *path);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t forge_mask_width(const struct ForgeMask *mask);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t forge_mask_height(const struct ForgeMask *mask);

/**
 * Number of set pixels.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t forge_mask_count(const struct ForgeMask *mask);

/**
 * # Safety
 * `mask` must be a live handle; `out` must be writable.
 */
enum ForgeStatus forge_mask_get(const struct ForgeMask *mask, size_t x, size_t y, bool *out);

/**
 * # Safety
 * `mask` must be a live handle not used concurrently.
 */
enum ForgeStatus forge_mask_set(struct ForgeMask *mask, size_t x, size_t y, bool value);

/**
 * Dilate with a `k`x`k` square (`k` odd); writes a new handle.
 *
 * # Safety
 * `mask` must be a live handle; `out` must be writable.
 */
enum ForgeStatus forge_mask_dilate(const struct ForgeMask *mask, size_t k, struct ForgeMask **out);

/**
 * # Safety
 * `mask` must be null or a handle not yet freed.
 */
void forge_mask_free(struct ForgeMask *mask);

double forge_iou(struct ForgeBBox a, struct ForgeBBox b);

/**
 * # Safety
 * `out` must be writable.
 */
enum ForgeStatus forge_spatial_location(struct ForgeBBox bbox,
                                        int64_t image_width,
                                        enum ForgeLocation *out);

/**
 * FID between two row-major feature matrices with `dim` columns.
 *
 * # Safety
 * `a` must point to `a_rows * dim` floats, `b` to `b_rows * dim`;
 * `out` must be writable.
 */
enum ForgeStatus forge_fid(const float *a,
                           size_t a_rows,
                           const float *b,
                           size_t b_rows,
                           size_t dim,
                           double *out);

/**
 * FID between two feature files.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum ForgeStatus forge_fid_files(const char *a_path, const char *b_path, double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ForgeStatus forge_clip_distance_file(const char *path, double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ForgeStatus forge_clip_accuracy_file(const char *path, size_t k, double *out);

/**
 * Mean recall over samples with non-empty ground truth. `excluded` may be
 * null.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ForgeStatus forge_relsim_file(const char *path, double *out, size_t *excluded);

/**
 * Run a build from a TOML config. On success `report_json`, if not null,
 * receives the build report; free it with `forge_string_free`.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `report_json` must be
 * null or writable.
 */
enum ForgeStatus forge_build(const char *config_path, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INPAINT_FORGE_H */
