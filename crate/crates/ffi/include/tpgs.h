#ifndef TPGS_H
#define TPGS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of cube faces, in the order front, right, back, left, up, down.
 */
#define TPGS_CUBE_FACES 6

/**
 * Result of every fallible call.
 */
typedef enum TpgsStatus {
  TPGS_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  TPGS_STATUS_NULL_ARGUMENT = 1,
  /**
   * A path was not valid UTF-8.
   */
  TPGS_STATUS_INVALID_UTF8 = 2,
  /**
   * Input outside the domain of an operation.
   */
  TPGS_STATUS_DOMAIN = 3,
  /**
   * A size, shape or setting check failed.
   */
  TPGS_STATUS_VALIDATION = 4,
  /**
   * A file record could not be parsed.
   */
  TPGS_STATUS_PARSE = 5,
  /**
   * A file could not be read or written.
   */
  TPGS_STATUS_IO = 6,
  /**
   * A file had the wrong layout.
   */
  TPGS_STATUS_FORMAT = 7,
  /**
   * Inconsistent paired inputs.
   */
  TPGS_STATUS_CONTRACT = 8,
  /**
   * Internal panic; the handles passed in are still valid.
   */
  TPGS_STATUS_PANIC = 9,
} TpgsStatus;

/**
 * Opaque RGB image.
 */
typedef struct TpgsImage TpgsImage;

/**
 * Opaque Gaussian scene.
 */
typedef struct TpgsScene TpgsScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The string stays valid until the next call into this library on the same
 * thread.
 */
const char *tpgs_last_error(void);

/**
 * Loads a scene file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TpgsStatus tpgs_scene_load(const char *path, struct TpgsScene **out);

/**
 * Writes `scene` to `path`.
 *
 * # Safety
 * `scene` must come from this library and `path` be NUL-terminated.
 */
enum TpgsStatus tpgs_scene_save(const struct TpgsScene *scene, const char *path);

/**
 * Number of Gaussians in `scene`; 0 for NULL.
 *
 * # Safety
 * `scene` must be NULL or come from this library.
 */
size_t tpgs_scene_len(const struct TpgsScene *scene);

/**
 * # Safety
 * `scene` must be NULL or an unfreed handle from this library.
 */
void tpgs_scene_free(struct TpgsScene *scene);

/**
 * Creates a `height` x `width` image. `rgb` holds `height * width * 3`
 * values, or is NULL for a black image.
 *
 * # Safety
 * A non-NULL `rgb` must point to `height * width * 3` readable doubles.
 */
enum TpgsStatus tpgs_image_new(size_t height,
                               size_t width,
                               const double *rgb,
                               struct TpgsImage **out);

/**
 * # Safety
 * `img` must be NULL or come from this library.
 */
size_t tpgs_image_height(const struct TpgsImage *img);

/**
 * # Safety
 * `img` must be NULL or come from this library.
 */
size_t tpgs_image_width(const struct TpgsImage *img);

/**
 * Pixel data, `height * width * 3` doubles, valid until the image is freed.
 *
 * # Safety
 * `img` must be NULL or come from this library.
 */
const double *tpgs_image_data(const struct TpgsImage *img);

/**
 * # Safety
 * `img` must be NULL or an unfreed handle from this library.
 */
void tpgs_image_free(struct TpgsImage *img);

/**
 * Renders the `erp_h` x `2*erp_h` panorama of `scene` seen from `pose`
 * through padded cube faces, composited with the 45-degree transition cube
 * when `transition` is true.
 *
 * # Safety
 * `pose` must point to 12 doubles; handles must come from this library.
 */
enum TpgsStatus tpgs_render_erp(const struct TpgsScene *scene,
                                const double *pose,
                                size_t erp_h,
                                size_t face_res,
                                size_t padding_p,
                                bool transition,
                                struct TpgsImage **out);

/**
 * Cuts a panorama into six padded faces of `face_res` nominal pixels,
 * written to `out[0..6]` in face order.
 *
 * # Safety
 * `out` must point to six writable handle slots.
 */
enum TpgsStatus tpgs_erp_to_cubemap(const struct TpgsImage *erp,
                                    size_t face_res,
                                    size_t padding_p,
                                    struct TpgsImage **out);

/**
 * Stitches six padded faces back into an `erp_h` x `2*erp_h` panorama.
 *
 * # Safety
 * `faces` must point to six image handles from this library.
 */
enum TpgsStatus tpgs_cubemap_to_erp(const struct TpgsImage *const *faces,
                                    size_t face_res,
                                    size_t padding_p,
                                    size_t erp_h,
                                    struct TpgsImage **out);

/**
 * Field of view of a face padded by `p` ERP pixels at height `erp_h`, in
 * radians; NaN when `erp_h` is 0.
 */
double tpgs_padded_fov(size_t p, size_t erp_h);

/**
 * PSNR of two same-size images in dB, capped at 99 for identical inputs.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum TpgsStatus tpgs_psnr(const struct TpgsImage *a, const struct TpgsImage *b, double *out);

/**
 * Mean SSIM of two same-size images.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum TpgsStatus tpgs_ssim(const struct TpgsImage *a, const struct TpgsImage *b, double *out);

/**
 * Seam score of a panorama: mean gradient magnitude on cube-face boundaries
 * divided by the mean elsewhere; near 1 means no visible seams.
 *
 * # Safety
 * `erp` must come from this library; `out` must be writable.
 */
enum TpgsStatus tpgs_seam_score(const struct TpgsImage *erp, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TPGS_H */
