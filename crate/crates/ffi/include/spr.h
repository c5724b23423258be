#ifndef SPR_H
#define SPR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SprStatus {
  SPR_STATUS_OK = 0,
  SPR_STATUS_NULL_POINTER = 1,
  SPR_STATUS_INVALID_ARGUMENT = 2,
  SPR_STATUS_SHAPE_MISMATCH = 3,
  SPR_STATUS_NUMERICAL = 4,
  SPR_STATUS_IO = 5,
  SPR_STATUS_FORMAT = 6,
  SPR_STATUS_CONFIG = 7,
  SPR_STATUS_MISSING_INPUT = 8,
  SPR_STATUS_PANIC = 99,
} SprStatus;

/**
 * Opaque filter bank with its regularization scalars.
 */
typedef struct SprFilterBank SprFilterBank;

/**
 * Opaque encoding operator.
 */
typedef struct SprModel SprModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spr_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *spr_last_error_message(void);

/**
 * Creates a golden-angle radial model with ramp density compensation.
 * `coil_maps` holds `n_coils * nx * nx` complex values or is NULL, in
 * which case seeded synthetic maps are generated.
 *
 * # Safety
 * `coil_maps` must be NULL or valid for `2 * n_coils * nx * nx` reads and
 * `out` valid for one write.
 */
enum SprStatus spr_model_new(size_t nx,
                             size_t nt,
                             size_t n_coils,
                             size_t spokes_per_frame,
                             const double *coil_maps,
                             struct SprModel **out);

/**
 * # Safety
 * `model` must be NULL or a pointer from [`spr_model_new`] not yet freed.
 */
void spr_model_free(struct SprModel *model);

/**
 * Array lengths in doubles expected by the model functions.
 *
 * # Safety
 * Pointers must be valid; `image_len` and `data_len` may be NULL.
 */
enum SprStatus spr_model_sizes(const struct SprModel *model, size_t *image_len, size_t *data_len);

/**
 * `data = A image`.
 *
 * # Safety
 * `image` and `data` must be valid for the given numbers of doubles.
 */
enum SprStatus spr_model_forward(const struct SprModel *model,
                                 const double *image,
                                 size_t image_len,
                                 double *data,
                                 size_t data_len);

/**
 * `image = A^H data`.
 *
 * # Safety
 * `data` and `image` must be valid for the given numbers of doubles.
 */
enum SprStatus spr_model_adjoint(const struct SprModel *model,
                                 const double *data,
                                 size_t data_len,
                                 double *image,
                                 size_t image_len);

/**
 * `image = A^H W^{1/2} data`.
 *
 * # Safety
 * `data` and `image` must be valid for the given numbers of doubles.
 */
enum SprStatus spr_model_pseudo_inverse(const struct SprModel *model,
                                        const double *data,
                                        size_t data_len,
                                        double *image,
                                        size_t image_len);

/**
 * Seeded random filter bank with default regularization scalars.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum SprStatus spr_filters_random(size_t k, size_t kf, uint64_t seed, struct SprFilterBank **out);

/**
 * Loads a filter bank written by `spr train` or `spr pretrain`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
enum SprStatus spr_filters_load(const char *path, struct SprFilterBank **out);

/**
 * # Safety
 * `filters` must come from this library and `path` be NUL-terminated.
 */
enum SprStatus spr_filters_save(const struct SprFilterBank *filters, const char *path);

/**
 * # Safety
 * `filters` must be NULL or a pointer from this library not yet freed.
 */
void spr_filters_free(struct SprFilterBank *filters);

/**
 * Filter count, kernel side, positive scalars and trainable parameter
 * count. Any output pointer may be NULL.
 *
 * # Safety
 * Non-NULL pointers must be valid for one write.
 */
enum SprStatus spr_filters_info(const struct SprFilterBank *filters,
                                size_t *k,
                                size_t *kf,
                                double *alpha,
                                double *lambda,
                                size_t *n_parameters);

/**
 * Runs the unrolled network from `A# data` with `depth` iterations of
 * `n_cg` CG steps each.
 *
 * # Safety
 * `data` and `image` must be valid for the given numbers of doubles.
 */
enum SprStatus spr_reconstruct(const struct SprModel *model,
                               const struct SprFilterBank *filters,
                               const double *data,
                               size_t data_len,
                               size_t depth,
                               size_t n_cg,
                               double *image,
                               size_t image_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPR_H */
