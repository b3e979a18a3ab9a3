#ifndef NGFREG_H
#define NGFREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NgfregPrecision {
  NGFREG_PRECISION_DOUBLE = 0,
  NGFREG_PRECISION_SINGLE = 1,
} NgfregPrecision;

typedef enum NgfregPtVariant {
  NGFREG_PT_VARIANT_GATHER = 0,
  NGFREG_PT_VARIANT_SCATTER = 1,
  NGFREG_PT_VARIANT_RED_BLACK = 2,
} NgfregPtVariant;

typedef enum NgfregStatus {
  NGFREG_STATUS_OK = 0,
  NGFREG_STATUS_NULL_POINTER = 1,
  NGFREG_STATUS_INVALID_ARGUMENT = 2,
  NGFREG_STATUS_IO = 3,
  NGFREG_STATUS_GRID_MISMATCH = 4,
  NGFREG_STATUS_NUMERIC = 5,
  NGFREG_STATUS_INTERNAL = 6,
} NgfregStatus;

/*
 Registration settings, initialized to the library defaults.
 */
typedef struct NgfregConfig NgfregConfig;

/*
 Deformation (positions) on a deformation grid.
 */
typedef struct NgfregDeformation NgfregDeformation;

/*
 Scalar volume.
 */
typedef struct NgfregImage NgfregImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *ngfreg_last_error(void);

/*
 Library version as a static string.
 */
const char *ngfreg_version(void);

/*
 Read a MetaImage volume.

 # Safety
 `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum NgfregStatus ngfreg_image_read(const char *path, struct NgfregImage **out);

/*
 Create a volume from `dims[0]*dims[1]*dims[2]` values, x fastest.

 # Safety
 `dims`, `spacing` and `origin` point to three values each; `data` to
 `len` values.
 */
enum NgfregStatus ngfreg_image_create(const size_t *dims,
                                      const double *spacing,
                                      const double *origin,
                                      const double *data,
                                      size_t len,
                                      struct NgfregImage **out);

/*
 Write a volume; `.mhd` paths get a sibling `.raw` file.

 # Safety
 `image` must come from this library; `path` must be nul-terminated.
 */
enum NgfregStatus ngfreg_image_write(const struct NgfregImage *image, const char *path);

/*
 Dimensions, spacing and origin; any output pointer may be null.

 # Safety
 Non-null outputs must hold three values.
 */
enum NgfregStatus ngfreg_image_geometry(const struct NgfregImage *image,
                                        size_t *dims,
                                        double *spacing,
                                        double *origin);

/*
 Copy the voxel values into `out`, which must hold exactly `len` values.

 # Safety
 `out` must be writable for `len` values.
 */
enum NgfregStatus ngfreg_image_copy_values(const struct NgfregImage *image,
                                           double *out,
                                           size_t len);

/*
 # Safety
 `image` must come from this library (or be null) and not be used again.
 */
void ngfreg_image_free(struct NgfregImage *image);

/*
 Settings with library defaults. Free with [`ngfreg_config_free`].
 */
struct NgfregConfig *ngfreg_config_new(void);

/*
 # Safety
 `config` must come from [`ngfreg_config_new`] (or be null).
 */
void ngfreg_config_free(struct NgfregConfig *config);

/*
 Regularization weight.

 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_alpha(struct NgfregConfig *config, double alpha);

/*
 Edge parameters of the template (`tau`) and reference (`rho`).

 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_edge(struct NgfregConfig *config, double tau, double rho);

/*
 Pyramid depth; 0 picks it automatically.

 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_levels(struct NgfregConfig *config, size_t levels);

/*
 Image cells per deformation cell.

 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_grid_ratio(struct NgfregConfig *config, size_t ratio);

/*
 Worker threads; 0 uses all cores.

 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_threads(struct NgfregConfig *config, size_t threads);

/*
 Iteration cap per level.

 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_max_iterations(struct NgfregConfig *config, size_t n);

/*
 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_precision(struct NgfregConfig *config,
                                              enum NgfregPrecision precision);

/*
 # Safety
 `config` must come from [`ngfreg_config_new`].
 */
enum NgfregStatus ngfreg_config_set_pt_variant(struct NgfregConfig *config,
                                               enum NgfregPtVariant variant);

/*
 Register `template` onto `reference` (same grid). A null `config` uses
 the defaults.

 # Safety
 Handles must come from this library; `out` must be a valid pointer.
 */
enum NgfregStatus ngfreg_register(const struct NgfregImage *reference,
                                  const struct NgfregImage *template_,
                                  const struct NgfregConfig *config,
                                  struct NgfregDeformation **out);

/*
 Template resampled through the deformation onto its own grid.

 # Safety
 Handles must come from this library; `out` must be a valid pointer.
 */
enum NgfregStatus ngfreg_warp(const struct NgfregImage *template_,
                              const struct NgfregDeformation *deformation,
                              struct NgfregImage **out);

/*
 # Safety
 `path` must be nul-terminated and `out` a valid pointer.
 */
enum NgfregStatus ngfreg_deformation_read(const char *path, struct NgfregDeformation **out);

/*
 # Safety
 `deformation` must come from this library; `path` must be nul-terminated.
 */
enum NgfregStatus ngfreg_deformation_write(const struct NgfregDeformation *deformation,
                                           const char *path);

/*
 Deformation grid dimensions.

 # Safety
 `dims` must hold three values.
 */
enum NgfregStatus ngfreg_deformation_dims(const struct NgfregDeformation *deformation,
                                          size_t *dims);

/*
 Copy positions into `out` (length `3 * points`): all x, then all y, then
 all z, in mm.

 # Safety
 `out` must be writable for `len` values.
 */
enum NgfregStatus ngfreg_deformation_copy_positions(const struct NgfregDeformation *deformation,
                                                    double *out,
                                                    size_t len);

/*
 Largest displacement in voxels of `image`'s grid.

 # Safety
 Handles must come from this library; `out` must be a valid pointer.
 */
enum NgfregStatus ngfreg_deformation_max_displacement(const struct NgfregDeformation *deformation,
                                                      const struct NgfregImage *image,
                                                      double *out);

/*
 # Safety
 `deformation` must come from this library (or be null).
 */
void ngfreg_deformation_free(struct NgfregDeformation *deformation);

/*
 Mean and standard deviation of the landmark error in mm. Points are
 `count` world-coordinate triples (x, y, z interleaved); `image` supplies
 the domain used to flag points outside it.

 # Safety
 Point arrays must hold `3 * count` values; outputs may be null.
 */
enum NgfregStatus ngfreg_landmark_error(const struct NgfregDeformation *deformation,
                                        const struct NgfregImage *image,
                                        const double *reference_points,
                                        const double *template_points,
                                        size_t count,
                                        double *mean,
                                        double *stddev);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NGFREG_H */
