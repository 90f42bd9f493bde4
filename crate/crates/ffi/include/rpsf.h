#ifndef RPSF_H
#define RPSF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RpsfStatus {
  RPSF_STATUS_OK = 0,
  RPSF_STATUS_NULL_POINTER = 1,
  RPSF_STATUS_INVALID_CONFIG = 2,
  RPSF_STATUS_DOMAIN = 3,
  RPSF_STATUS_SHAPE_MISMATCH = 4,
  RPSF_STATUS_SINGULAR = 5,
  RPSF_STATUS_DIVERGENCE = 6,
  RPSF_STATUS_IO = 7,
  RPSF_STATUS_BUFFER_TOO_SMALL = 8,
  RPSF_STATUS_PANIC = 9,
} RpsfStatus;

typedef enum RpsfAlgorithm {
  RPSF_ALGORITHM_KL_NC = 0,
  RPSF_ALGORITHM_KL_L1 = 1,
  RPSF_ALGORITHM_L2_L1 = 2,
  RPSF_ALGORITHM_L2_NC = 3,
} RpsfAlgorithm;

/**
 * Opaque list of detections.
 */
typedef struct RpsfDetections RpsfDetections;

/**
 * Opaque PSF dictionary.
 */
typedef struct RpsfDictionary RpsfDictionary;

/**
 * Imaging geometry; see `rpsf_optics_default`.
 */
typedef struct RpsfOptics {
  size_t num_zones;
  size_t rows;
  size_t cols;
  size_t pupil_grid;
  double aperture_side;
  double image_pixel_pitch;
  size_t num_slices;
  double zeta_min;
  double zeta_max;
} RpsfOptics;

/**
 * Solver settings. The data-fit and regularizer follow `algorithm`.
 */
typedef struct RpsfSolverParams {
  enum RpsfAlgorithm algorithm;
  double mu;
  double a;
  double beta0;
  double beta1;
  double rho;
  size_t max_outer;
  size_t max_inner;
  double inner_tol;
  double background;
} RpsfSolverParams;

/**
 * A point source, or a detection with `z` as a continuous slice index.
 */
typedef struct RpsfSource {
  double x;
  double y;
  /**
   * Defocus for sources, slice index for detections.
   */
  double z;
  double flux;
} RpsfSource;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *rpsf_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated
 * and nul-terminated) and returns the full message length in bytes, or 0
 * when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rpsf_last_error(char *buf, size_t len);

/**
 * # Safety
 * `out` must be null or valid for writes.
 */
enum RpsfStatus rpsf_optics_default(struct RpsfOptics *out);

/**
 * Parameters shipped with the library for `algorithm`; `low_photon`
 * selects the set tuned for 1000-photon sources.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum RpsfStatus rpsf_solver_params_tuned(enum RpsfAlgorithm algorithm,
                                         bool low_photon,
                                         struct RpsfSolverParams *out);

/**
 * Builds the dictionary for `optics`.
 *
 * # Safety
 * `optics` must be null or valid for reads, `out` null or valid for writes.
 */
enum RpsfStatus rpsf_dictionary_build(const struct RpsfOptics *optics, struct RpsfDictionary **out);

/**
 * Writes the dictionary shape.
 *
 * # Safety
 * `dict` must come from `rpsf_dictionary_build`; the outputs must be null
 * or valid for writes.
 */
enum RpsfStatus rpsf_dictionary_dims(const struct RpsfDictionary *dict,
                                     size_t *rows,
                                     size_t *cols,
                                     size_t *slices);

/**
 * Copies the `m * n * d` dictionary entries into `buf`.
 *
 * # Safety
 * `dict` must come from `rpsf_dictionary_build`; `buf` must point to
 * `len` writable doubles.
 */
enum RpsfStatus rpsf_dictionary_copy(const struct RpsfDictionary *dict, double *buf, size_t len);

/**
 * # Safety
 * `dict` must be null or come from `rpsf_dictionary_build`, and must not
 * be used afterwards.
 */
void rpsf_dictionary_free(struct RpsfDictionary *dict);

/**
 * Noiseless image of `count` sources (`z` is defocus) plus `background`,
 * written to the `rows * cols` buffer `image`.
 *
 * # Safety
 * `optics` must be valid for reads, `sources` must point to `count`
 * sources, and `image` to `len` writable doubles.
 */
enum RpsfStatus rpsf_render(const struct RpsfOptics *optics,
                            const struct RpsfSource *sources,
                            size_t count,
                            double background,
                            double *image,
                            size_t len);

/**
 * Independent Poisson draws with means `mean[i]`, deterministic in `seed`.
 *
 * # Safety
 * `mean` must point to `len` doubles and `counts` to `len` writable
 * doubles.
 */
enum RpsfStatus rpsf_sample_poisson(const double *mean, size_t len, uint64_t seed, double *counts);

/**
 * Solves, clusters, thresholds at 5% and refines fluxes for one
 * `rows x cols` image of photon counts.
 *
 * # Safety
 * `dict` must come from `rpsf_dictionary_build`, `image` must point to
 * `rows * cols` doubles, `params` must be valid for reads and `out` for
 * writes.
 */
enum RpsfStatus rpsf_localize(const struct RpsfDictionary *dict,
                              const double *image,
                              size_t rows,
                              size_t cols,
                              const struct RpsfSolverParams *params,
                              struct RpsfDetections **out);

/**
 * Number of detections; 0 for a null handle.
 *
 * # Safety
 * `dets` must be null or come from `rpsf_localize`.
 */
size_t rpsf_detections_len(const struct RpsfDetections *dets);

/**
 * Detection `index`, brightest first.
 *
 * # Safety
 * `dets` must come from `rpsf_localize`; `out` must be valid for writes.
 */
enum RpsfStatus rpsf_detections_get(const struct RpsfDetections *dets,
                                    size_t index,
                                    struct RpsfSource *out);

/**
 * # Safety
 * `dets` must be null or come from `rpsf_localize`, and must not be used
 * afterwards.
 */
void rpsf_detections_free(struct RpsfDetections *dets);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RPSF_H */
