/* C interface to the mcg diffusion inverse-problem solvers. */

#ifndef MCG_H
#define MCG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum McgStatus {
  MCG_STATUS_OK = 0,
  MCG_STATUS_NULL_POINTER = 1,
  MCG_STATUS_INVALID_ARGUMENT = 2,
  MCG_STATUS_DIMENSION_MISMATCH = 3,
  MCG_STATUS_NUMERICAL_FAILURE = 4,
  MCG_STATUS_IO_FAILURE = 5,
} McgStatus;

/**
 * Opaque score-model handle.
 */
typedef struct McgModel McgModel;

/**
 * Opaque forward-operator handle.
 */
typedef struct McgOperator McgOperator;

/**
 * Opaque noise-schedule handle.
 */
typedef struct McgSchedule McgSchedule;

/**
 * Sampler configuration for `mcg_solve`.
 */
typedef struct McgSamplerOptions {
  /**
   * 0 = ancestral VP, 1 = predictor-corrector VE.
   */
  uint32_t family;
  /**
   * Reverse-diffusion steps; must equal the model's schedule length.
   */
  uint32_t nfe;
  /**
   * Gradient scale before residual normalization.
   */
  double alpha_prime;
  /**
   * 0 = none, 1 = constrained gradient, 2 = matched-noise ablation.
   */
  uint32_t gradient_variant;
  /**
   * Nonzero enables the measurement-consistency projection.
   */
  uint32_t use_projection;
  uint32_t corrector_steps;
  double corrector_snr;
  /**
   * 0 = gradient after every sub-step, 1 = once per sweep.
   */
  uint32_t placement;
  /**
   * 0 = identity, 1 = operator transpose, 2 = pseudo-inverse.
   */
  uint32_t weight_kind;
  uint64_t seed;
} McgSamplerOptions;

/**
 * Solve outputs beyond the reconstruction itself. Quality metrics are NaN
 * when no ground truth was supplied.
 */
typedef struct McgSolveMetrics {
  double mse_mc;
  double mse;
  double psnr_db;
  uint64_t nfe_used;
  double seconds;
} McgSolveMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated,
 * truncated to `cap`). Returns the untruncated length in bytes.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes (or be null to query the length).
 */
size_t mcg_last_error_message(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mcg_version(void);

/**
 * VP schedule with linearly increasing beta.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum McgStatus mcg_schedule_vp_new(size_t n,
                                   double beta_min,
                                   double beta_max,
                                   struct McgSchedule **out);

/**
 * VE schedule with geometrically increasing sigma.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum McgStatus mcg_schedule_ve_new(size_t n,
                                   double sigma_min,
                                   double sigma_max,
                                   struct McgSchedule **out);

/**
 * Signal coefficient `a_i` and noise level `b_i` for `i` in `1..=N`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum McgStatus mcg_schedule_coeffs(const struct McgSchedule *schedule,
                                   size_t i,
                                   double *a_out,
                                   double *b_out);

/**
 * # Safety
 * `schedule` must come from a `mcg_schedule_*_new` call (or be null).
 */
void mcg_schedule_free(struct McgSchedule *schedule);

/**
 * Gaussian prior on an `l`-dimensional affine subspace: `mean` has length
 * `n`, `basis` is `n x l` row-major with orthonormal columns, `tau2` the
 * tangent variance.
 *
 * # Safety
 * Array pointers must cover the stated lengths; `out` must be valid.
 */
enum McgStatus mcg_model_gaussian_new(const struct McgSchedule *schedule,
                                      const double *mean,
                                      size_t n,
                                      const double *basis,
                                      size_t l,
                                      double tau2,
                                      struct McgModel **out);

/**
 * Exact mixture score of a finite dataset (`k x n` row-major).
 *
 * # Safety
 * `data` must cover `k * n` doubles; `out` must be valid.
 */
enum McgStatus mcg_model_mixture_new(const struct McgSchedule *schedule,
                                     const double *data,
                                     size_t k,
                                     size_t n,
                                     struct McgModel **out);

/**
 * Loads a serialized score model (any kind, including trained networks).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum McgStatus mcg_model_load(const char *path, struct McgModel **out);

/**
 * Saves a model to the flat binary weight format.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `model` a live handle.
 */
enum McgStatus mcg_model_save(const struct McgModel *model, const char *path);

/**
 * Signal dimension of the model.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t mcg_model_dim(const struct McgModel *model);

/**
 * Evaluates the score `s(x, i)` into `out` (length `n`).
 *
 * # Safety
 * `x` and `out` must cover `n` doubles each.
 */
enum McgStatus mcg_model_score(const struct McgModel *model,
                               const double *x,
                               size_t n,
                               size_t i,
                               double *out);

/**
 * Posterior-mean denoising `Q_i(x)` into `out` (length `n`).
 *
 * # Safety
 * `x` and `out` must cover `n` doubles each.
 */
enum McgStatus mcg_model_tweedie_denoise(const struct McgModel *model,
                                         const double *x,
                                         size_t n,
                                         size_t i,
                                         double *out);

/**
 * # Safety
 * `model` must come from a model constructor (or be null).
 */
void mcg_model_free(struct McgModel *model);

/**
 * Coordinate-selection (inpainting) operator keeping `kept` (0-based,
 * strictly valid indices) out of an `n`-vector.
 *
 * # Safety
 * `kept` must cover `m` entries; `out` must be valid.
 */
enum McgStatus mcg_operator_inpainting_new(size_t n,
                                           const size_t *kept,
                                           size_t m,
                                           struct McgOperator **out);

/**
 * Luminance-first channel-coupling operator over `n_pixels` planar RGB
 * pixels (signal length `3 * n_pixels`).
 *
 * # Safety
 * `out` must be valid.
 */
enum McgStatus mcg_operator_color_new(size_t n_pixels, struct McgOperator **out);

/**
 * Parallel-beam tomography operator over a `side x side` image with
 * `n_views` evenly spaced over 180 degrees and `n_detectors` bins per view.
 *
 * # Safety
 * `out` must be valid.
 */
enum McgStatus mcg_operator_radon_new(size_t side,
                                      size_t n_views,
                                      size_t n_detectors,
                                      struct McgOperator **out);

/**
 * Dense operator from an `m x n` row-major matrix.
 *
 * # Safety
 * `matrix` must cover `m * n` doubles; `out` must be valid.
 */
enum McgStatus mcg_operator_dense_new(const double *matrix,
                                      size_t m,
                                      size_t n,
                                      struct McgOperator **out);

/**
 * Measurement dimension `m`.
 *
 * # Safety
 * `op` must be a live handle.
 */
size_t mcg_operator_m(const struct McgOperator *op);

/**
 * Signal dimension `n`.
 *
 * # Safety
 * `op` must be a live handle.
 */
size_t mcg_operator_n(const struct McgOperator *op);

/**
 * `y = H x`.
 *
 * # Safety
 * `x` must cover `n` doubles, `y_out` must cover `m`.
 */
enum McgStatus mcg_operator_apply(const struct McgOperator *op,
                                  const double *x,
                                  size_t n,
                                  double *y_out,
                                  size_t m);

/**
 * `x = H^T y`.
 *
 * # Safety
 * `y` must cover `m` doubles, `x_out` must cover `n`.
 */
enum McgStatus mcg_operator_apply_transpose(const struct McgOperator *op,
                                            const double *y,
                                            size_t m,
                                            double *x_out,
                                            size_t n);

/**
 * Measurement-consistency projection `A x + b(y)` in place of `x_inout`.
 *
 * # Safety
 * `x_inout` must cover `n` doubles, `y` must cover `m`.
 */
enum McgStatus mcg_operator_consistency_step(const struct McgOperator *op,
                                             double *x_inout,
                                             size_t n,
                                             const double *y,
                                             size_t m);

/**
 * Pseudo-inverse `H^+ y` (transpose for orthonormal-row operators,
 * filtered backprojection for tomography).
 *
 * # Safety
 * `y` must cover `m` doubles, `x_out` must cover `n`.
 */
enum McgStatus mcg_operator_pseudo_inverse(const struct McgOperator *op,
                                           const double *y,
                                           size_t m,
                                           double *x_out,
                                           size_t n);

/**
 * # Safety
 * `op` must come from an operator constructor (or be null).
 */
void mcg_operator_free(struct McgOperator *op);

/**
 * Runs the configured sampler and writes the reconstruction into `x_out`
 * (length `n`). `x_true` may be null; when provided (length `n`) the
 * quality metrics are filled in, otherwise they are NaN.
 *
 * # Safety
 * All non-null pointers must cover their stated lengths.
 */
enum McgStatus mcg_solve(const struct McgModel *model,
                         const struct McgOperator *op,
                         const struct McgSamplerOptions *options,
                         const double *y,
                         size_t m,
                         const double *x_true,
                         double *x_out,
                         size_t n,
                         struct McgSolveMetrics *metrics_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCG_H */
