#ifndef SUPERINFO_H
#define SUPERINFO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SiStatus {
  SI_STATUS_OK = 0,
  SI_STATUS_NULL_POINTER = 1,
  SI_STATUS_INVALID_ARGUMENT = 2,
  SI_STATUS_INVALID_DISTRIBUTION = 3,
  SI_STATUS_IO = 4,
  SI_STATUS_FORMAT = 5,
  SI_STATUS_NUMERIC = 6,
  SI_STATUS_PANIC = 7,
} SiStatus;

/**
 * A dataset container loaded from disk.
 */
typedef struct SiDataset SiDataset;

/**
 * A validated joint distribution over named discrete variables.
 */
typedef struct SiJoint SiJoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or NULL after a
 * success. Valid until the next call into the library on this thread.
 */
const char *si_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *si_version(void);

/**
 * Builds a joint from `n_vars` variables (names and cardinalities) and a
 * row-major probability table whose first variable varies slowest.
 *
 * # Safety
 * `names` must hold `n_vars` NUL-terminated strings, `cards` `n_vars`
 * values, `probs` `n_probs` values; `out` must be writable.
 */
enum SiStatus si_joint_new(const char *const *names,
                           const uintptr_t *cards,
                           uintptr_t n_vars,
                           const double *probs,
                           uintptr_t n_probs,
                           struct SiJoint **out);

/**
 * Parses a joint from the CSV format (`var:<name>:<card>` columns, then `p`).
 *
 * # Safety
 * `csv` must be NUL-terminated; `out` must be writable.
 */
enum SiStatus si_joint_from_csv(const char *csv, struct SiJoint **out);

/**
 * Releases a joint. NULL is ignored.
 *
 * # Safety
 * `joint` must come from this library and not be used afterwards.
 */
void si_joint_free(struct SiJoint *joint);

/**
 * Number of variables in the joint.
 *
 * # Safety
 * `joint` must be a live handle; `out` must be writable.
 */
enum SiStatus si_joint_num_variables(const struct SiJoint *joint, uintptr_t *out);

/**
 * `H(subset)` in nats.
 *
 * # Safety
 * `joint` must be a live handle, `subset` NUL-terminated, `out` writable.
 */
enum SiStatus si_entropy(const struct SiJoint *joint, const char *subset, double *out);

/**
 * `I(a; b)` in nats.
 *
 * # Safety
 * `joint` must be a live handle, `a` and `b` NUL-terminated, `out` writable.
 */
enum SiStatus si_mutual_info(const struct SiJoint *joint,
                             const char *a,
                             const char *b,
                             double *out);

/**
 * `I(a; b | c)` in nats.
 *
 * # Safety
 * `joint` must be a live handle, the sets NUL-terminated, `out` writable.
 */
enum SiStatus si_conditional_mi(const struct SiJoint *joint,
                                const char *a,
                                const char *b,
                                const char *c,
                                double *out);

/**
 * `I(a; b; c) = I(a; c) - I(a; c | b)` in nats; may be negative.
 *
 * # Safety
 * `joint` must be a live handle, the sets NUL-terminated, `out` writable.
 */
enum SiStatus si_interaction_info(const struct SiJoint *joint,
                                  const char *a,
                                  const char *b,
                                  const char *c,
                                  double *out);

/**
 * `0.5 ln(1 + w^2 / s^2)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SiStatus si_gaussian_linear_mi(double weight, double noise_std, double *out);

/**
 * NT-Xent loss of two row-major `n x dim` embedding batches.
 *
 * # Safety
 * `z1` and `z2` must hold `n * dim` values; `out` must be writable.
 */
enum SiStatus si_nt_xent(const double *z1,
                         const double *z2,
                         uintptr_t n,
                         uintptr_t dim,
                         double tau,
                         double *out);

/**
 * KL from `N(mu, exp(logvar))` to `N(0, I)`, summed over dims and averaged
 * over the `n` rows.
 *
 * # Safety
 * `mu` and `logvar` must hold `n * dim` values; `out` must be writable.
 */
enum SiStatus si_gaussian_kl(const double *mu,
                             const double *logvar,
                             uintptr_t n,
                             uintptr_t dim,
                             double *out);

/**
 * `l_cl + sum(lambda_i * part_i)` for `parts = [l_cl, l_kl_1, l_kl_2, l_re_1,
 * l_re_2]` and `lambdas = [lambda1, lambda2, lambda3, lambda4]`.
 *
 * # Safety
 * `parts` must hold 5 values, `lambdas` 4; `out` must be writable.
 */
enum SiStatus si_superinfo_total(const double *parts, const double *lambdas, double *out);

/**
 * Runs the identity suites; `all_passed` receives 1 or 0.
 *
 * # Safety
 * `all_passed` must be writable.
 */
enum SiStatus si_run_mi_checks(uintptr_t trials, uint64_t seed, int *all_passed);

/**
 * Loads a dataset container file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum SiStatus si_dataset_load(const char *path, struct SiDataset **out);

/**
 * Releases a dataset. NULL is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void si_dataset_free(struct SiDataset *dataset);

/**
 * Sample count, flattened sample width, and whether labels are present.
 *
 * # Safety
 * `dataset` must be a live handle; the out-pointers must be writable.
 */
enum SiStatus si_dataset_shape(const struct SiDataset *dataset,
                               uintptr_t *n,
                               uintptr_t *dim,
                               int *has_labels);

/**
 * Copies the row-major samples into `out`, which must hold exactly
 * `n * dim` floats.
 *
 * # Safety
 * `dataset` must be a live handle; `out` must hold `len` floats.
 */
enum SiStatus si_dataset_samples(const struct SiDataset *dataset, float *out, uintptr_t len);

/**
 * Copies the labels into `out`, which must hold exactly `n` values.
 *
 * # Safety
 * `dataset` must be a live handle; `out` must hold `len` values.
 */
enum SiStatus si_dataset_labels(const struct SiDataset *dataset, uint32_t *out, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPERINFO_H */
