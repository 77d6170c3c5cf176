/* C interface to the ddn model archives and inference routines.
 *
 * Maintained by hand; must stay in sync with crates/ddn-ffi/src/lib.rs.
 *
 * Conventions:
 *   - Every fallible call returns a DdnStatus; DDN_STATUS_OK is 0. On any
 *     other status, ddn_last_error() holds a message for the calling
 *     thread until its next failing call.
 *   - Handles from ddn_model_load() must be released exactly once with
 *     ddn_model_free(). Strings returned by ddn_version(),
 *     ddn_model_kind(), and ddn_last_error() are borrowed: do not free.
 *   - Output buffers are caller-owned; their exact length is part of the
 *     call contract and is validated.
 *   - No call ever lets a panic cross the boundary; internal panics come
 *     back as DDN_STATUS_PANIC.
 */

#ifndef DDN_H
#define DDN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum DdnStatus {
  DDN_STATUS_OK = 0,
  /* A required pointer argument was null. */
  DDN_STATUS_NULL_ARGUMENT = 1,
  /* A string argument was not valid UTF-8. */
  DDN_STATUS_INVALID_UTF8 = 2,
  DDN_STATUS_IO = 3,
  DDN_STATUS_PARSE = 4,
  DDN_STATUS_VALIDATION = 5,
  DDN_STATUS_DIMENSION = 6,
  /* Archive format version not understood by this build. */
  DDN_STATUS_VERSION = 7,
  DDN_STATUS_DIVERGENCE = 8,
  /* A panic was caught at the FFI boundary. */
  DDN_STATUS_PANIC = 9,
} DdnStatus;

/* Opaque model handle. */
typedef struct DdnModel DdnModel;

/* Library version, as a static NUL-terminated string. */
const char *ddn_version(void);

/* Message of the most recent failure on this thread; empty string if none.
 * Valid until the next failing call on the same thread. */
const char *ddn_last_error(void);

/* Loads a model archive from a UTF-8 path. On DDN_STATUS_OK, *out owns the
 * handle. */
DdnStatus ddn_model_load(const char *path, DdnModel **out);

/* Releases a handle. Null is a no-op. */
void ddn_model_free(DdnModel *model);

/* Archive kind as a static string: "mrf", "dn_lr", "dn_mlp", "backbone",
 * or "ddn". Null handle gives a null pointer. */
const char *ddn_model_kind(const DdnModel *model);

/* Writes the archive's (d, m, n) dimension triple: input feature count,
 * evidence/embedding width, label count. */
DdnStatus ddn_model_dims(const DdnModel *model, size_t *d, size_t *m,
                         size_t *n);

/* Marginal label probabilities from a "ddn" archive by Gibbs sampling with
 * the mixture estimator. features must hold n_features doubles (the
 * model's d); out must hold out_len doubles (the model's n). n_samples
 * must be >= 1; burn_in may be 0. */
DdnStatus ddn_ddn_marginals(const DdnModel *model, const double *features,
                            size_t n_features, size_t n_samples,
                            size_t burn_in, uint64_t seed, double *out,
                            size_t out_len);

/* Marginal label probabilities from an "mrf" archive; MAP answers come
 * back as degenerate 0/1 values. evidence holds n_evidence continuous
 * activations, binarized at tau_e (strictly greater reads as 1).
 * method: 0 exact, 1 Gibbs, 2 belief propagation, 3 MAP. n_samples and
 * seed apply to the sampling methods; exact and BP run with library
 * defaults. out must hold out_len doubles (the model's n). */
DdnStatus ddn_mrf_marginals(const DdnModel *model, const double *evidence,
                            size_t n_evidence, int32_t method,
                            size_t n_samples, uint64_t seed, double tau_e,
                            double *out, size_t out_len);

/* out[i] = probs[i] > threshold, for len entries. threshold must lie in
 * [0, 1]. */
DdnStatus ddn_threshold(const double *probs, size_t len, double threshold,
                        uint8_t *out);

#ifdef __cplusplus
}
#endif

#endif /* DDN_H */
