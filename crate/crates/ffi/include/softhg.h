#ifndef SOFTHG_H
#define SOFTHG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SoftHgActivation {
  SOFT_HG_ACTIVATION_RELU = 0,
  SOFT_HG_ACTIVATION_GELU = 1,
  SOFT_HG_ACTIVATION_IDENTITY = 2,
} SoftHgActivation;

typedef enum SoftHgNorm {
  /**
   * Softmax over vertices, per hyperedge.
   */
  SOFT_HG_NORM_ENORM = 0,
  /**
   * Softmax over hyperedges, per vertex.
   */
  SOFT_HG_NORM_VNORM = 1,
  SOFT_HG_NORM_NONE = 2,
} SoftHgNorm;

typedef enum SoftHgStatus {
  SOFT_HG_STATUS_OK = 0,
  SOFT_HG_STATUS_NULL_POINTER = 1,
  /**
   * Buffer sizes or matrix shapes do not fit together.
   */
  SOFT_HG_STATUS_SHAPE = 2,
  /**
   * Invalid configuration value.
   */
  SOFT_HG_STATUS_CONFIG = 3,
  /**
   * Non-finite values or a degenerate structure.
   */
  SOFT_HG_STATUS_NUMERIC = 4,
  /**
   * File or JSON error.
   */
  SOFT_HG_STATUS_IO = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  SOFT_HG_STATUS_PANIC = 6,
} SoftHgStatus;

/**
 * Parameters of one block.
 */
typedef struct SoftHgBlock SoftHgBlock;

/**
 * Rolling selection statistics for sparse hyperedge selection.
 */
typedef struct SoftHgSes SoftHgSes;

typedef struct SoftHgBlockConfig {
  size_t dim;
  size_t edge_dim;
  size_t out_dim;
  size_t hyperedges;
  size_t heads;
  enum SoftHgNorm norm;
  enum SoftHgActivation activation;
  bool residual;
  /**
   * Hidden width of a two-layer offset network; 0 selects a single
   * affine layer.
   */
  size_t offset_hidden;
} SoftHgBlockConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *softhg_version(void);

/**
 * Message of the last failed call on this thread, or null if none. Valid
 * until the next failing call on the same thread.
 */
const char *softhg_last_error_message(void);

/**
 * Fills `out` with the default block configuration for width `dim`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum SoftHgStatus softhg_block_config_default(size_t dim, struct SoftHgBlockConfig *out);

/**
 * Creates a block with seeded random parameters.
 *
 * # Safety
 * `cfg` must point to a valid config and `out` to writable handle storage.
 */
enum SoftHgStatus softhg_block_new_random(const struct SoftHgBlockConfig *cfg,
                                          uint64_t seed,
                                          struct SoftHgBlock **out);

/**
 * Loads block parameters from a JSON tensor file written by
 * [`softhg_block_save_json`] or `softhg train --save-params`.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `cfg` a valid config and `out`
 * writable handle storage.
 */
enum SoftHgStatus softhg_block_load_json(const char *path,
                                         const struct SoftHgBlockConfig *cfg,
                                         struct SoftHgBlock **out);

/**
 * # Safety
 * `b` must be a live handle and `path` a NUL-terminated string.
 */
enum SoftHgStatus softhg_block_save_json(const struct SoftHgBlock *b, const char *path);

/**
 * Copies the block's configuration into `out`.
 *
 * # Safety
 * `b` must be a live handle and `out` writable.
 */
enum SoftHgStatus softhg_block_config(const struct SoftHgBlock *b, struct SoftHgBlockConfig *out);

/**
 * # Safety
 * `b` must be null or a handle not yet freed.
 */
void softhg_block_free(struct SoftHgBlock *b);

/**
 * Forward pass over `n` tokens of width `d`; writes `n × out_dim` values.
 *
 * # Safety
 * `x` must hold `n * d` doubles and `out` at least `out_len`.
 */
enum SoftHgStatus softhg_block_forward(const struct SoftHgBlock *b,
                                       const double *x,
                                       size_t n,
                                       size_t d,
                                       double *out,
                                       size_t out_len);

/**
 * Forward pass with sparse selection. The block must have
 * `m_fixed + m_dyn` hyperedges. The selection is recorded in `s`, and the
 * resulting load-balancing loss is written to `l_lb` when non-null.
 *
 * # Safety
 * As [`softhg_block_forward`]; `s` must be a live selection handle.
 */
enum SoftHgStatus softhg_block_forward_ses(const struct SoftHgBlock *b,
                                           struct SoftHgSes *s,
                                           const double *x,
                                           size_t n,
                                           size_t d,
                                           double *out,
                                           size_t out_len,
                                           double *l_lb);

/**
 * # Safety
 * `out` must be writable handle storage.
 */
enum SoftHgStatus softhg_ses_new(size_t m_fixed,
                                 size_t m_dyn,
                                 size_t k,
                                 size_t window,
                                 struct SoftHgSes **out);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void softhg_ses_free(struct SoftHgSes *s);

/**
 * Records one pass that selected the dynamic hyperedges `sel[0..len]`.
 *
 * # Safety
 * `s` must be live, `sel` must hold `len` values, `l_lb` null or writable.
 */
enum SoftHgStatus softhg_ses_record(struct SoftHgSes *s,
                                    const size_t *sel,
                                    size_t len,
                                    double *l_lb);

/**
 * Copies the `m_dyn` activation probabilities into `out`.
 *
 * # Safety
 * `s` must be live and `out` hold at least `out_len` doubles.
 */
enum SoftHgStatus softhg_ses_probabilities(const struct SoftHgSes *s, double *out, size_t out_len);

/**
 * Runs the gradient check on a small random block. `passed` receives the
 * verdict and `worst_rel_error` the largest relative error seen; both may
 * be null.
 *
 * # Safety
 * Non-null output pointers must be writable.
 */
enum SoftHgStatus softhg_gradcheck(enum SoftHgNorm norm,
                                   bool residual,
                                   uint64_t seed,
                                   bool *passed,
                                   double *worst_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTHG_H */
