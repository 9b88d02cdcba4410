#ifndef PANNING_H
#define PANNING_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PanningStatus {
  PANNING_STATUS_OK = 0,
  PANNING_STATUS_NULL_POINTER = 1,
  PANNING_STATUS_INVALID_ARGUMENT = 2,
  PANNING_STATUS_MODEL = 3,
  PANNING_STATUS_DATA = 4,
  PANNING_STATUS_PRUNE = 5,
  PANNING_STATUS_CHECKPOINT = 6,
  PANNING_STATUS_FINISHED = 7,
  PANNING_STATUS_PANIC = 8,
} PanningStatus;

/**
 * Labeled samples; each sample is a flat row of `f64`.
 */
typedef struct PanningDataset PanningDataset;

/**
 * Keep/prune flag per weight.
 */
typedef struct PanningMask PanningMask;

/**
 * Network architecture and parameter values.
 */
typedef struct PanningNetwork PanningNetwork;

/**
 * An iterative pruning run in progress.
 */
typedef struct PanningPruneRun PanningPruneRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 *
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *panning_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *panning_version(void);

/**
 * Scheduled pruning ratio after `i` of `t` iterations toward `target`.
 */
double panning_schedule_ratio(size_t i, size_t t, double target);

/**
 * LeNet5 for 1×28×28 inputs, initialized from `seed`.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum PanningStatus panning_network_lenet5(uint64_t seed, struct PanningNetwork **out);

/**
 * ReLU MLP `inputs → hidden[0] → … → classes`, initialized from `seed`.
 *
 * # Safety
 * `hidden` must point to `n_hidden` readable values (or be null when
 * `n_hidden` is 0); `out` must be valid for one pointer write.
 */
enum PanningStatus panning_network_mlp(size_t inputs,
                                       const size_t *hidden,
                                       size_t n_hidden,
                                       size_t classes,
                                       uint64_t seed,
                                       struct PanningNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library not yet freed.
 */
void panning_network_free(struct PanningNetwork *net);

/**
 * Number of prunable weights; 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t panning_network_weight_count(const struct PanningNetwork *net);

/**
 * Copies the flat weight vector into `out[0..len]`; `len` must equal the weight count.
 *
 * # Safety
 * `net` must be a live handle and `out` valid for `len` writes.
 */
enum PanningStatus panning_network_weights(const struct PanningNetwork *net,
                                           double *out,
                                           size_t len);

/**
 * Gaussian-blob classification data with `dims` features per sample.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum PanningStatus panning_dataset_synthetic(size_t classes,
                                             size_t per_class,
                                             size_t dims,
                                             double separation,
                                             uint64_t seed,
                                             struct PanningDataset **out);

/**
 * Dataset from `n` row-major samples of `features` values each.
 *
 * LeNet5 expects `features = 784` laid out as one 28×28 channel.
 *
 * # Safety
 * `values` must hold `n · features` readable doubles, `labels` `n` values,
 * and `out` must be valid for one pointer write.
 */
enum PanningStatus panning_dataset_from_raw(const double *values,
                                            const uint32_t *labels,
                                            size_t n,
                                            size_t features,
                                            size_t classes,
                                            size_t image_side,
                                            struct PanningDataset **out);

/**
 * # Safety
 * `data` must be null or a live handle.
 */
void panning_dataset_free(struct PanningDataset *data);

/**
 * Starts a run pruning `net` to `target` over `iterations` steps, scoring on
 * a balanced batch of `per_class` samples from each of `classes` classes.
 *
 * The run keeps its own copy of the network.
 *
 * # Safety
 * `net` and `data` must be live handles; `out` must be valid for one pointer write.
 */
enum PanningStatus panning_run_new(const struct PanningNetwork *net,
                                   const struct PanningDataset *data,
                                   size_t classes,
                                   size_t per_class,
                                   uint64_t batch_seed,
                                   double target,
                                   size_t iterations,
                                   struct PanningPruneRun **out);

/**
 * # Safety
 * `run` must be null or a live handle.
 */
void panning_run_free(struct PanningPruneRun *run);

/**
 * One iteration with fusion weights `(synflow, snip, grasp)`; they must be
 * finite, nonnegative and not all zero.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum PanningStatus panning_run_step(struct PanningPruneRun *run,
                                    double synflow,
                                    double snip,
                                    double grasp);

/**
 * One iteration with the hand-set banded fusion weights.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum PanningStatus panning_run_step_banded(struct PanningPruneRun *run);

/**
 * Iterations completed; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t panning_run_iteration(const struct PanningPruneRun *run);

/**
 * Whether all scheduled iterations have run; true for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
bool panning_run_is_finished(const struct PanningPruneRun *run);

/**
 * Effective compression of the current mask.
 *
 * # Safety
 * `run` must be a live handle and `out` valid for one write.
 */
enum PanningStatus panning_run_rho_e(const struct PanningPruneRun *run, double *out);

/**
 * Normalized 7-component state: dense loss, dense ΔL, sparse loss, sparse ΔL,
 * scheduled ratio, effective ratio, progress.
 *
 * # Safety
 * `run` must be a live handle and `out` valid for 7 writes.
 */
enum PanningStatus panning_run_state(const struct PanningPruneRun *run, double *out);

/**
 * Copy of the current mask as a new handle.
 *
 * # Safety
 * `run` must be a live handle; `out` must be valid for one pointer write.
 */
enum PanningStatus panning_run_mask(const struct PanningPruneRun *run, struct PanningMask **out);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
void panning_mask_free(struct PanningMask *mask);

/**
 * Number of weights covered; 0 for a null handle.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t panning_mask_len(const struct PanningMask *mask);

/**
 * Number of kept weights; 0 for a null handle.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t panning_mask_kept(const struct PanningMask *mask);

/**
 * Writes 1 for kept and 0 for pruned weights into `out[0..len]`; `len` must equal the mask length.
 *
 * # Safety
 * `mask` must be a live handle and `out` valid for `len` writes.
 */
enum PanningStatus panning_mask_copy(const struct PanningMask *mask, uint8_t *out, size_t len);

/**
 * Fraction of weights that are pruned or lie on no input-to-output path.
 *
 * # Safety
 * `net` and `mask` must be live handles and `out` valid for one write.
 */
enum PanningStatus panning_effective_compression(const struct PanningNetwork *net,
                                                 const struct PanningMask *mask,
                                                 double *out);

/**
 * Saves `net` and `mask` as entry `model` of a new checkpoint at `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `net` and `mask` live handles.
 */
enum PanningStatus panning_checkpoint_save(const char *path,
                                           const struct PanningNetwork *net,
                                           const struct PanningMask *mask);

/**
 * Loads entry `model` of the checkpoint at `path` into two new handles.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_net` and `out_mask` must be
 * valid for one pointer write each.
 */
enum PanningStatus panning_checkpoint_load(const char *path,
                                           struct PanningNetwork **out_net,
                                           struct PanningMask **out_mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANNING_H */
