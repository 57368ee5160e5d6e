#ifndef KDLAB_H
#define KDLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Norms for distribution error.
typedef enum KdlabNorm {
  KDLAB_NORM_L1 = 0,
  KDLAB_NORM_L2 = 1,
  KDLAB_NORM_LINF = 2,
} KdlabNorm;

// Dataset splits.
typedef enum KdlabSplit {
  KDLAB_SPLIT_TRAIN = 0,
  KDLAB_SPLIT_HOLDOUT = 1,
  KDLAB_SPLIT_TEMPERATURE_HOLDOUT = 2,
  KDLAB_SPLIT_TEST = 3,
} KdlabSplit;

// Status codes returned by every fallible function.
typedef enum KdlabStatus {
  KDLAB_OK = 0,
  // A required pointer argument was null.
  KDLAB_ERR_NULL = 1,
  // An argument was out of range or inconsistent.
  KDLAB_ERR_INVALID = 2,
  // The config document failed to parse or validate.
  KDLAB_ERR_CONFIG = 3,
  // A dataset, checkpoint or config file does not exist.
  KDLAB_ERR_MISSING = 4,
  KDLAB_ERR_IO = 5,
  // Tensor shapes did not match.
  KDLAB_ERR_SHAPE = 6,
  // Training produced non-finite values.
  KDLAB_ERR_NUMERIC = 7,
  // Malformed external data.
  KDLAB_ERR_PARSE = 8,
  // The dataset carries no ground-truth label distributions.
  KDLAB_ERR_NO_GROUND_TRUTH = 9,
  // A panic was caught at the boundary.
  KDLAB_ERR_INTERNAL = 10,
} KdlabStatus;

// Opaque dataset handle.
typedef struct KdlabDataset KdlabDataset;

// Opaque network handle.
typedef struct KdlabNetwork KdlabNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a
// success. The pointer stays valid until the next call on this thread.
const char *kdlab_last_error(void);

// Library version as a static NUL-terminated string.
const char *kdlab_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library and not yet freed.
void kdlab_string_free(char *s);

// Runs the command-line front end in-process and returns its exit code.
//
// # Safety
// `argv` must point to `argc` valid NUL-terminated strings.
int kdlab_cli_run(int argc, const char *const *argv);

// Samples the dataset described by the `data` section of a config.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` a valid pointer.
enum KdlabStatus kdlab_dataset_generate(const char *config_json, struct KdlabDataset **out);

// Loads a dataset directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` a valid pointer.
enum KdlabStatus kdlab_dataset_load(const char *dir, struct KdlabDataset **out);

// Writes a dataset directory.
//
// # Safety
// `ds` must be a live handle and `dir` a NUL-terminated string.
enum KdlabStatus kdlab_dataset_save(const struct KdlabDataset *ds, const char *dir);

// # Safety
// `ds` must be null or a live handle; it is invalid afterwards.
void kdlab_dataset_free(struct KdlabDataset *ds);

// Example count, patches per input, patch width and class count. Any
// out-pointer may be null.
//
// # Safety
// `ds` must be a live handle; non-null out-pointers must be valid.
enum KdlabStatus kdlab_dataset_shape(const struct KdlabDataset *ds,
                                     uintptr_t *examples,
                                     uintptr_t *patches,
                                     uintptr_t *patch_dim,
                                     uintptr_t *classes);

// Copies the inputs (`examples * patches * patch_dim` values, row-major)
// into `buf` of length `len`.
//
// # Safety
// `ds` must be a live handle and `buf` valid for `len` writes.
enum KdlabStatus kdlab_dataset_inputs(const struct KdlabDataset *ds, double *buf, uintptr_t len);

// Copies the labels into `buf` of length `len` (one per example).
//
// # Safety
// `ds` must be a live handle and `buf` valid for `len` writes.
enum KdlabStatus kdlab_dataset_labels(const struct KdlabDataset *ds, uintptr_t *buf, uintptr_t len);

// A new handle holding one split of `ds`; `split` is a `KdlabSplit` value.
//
// # Safety
// `ds` must be a live handle and `out` a valid pointer.
enum KdlabStatus kdlab_dataset_split(const struct KdlabDataset *ds,
                                     int split,
                                     struct KdlabDataset **out);

// Trains a teacher as configured by the `teacher` section of the config.
// When `out_dir` is non-null, checkpoints are written under it. When
// `record_json` is non-null it receives the run record as JSON.
//
// # Safety
// Pointers must be valid; `out_dir` and `record_json` may be null.
enum KdlabStatus kdlab_train_teacher(const char *config_json,
                                     const struct KdlabDataset *ds,
                                     const char *out_dir,
                                     struct KdlabNetwork **out,
                                     char **record_json);

// Distills a student (the `student` section of the config) from `teacher`.
//
// # Safety
// Pointers must be valid; `record_json` may be null.
enum KdlabStatus kdlab_distill(const char *config_json,
                               const struct KdlabNetwork *teacher,
                               const struct KdlabDataset *ds,
                               struct KdlabNetwork **out,
                               char **record_json);

// Loads the network from a checkpoint directory.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum KdlabStatus kdlab_network_load(const char *dir, struct KdlabNetwork **out);

// Saves the network as a checkpoint directory.
//
// # Safety
// `net` must be a live handle and `dir` a NUL-terminated string.
enum KdlabStatus kdlab_network_save(const struct KdlabNetwork *net, const char *dir);

// # Safety
// `net` must be null or a live handle; it is invalid afterwards.
void kdlab_network_free(struct KdlabNetwork *net);

// Input width and class count. Either out-pointer may be null.
//
// # Safety
// `net` must be a live handle; non-null out-pointers must be valid.
enum KdlabStatus kdlab_network_shape(const struct KdlabNetwork *net,
                                     uintptr_t *input_width,
                                     uintptr_t *classes);

// Class probabilities (rows renormalized onto the simplex) for `rows`
// inputs of the network's input width, written to `probs`
// (`rows * classes` values).
//
// # Safety
// `inputs` must hold `rows * input_width` values and `probs` room for
// `rows * classes`.
enum KdlabStatus kdlab_network_predict(const struct KdlabNetwork *net,
                                       const double *inputs,
                                       uintptr_t rows,
                                       double *probs);

// Mean distance between the network's predictions and the dataset's true
// label distributions; `norm` is a `KdlabNorm` value.
//
// # Safety
// Handles must be live and `out` valid.
enum KdlabStatus kdlab_distribution_error(const struct KdlabNetwork *net,
                                          const struct KdlabDataset *ds,
                                          int norm,
                                          double *out);

// Expected calibration error of `rows x classes` probabilities with
// `bins` equal-width confidence bins.
//
// # Safety
// `probs` must hold `rows * classes` values, `labels` `rows`, `out` valid.
enum KdlabStatus kdlab_ece(const double *probs,
                           const uintptr_t *labels,
                           uintptr_t rows,
                           uintptr_t classes,
                           uintptr_t bins,
                           double *out);

// Mean negative log-likelihood of `rows x classes` probabilities.
//
// # Safety
// `probs` must hold `rows * classes` values, `labels` `rows`, `out` valid.
enum KdlabStatus kdlab_nll(const double *probs,
                           const uintptr_t *labels,
                           uintptr_t rows,
                           uintptr_t classes,
                           double *out);

// Temperature minimizing the NLL of `logits / T` on a holdout.
//
// # Safety
// `logits` must hold `rows * classes` values, `labels` `rows`, `out` valid.
enum KdlabStatus kdlab_fit_temperature(const double *logits,
                                       const uintptr_t *labels,
                                       uintptr_t rows,
                                       uintptr_t classes,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KDLAB_H */
