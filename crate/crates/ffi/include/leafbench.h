#ifndef LEAFBENCH_H
#define LEAFBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define LB_OK 0

#define LB_ERR_NULL_POINTER 1

#define LB_ERR_INVALID_UTF8 2

#define LB_ERR_BUFFER_TOO_SMALL 3

#define LB_ERR_PANIC 99

#define LB_SPLIT_TRAIN 0

#define LB_SPLIT_VAL 1

#define LB_SPLIT_TEST 2

typedef struct LbConfusion LbConfusion;

typedef struct LbManifest LbManifest;

typedef struct LbModel LbModel;

typedef struct LbSplit LbSplit;

/**
 * Aggregate scores of a confusion matrix.
 */
typedef struct LbSummary {
  double accuracy;
  double weighted_precision;
  double weighted_recall;
  double weighted_f1;
  double macro_f1;
  double mean_binary_accuracy;
} LbSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The caller
 * owns the returned string and releases it with [`lb_string_free`].
 */
char *lb_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void lb_string_free(char *s);

/**
 * Library version; static storage, do not free.
 */
const char *lb_version(void);

/**
 * Loads an `image_id,label` manifest with the five-class registry.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
int32_t lb_manifest_load(const char *path, struct LbManifest **out);

/**
 * # Safety
 * `m` must be a live manifest handle or NULL.
 */
size_t lb_manifest_len(const struct LbManifest *m);

/**
 * Writes the per-class counts into `counts[0..cap]`.
 *
 * # Safety
 * `counts` must point to `cap` writable values.
 */
int32_t lb_manifest_class_counts(const struct LbManifest *m, size_t *counts, size_t cap);

/**
 * # Safety
 * `m` must come from [`lb_manifest_load`] and not be used afterwards.
 */
void lb_manifest_free(struct LbManifest *m);

/**
 * # Safety
 * `m` must be a live manifest handle and `out` a writable pointer.
 */
int32_t lb_split_stratified(const struct LbManifest *m,
                            double train,
                            double val,
                            double test,
                            uint64_t seed,
                            struct LbSplit **out);

/**
 * Number of records in split `kind` (`LB_SPLIT_*`), or 0 for a bad handle.
 *
 * # Safety
 * `s` must be a live split handle or NULL.
 */
size_t lb_split_size(const struct LbSplit *s, int32_t kind);

/**
 * Copies the manifest indices of split `kind` into `out[0..cap]`.
 *
 * # Safety
 * `out` must point to `cap` writable values.
 */
int32_t lb_split_indices(const struct LbSplit *s, int32_t kind, size_t *out, size_t cap);

/**
 * Writes `train.txt`, `val.txt`, `test.txt` and `split.json` into `dir`.
 *
 * # Safety
 * Handles must be live and `dir` a NUL-terminated string.
 */
int32_t lb_split_write_files(const struct LbSplit *s, const struct LbManifest *m, const char *dir);

/**
 * # Safety
 * `s` must come from [`lb_split_stratified`] and not be used afterwards.
 */
void lb_split_free(struct LbSplit *s);

/**
 * Counts `n` label pairs over `num_classes` classes.
 *
 * # Safety
 * `y_true` and `y_pred` must each point to `n` readable values.
 */
int32_t lb_confusion_new(const size_t *y_true,
                         const size_t *y_pred,
                         size_t n,
                         size_t num_classes,
                         struct LbConfusion **out);

/**
 * Count of samples with true class `truth` predicted as `pred`; 0 when
 * out of range.
 *
 * # Safety
 * `cm` must be a live handle or NULL.
 */
uint64_t lb_confusion_get(const struct LbConfusion *cm, size_t truth, size_t pred);

/**
 * # Safety
 * `cm` must be a live handle and `out` writable.
 */
int32_t lb_confusion_summary(const struct LbConfusion *cm, struct LbSummary *out);

/**
 * Rendered classification report; NULL on a bad handle. Free with
 * [`lb_string_free`].
 *
 * # Safety
 * `cm` must be a live handle or NULL.
 */
char *lb_confusion_report(const struct LbConfusion *cm);

/**
 * # Safety
 * `cm` must come from [`lb_confusion_new`] and not be used afterwards.
 */
void lb_confusion_free(struct LbConfusion *cm);

/**
 * Seeded random network for `arch` with a `num_classes` softmax head.
 * `full_scale` selects the published widths and depths instead of the
 * reduced desk-scale backbone.
 *
 * # Safety
 * `arch` must be a NUL-terminated string and `out` writable.
 */
int32_t lb_model_create(const char *arch,
                        size_t num_classes,
                        size_t input_size,
                        bool full_scale,
                        uint64_t seed,
                        struct LbModel **out);

/**
 * # Safety
 * `m` must be a live handle or NULL.
 */
size_t lb_model_param_count(const struct LbModel *m);

/**
 * # Safety
 * `m` must be a live handle or NULL.
 */
size_t lb_model_num_classes(const struct LbModel *m);

/**
 * Class probabilities for `n` preprocessed images stored as NCHW floats of
 * side `input_size`. Writes `n * num_classes` values into `probs`.
 *
 * # Safety
 * `pixels` must hold `n * 3 * side * side` floats and `probs` must have
 * room for `cap` doubles.
 */
int32_t lb_model_predict(const struct LbModel *m,
                         const float *pixels,
                         size_t n,
                         double *probs,
                         size_t cap);

/**
 * # Safety
 * `m` must be a live handle and `path` a NUL-terminated string.
 */
int32_t lb_model_save(const struct LbModel *m, const char *path);

/**
 * Replaces the weights of `m` with those stored at `path`.
 *
 * # Safety
 * `m` must be a live handle and `path` a NUL-terminated string.
 */
int32_t lb_model_load(struct LbModel *m, const char *path);

/**
 * # Safety
 * `m` must come from [`lb_model_create`] and not be used afterwards.
 */
void lb_model_free(struct LbModel *m);

/**
 * Runs one architecture of the experiment described by the JSON config at
 * `config_path` and fills `out` with its test scores.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` may be NULL.
 */
int32_t lb_experiment_run(const char *config_path, const char *arch, struct LbSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEAFBENCH_H */
