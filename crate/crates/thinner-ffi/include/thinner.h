#ifndef THINNER_H
#define THINNER_H

/* Generated by cbindgen from the thinner-ffi crate; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call in this library.
typedef enum ThinnerStatus {
  // The call succeeded and its out-parameters are valid.
  THINNER_STATUS_OK = 0,
  // A required pointer argument was null.
  THINNER_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  THINNER_STATUS_INVALID_UTF8 = 2,
  // The operating system reported an I/O failure.
  THINNER_STATUS_IO = 3,
  // A file was read but its contents are not what they claim to be
  // (bad magic, bad checksum, truncation, unsupported version).
  THINNER_STATUS_FORMAT = 4,
  // An argument value was invalid: unparseable JSON, an unknown metric
  // or scheme name, or a configuration field out of range.
  THINNER_STATUS_INVALID_ARGUMENT = 5,
  // The request is structurally impossible, e.g. it would thin a layer
  // below its floor.
  THINNER_STATUS_INFEASIBLE = 6,
  // Any other failure; the error message has the details.
  THINNER_STATUS_INTERNAL = 7,
} ThinnerStatus;

// Opaque handle to a dataset held in memory.
typedef struct ThinnerDataset ThinnerDataset;

// Opaque handle to a model.
typedef struct ThinnerModel ThinnerModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *thinner_version(void);

// Message for the most recent failure on the calling thread. Never null;
// empty when nothing has failed yet. The pointer stays valid until the
// next failing call on the same thread.
const char *thinner_last_error(void);

// Loads a model file and stores a new handle in `*out`.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be valid for writes.
enum ThinnerStatus thinner_model_load(const char *path, struct ThinnerModel **out);

// Writes the model to `path` (atomically: temp file plus rename).
//
// # Safety
// `model` must be a live handle; `path` must be a nul-terminated string.
enum ThinnerStatus thinner_model_save(const struct ThinnerModel *model, const char *path);

// Releases a model handle. Passing null is a no-op.
//
// # Safety
// `model` must be null or a handle not freed before.
void thinner_model_free(struct ThinnerModel *model);

// Stores the number of prunable neurons in `*out`.
//
// # Safety
// `model` must be a live handle; `out` must be valid for writes.
enum ThinnerStatus thinner_model_prunable_neurons(const struct ThinnerModel *model, uintptr_t *out);

// Stores the number of layers in `*out`.
//
// # Safety
// `model` must be a live handle; `out` must be valid for writes.
enum ThinnerStatus thinner_model_layer_count(const struct ThinnerModel *model, uintptr_t *out);

// Stores the total scalar parameter count in `*out`.
//
// # Safety
// `model` must be a live handle; `out` must be valid for writes.
enum ThinnerStatus thinner_model_param_count(const struct ThinnerModel *model, uintptr_t *out);

// Loads an IDX image/label file pair and stores a new handle in `*out`.
//
// # Safety
// `images` and `labels` must be nul-terminated strings; `out` must be
// valid for writes.
enum ThinnerStatus thinner_dataset_load_idx(const char *images,
                                            const char *labels,
                                            struct ThinnerDataset **out);

// Generates a synthetic dataset and stores a new handle in `*out`.
//
// `spec_json` describes the task, e.g.
// `{"task": "bars", "classes": 2, "shape": [1, 16, 16], "noise": 0.1}`.
// Generation is deterministic in (`spec_json`, `n`, `seed`).
//
// # Safety
// `spec_json` must be a nul-terminated string; `out` must be valid for
// writes.
enum ThinnerStatus thinner_dataset_synthetic(const char *spec_json,
                                             uintptr_t n,
                                             uint64_t seed,
                                             struct ThinnerDataset **out);

// Releases a dataset handle. Passing null is a no-op.
//
// # Safety
// `dataset` must be null or a handle not freed before.
void thinner_dataset_free(struct ThinnerDataset *dataset);

// Stores the number of samples in `*out`.
//
// # Safety
// `dataset` must be a live handle; `out` must be valid for writes.
enum ThinnerStatus thinner_dataset_len(const struct ThinnerDataset *dataset, uintptr_t *out);

// Stores the number of classes in `*out`.
//
// # Safety
// `dataset` must be a live handle; `out` must be valid for writes.
enum ThinnerStatus thinner_dataset_classes(const struct ThinnerDataset *dataset, uintptr_t *out);

// Stores the model's classification accuracy on the dataset in
// `*out_accuracy` (a fraction in `[0, 1]`).
//
// # Safety
// `model` and `dataset` must be live handles; `out_accuracy` must be valid
// for writes.
enum ThinnerStatus thinner_evaluate(const struct ThinnerModel *model,
                                    const struct ThinnerDataset *dataset,
                                    double *out_accuracy);

// Scores every prunable neuron with the named metric (`"mean"`, `"std"`
// or `"aaws"`) and writes the table as CSV to `path`.
//
// # Safety
// `model` and `dataset` must be live handles; `metric` and `path` must be
// nul-terminated strings.
enum ThinnerStatus thinner_dump_scores(const struct ThinnerModel *model,
                                       const struct ThinnerDataset *dataset,
                                       const char *metric,
                                       const char *path);

// Prunes a copy of the model and stores the thinned copy in `*out`; the
// input handle is left as it was.
//
// `scheme` is `"global"`, `"layerwise"` or `"sequential"` (the sequential
// scheme reads the configured ratio as a per-layer fraction).
// `config_json` is a JSON object with the same fields as the library's
// pruning configuration; missing fields take their defaults, so `"{}"` is
// accepted. When the config names an artifact directory, per-round
// checkpoints, score dumps and the report files are written there.
//
// # Safety
// `model`, `train_set` and `val_set` must be live handles; `scheme` and
// `config_json` must be nul-terminated strings; `out` must be valid for
// writes.
enum ThinnerStatus thinner_prune(const struct ThinnerModel *model,
                                 const struct ThinnerDataset *train_set,
                                 const struct ThinnerDataset *val_set,
                                 const char *scheme,
                                 const char *config_json,
                                 struct ThinnerModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THINNER_H */
