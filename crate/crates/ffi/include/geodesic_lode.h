#ifndef GEODESIC_LODE_H
#define GEODESIC_LODE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum GlStatus {
  GL_STATUS_OK = 0,
  GL_STATUS_NULL_POINTER = 1,
  GL_STATUS_INVALID_ARGUMENT = 2,
  GL_STATUS_SHAPE_MISMATCH = 3,
  GL_STATUS_UNKNOWN_SYSTEM = 4,
  GL_STATUS_FORMAT = 5,
  GL_STATUS_IO = 6,
  GL_STATUS_NON_FINITE = 7,
  GL_STATUS_RUNTIME = 8,
  GL_STATUS_BUFFER_TOO_SMALL = 9,
  GL_STATUS_PANIC = 10,
} GlStatus;

// Dataset split selector.
typedef enum GlSplit {
  GL_SPLIT_TRAIN = 0,
  GL_SPLIT_VALIDATION = 1,
  GL_SPLIT_TEST = 2,
} GlSplit;

// Opaque dataset handle.
typedef struct GlDataset GlDataset;

// Opaque trained-model handle.
typedef struct GlModel GlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gl_version(void);

// Schema version embedded in every file the library writes.
uint32_t gl_schema_version(void);

// Message of the last failed call on this thread; empty when none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *gl_last_error(void);

// Simulates `count` trajectories of `system` (`dho`, `lane_emden`,
// `lotka_volterra`) from `seed` and stores a new handle in `*out`.
//
// # Safety
// `system` must be a NUL-terminated string and `out` a valid pointer.
enum GlStatus gl_dataset_generate(const char *system,
                                  size_t count,
                                  uint64_t seed,
                                  struct GlDataset **out);

// Reads a `.glds` dataset file.
//
// # Safety
// `file` must be a NUL-terminated string and `out` a valid pointer.
enum GlStatus gl_dataset_load(const char *file, struct GlDataset **out);

// Writes a dataset as a `.glds` file.
//
// # Safety
// `ds` must come from this library and `file` be a NUL-terminated string.
enum GlStatus gl_dataset_save(const struct GlDataset *ds, const char *file);

// Number of trajectories in a split.
//
// # Safety
// `ds` must come from this library and `out` be a valid pointer.
enum GlStatus gl_dataset_len(const struct GlDataset *ds, enum GlSplit which, size_t *out);

// Copies trajectory `index` of a split: `times[n]` and row-major
// `values[n * dim]`. `*out_points` and `*out_dim` are always set; when
// `capacity < n` nothing is copied and `BufferTooSmall` is returned.
//
// # Safety
// `times` and `values` must hold `capacity` and `capacity * dim` doubles.
enum GlStatus gl_dataset_trajectory(const struct GlDataset *ds,
                                    enum GlSplit which,
                                    size_t index,
                                    double *times,
                                    double *values,
                                    size_t capacity,
                                    size_t *out_points,
                                    size_t *out_dim);

// Releases a dataset handle; null is ignored.
//
// # Safety
// `ds` must come from this library and not be used afterwards.
void gl_dataset_free(struct GlDataset *ds);

// Trains a model on `ds`. `config_toml` holds `TrainConfig` keys plus an
// optional `preset`, e.g. `preset = "dho-pathmin"\nsteps = 100`; null means
// the default preset. When `out_dir` is non-null, metrics and checkpoints
// are written there. The best-validation model is returned.
//
// # Safety
// `ds` must come from this library, strings must be NUL-terminated or null,
// and `out` must be a valid pointer.
enum GlStatus gl_model_train(const struct GlDataset *ds,
                             const char *config_toml,
                             const char *out_dir,
                             struct GlModel **out);

// Loads a checkpoint written by training (`best.json`).
//
// # Safety
// `file` must be a NUL-terminated string and `out` a valid pointer.
enum GlStatus gl_model_load(const char *file, struct GlModel **out);

// Writes the model as a checkpoint readable by `gl_model_load`.
//
// # Safety
// `model` must come from this library and `file` be a NUL-terminated string.
enum GlStatus gl_model_save(const struct GlModel *model, const char *file);

// Latent and observed dimensions of a model.
//
// # Safety
// `model` must come from this library; outputs must be valid pointers.
enum GlStatus gl_model_dims(const struct GlModel *model, size_t *out_latent, size_t *out_features);

// Encodes `n` observations (`times[n]`, row-major `values[n * features]`)
// to the mean initial latent state, written to `z[latent]`.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum GlStatus gl_model_encode(const struct GlModel *model,
                              const double *times,
                              const double *values,
                              size_t n,
                              double *z,
                              size_t z_len);

// Reconstructs the observed system at `query[nq]` (strictly increasing)
// from `n` observations; writes row-major `out[nq * features]`.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum GlStatus gl_model_predict(const struct GlModel *model,
                               const double *times,
                               const double *values,
                               size_t n,
                               const double *query,
                               size_t nq,
                               double *out,
                               size_t out_len);

// Releases a model handle; null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void gl_model_free(struct GlModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEODESIC_LODE_H */
