#ifndef GCM_H
#define GCM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum GcmStatus {
  GCM_STATUS_OK = 0,
  GCM_STATUS_NULL_POINTER = 1,
  GCM_STATUS_INVALID_ARGUMENT = 2,
  GCM_STATUS_PARSE = 3,
  GCM_STATUS_DEGENERATE = 4,
  GCM_STATUS_NON_CONVERGENCE = 5,
  GCM_STATUS_IO = 6,
  GCM_STATUS_PANIC = 7,
} GcmStatus;

// Inference method selector.
typedef enum GcmMethod {
  GCM_METHOD_DS = 0,
  GCM_METHOD_GMM = 1,
  GCM_METHOD_RANSAC = 2,
} GcmMethod;

// The outcome of inference on one scene.
typedef struct GcmResult GcmResult;

// One scene of observed parts.
typedef struct GcmScene GcmScene;

// A set of object templates.
typedef struct GcmTemplateSet GcmTemplateSet;

// Pose `(tx, ty, s·cos θ, s·sin θ)`.
typedef struct GcmPose {
  double tx;
  double ty;
  double sc;
  double ss;
} GcmPose;

// Segmentation accuracy, adjusted Rand index, variation of information and
// scene accuracy of one prediction.
typedef struct GcmMetrics {
  double sa;
  double ari;
  double vi;
  double scene_acc;
} GcmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gcm_version(void);

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into the library from this thread.
const char *gcm_last_error_message(void);

// Releases a string returned by the library.
//
// # Safety
// `s` must be null or a pointer obtained from this library, freed once.
void gcm_string_free(char *s);

// The benchmark set: two squares and a triangle.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum GcmStatus gcm_template_set_standard(struct GcmTemplateSet **out);

// Parses a template set from JSON (a list of templates).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum GcmStatus gcm_template_set_from_json(const char *json, struct GcmTemplateSet **out);

// # Safety
// `set` must be null or a handle from this library, freed once.
void gcm_template_set_free(struct GcmTemplateSet *set);

// Number of templates in `set`, 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
size_t gcm_template_set_len(const struct GcmTemplateSet *set);

// Total number of template parts in `set`, 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
size_t gcm_template_set_n_slots(const struct GcmTemplateSet *set);

// A scene from `n_points` interleaved `(x, y)` pairs.
//
// # Safety
// `xy` must point to `2 * n_points` doubles; `out` must be writable.
enum GcmStatus gcm_scene_from_points(const double *xy, size_t n_points, struct GcmScene **out);

// Parses one scene from JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum GcmStatus gcm_scene_from_json(const char *json, struct GcmScene **out);

// Draw `index` of the benchmark protocol over `templates` at noise `sigma`
// with object presence probability `presence`. Draws that select no object
// are redrawn from the same stream.
//
// # Safety
// `templates` must be a live handle; `out` must be writable.
enum GcmStatus gcm_scene_generate(const struct GcmTemplateSet *templates,
                                  double sigma,
                                  double presence,
                                  uint64_t seed,
                                  uint64_t index,
                                  struct GcmScene **out);

// # Safety
// `scene` must be null or a handle from this library, freed once.
void gcm_scene_free(struct GcmScene *scene);

// Number of observed points, 0 for a null handle.
//
// # Safety
// `scene` must be null or a live handle.
size_t gcm_scene_len(const struct GcmScene *scene);

// Ground-truth labels over `n_slots` elements (see [`gcm_result_labels`]).
//
// # Safety
// `scene` must be a live handle; `labels` must hold `n_slots` values.
enum GcmStatus gcm_scene_ground_truth(const struct GcmScene *scene, size_t n_slots, size_t *labels);

// Serializes a scene to JSON; release with [`gcm_string_free`].
//
// # Safety
// `scene` must be a live handle; `out` must be writable.
enum GcmStatus gcm_scene_to_json(const struct GcmScene *scene, char **out);

// Runs `method` with default settings and `seed`.
//
// # Safety
// `scene` and `templates` must be live handles; `out` must be writable.
enum GcmStatus gcm_infer(const struct GcmScene *scene,
                         const struct GcmTemplateSet *templates,
                         enum GcmMethod method,
                         uint64_t seed,
                         struct GcmResult **out);

// # Safety
// `result` must be null or a handle from this library, freed once.
void gcm_result_free(struct GcmResult *result);

// Length of the label vector (the template slot count).
//
// # Safety
// `result` must be null or a live handle.
size_t gcm_result_n_labels(const struct GcmResult *result);

// Writes the decoded partition: entry `m < M` is 0 for an unexplained point
// or `k + 1` for a point assigned to template `k`; the remaining entries are
// the unobserved slots and are 0.
//
// # Safety
// `result` must be a live handle; `labels` must hold `len` values.
enum GcmStatus gcm_result_labels(const struct GcmResult *result, size_t *labels, size_t len);

// Pose of template `k`; `present` is set to false (and `pose` left
// untouched) when the object was not detected.
//
// # Safety
// `result` must be a live handle; `pose` and `present` must be writable.
enum GcmStatus gcm_result_pose(const struct GcmResult *result,
                               size_t k,
                               struct GcmPose *pose,
                               bool *present);

// Whether inference met its convergence criterion.
//
// # Safety
// `result` must be null or a live handle.
bool gcm_result_converged(const struct GcmResult *result);

// Serializes a result to JSON; release with [`gcm_string_free`].
//
// # Safety
// `result` must be a live handle; `out` must be writable.
enum GcmStatus gcm_result_to_json(const struct GcmResult *result, char **out);

// All four metrics of `pred` against `truth`, both label vectors of length
// `n` in the layout of [`gcm_result_labels`].
//
// # Safety
// `truth` and `pred` must hold `n` values; `out` must be writable.
enum GcmStatus gcm_metrics(const size_t *truth,
                           const size_t *pred,
                           size_t n,
                           struct GcmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GCM_H */
