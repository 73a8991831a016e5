#ifndef MULTIVER_H
#define MULTIVER_H

/* Generated by cbindgen from src/lib.rs; rebuild with `--features headers` to refresh. */

#include <stdbool.h>
#include <stddef.h>

// Result codes.
typedef enum MvStatus {
  MV_STATUS_OK = 0,
  // A required pointer argument was null.
  MV_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  MV_STATUS_INVALID_UTF8 = 2,
  // Bad input: unknown package, revision or CPU name, malformed manifest.
  MV_STATUS_INVALID_INPUT = 3,
  // A build failed; the message names the log file.
  MV_STATUS_BUILD_FAILED = 4,
  // File system or other I/O failure.
  MV_STATUS_IO = 5,
  // A Rust panic was caught at the boundary.
  MV_STATUS_PANIC = 6,
} MvStatus;

typedef struct MvChannel MvChannel;

typedef struct MvDeployment MvDeployment;

typedef struct MvStore MvStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next multiver call on the same thread.
const char *mv_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void mv_string_free(char *s);

// Opens the channel archive at `path`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MvStatus mv_channel_open(const char *path, struct MvChannel **out);

// # Safety
// `ch` must come from `mv_channel_open` (or be null).
void mv_channel_free(struct MvChannel *ch);

// Commit of the named revision (name, full commit or unique prefix).
//
// # Safety
// Pointer arguments must be valid; `out` receives a string to free with
// `mv_string_free`.
enum MvStatus mv_channel_resolve(const struct MvChannel *ch, const char *revision, char **out);

// Opens (creating if needed) the store rooted at `path`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MvStatus mv_store_open(const char *path, struct MvStore **out);

// # Safety
// `store` must come from `mv_store_open` (or be null).
void mv_store_free(struct MvStore *store);

// Detects the micro-architecture described by a `/proc/cpuinfo` dump.
//
// # Safety
// `cpuinfo` must be a NUL-terminated string; `out` receives a string to
// free with `mv_string_free`.
enum MvStatus mv_cpu_detect(const char *cpuinfo, char **out);

// Whether code tuned for `march` can run on the CPU in `cpuinfo`.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum MvStatus mv_cpu_is_compatible(const char *march, const char *cpuinfo, bool *out);

// Lowers `specs` at `revision` (null for the latest) with command-line
// style transformation `options` such as `--tune=skylake`, building the
// closure when `store` is non-null. `--tune` without a CPU name is
// rejected: detect the CPU first and pass its name.
//
// # Safety
// `specs` and `options` must point to `n_specs` / `n_options` valid
// strings; `out` receives a deployment to free with `mv_deployment_free`.
enum MvStatus mv_deploy(const struct MvChannel *ch,
                        const struct MvStore *store,
                        const char *revision,
                        const char *const *specs,
                        size_t n_specs,
                        const char *const *options,
                        size_t n_options,
                        struct MvDeployment **out);

// Rebuilds what a manifest records into `store`.
//
// # Safety
// Pointer arguments must be valid; `out` receives a deployment to free
// with `mv_deployment_free`.
enum MvStatus mv_replay_manifest(const struct MvChannel *ch,
                                 const struct MvStore *store,
                                 const char *manifest,
                                 struct MvDeployment **out);

// # Safety
// `dep` must come from this library (or be null).
void mv_deployment_free(struct MvDeployment *dep);

// Number of requested store paths (one per spec).
//
// # Safety
// `dep` must be a valid deployment or null (yields 0).
size_t mv_deployment_root_count(const struct MvDeployment *dep);

// Store path (`store/<digest>-<name>-<version>/`) of root `index`.
//
// # Safety
// `dep` must be valid; `out` receives a string to free with `mv_string_free`.
enum MvStatus mv_deployment_root(const struct MvDeployment *dep, size_t index, char **out);

// Canonical manifest text recording how the deployment was obtained.
//
// # Safety
// `dep` must be valid; `out` receives a string to free with `mv_string_free`.
enum MvStatus mv_deployment_manifest(const struct MvDeployment *dep, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIVER_H */
