#ifndef MLOSIM_H
#define MLOSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Delay value used for frames that never completed.
#define MLOSIM_DELAY_LOST UINT64_MAX

typedef enum MlosimStatus {
  MLOSIM_STATUS_OK = 0,
  MLOSIM_STATUS_NULL_POINTER = 1,
  MLOSIM_STATUS_INVALID_UTF8 = 2,
  MLOSIM_STATUS_INVALID_CONFIG = 3,
  MLOSIM_STATUS_IO = 4,
  MLOSIM_STATUS_INVARIANT = 5,
  MLOSIM_STATUS_OUT_OF_RANGE = 6,
  MLOSIM_STATUS_PANIC = 7,
} MlosimStatus;

typedef enum MlosimStream {
  MLOSIM_STREAM_DL_VIDEO = 0,
  MLOSIM_STREAM_UL_VIDEO = 1,
  MLOSIM_STREAM_POSE = 2,
} MlosimStream;

// Opaque handle over the merged records of one multi-seed run.
typedef struct MlosimResults MlosimResults;

// Opaque scenario handle.
typedef struct MlosimScenario MlosimScenario;

typedef struct MlosimRecord {
  uint64_t seed;
  uint16_t station;
  enum MlosimStream stream;
  uint64_t frame_index;
  // Microseconds, or `MLOSIM_DELAY_LOST`.
  uint64_t delay_us;
} MlosimRecord;

typedef struct MlosimVerdict {
  bool enabled;
  bool pass;
  // Worst per-station 99th percentile, or `MLOSIM_DELAY_LOST`.
  uint64_t worst_p99_us;
  // -1 when the stream recorded no frames.
  int32_t worst_station;
  uint64_t pdb_us;
} MlosimVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library from the same thread.
const char *mlosim_last_error(void);

const char *mlosim_version(void);

// New scenario with the built-in defaults.
struct MlosimScenario *mlosim_scenario_default(void);

// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer.
enum MlosimStatus mlosim_scenario_from_toml(const char *toml, struct MlosimScenario **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum MlosimStatus mlosim_scenario_from_file(const char *path, struct MlosimScenario **out);

// # Safety
// `scn` must come from this library or be NULL.
void mlosim_scenario_free(struct MlosimScenario *scn);

// # Safety
// `scn` must be a live scenario handle.
enum MlosimStatus mlosim_scenario_set_n_sta(struct MlosimScenario *scn, uint16_t n_sta);

// Replaces the seed list.
//
// # Safety
// `scn` must be a live scenario handle; `seeds` must point to `len` values.
enum MlosimStatus mlosim_scenario_set_seeds(struct MlosimScenario *scn,
                                            const uint64_t *seeds,
                                            uintptr_t len);

// Sets the policy and link set by name, e.g. `"greedy"` and `"2x40"`.
// `"sl"` with a multi-link set maps to a single link of the same total
// bandwidth.
//
// # Safety
// `scn` must be a live scenario handle; both strings NUL-terminated.
enum MlosimStatus mlosim_scenario_set_variant(struct MlosimScenario *scn,
                                              const char *policy,
                                              const char *links);

// Runs every seed of the scenario.
//
// # Safety
// `scn` must be a live scenario handle and `out` a writable pointer.
enum MlosimStatus mlosim_run(const struct MlosimScenario *scn, struct MlosimResults **out);

// # Safety
// `res` must come from this library or be NULL.
void mlosim_results_free(struct MlosimResults *res);

// Number of records, or 0 for NULL.
//
// # Safety
// `res` must be a live results handle or NULL.
uintptr_t mlosim_results_len(const struct MlosimResults *res);

// # Safety
// `res` must be a live results handle and `out` a writable pointer.
enum MlosimStatus mlosim_results_get(const struct MlosimResults *res,
                                     uintptr_t index,
                                     struct MlosimRecord *out);

// Verdict of one stream. Disabled streams report `enabled = false, pass = true`.
//
// # Safety
// `res` must be a live results handle and `out` a writable pointer.
enum MlosimStatus mlosim_results_verdict(const struct MlosimResults *res,
                                         enum MlosimStream stream,
                                         struct MlosimVerdict *out);

// True if every enabled stream meets its delay budget.
//
// # Safety
// `res` must be a live results handle or NULL.
bool mlosim_results_pass(const struct MlosimResults *res);

// Writes the per-frame delay table as CSV.
//
// # Safety
// `res` must be a live results handle; `path` NUL-terminated.
enum MlosimStatus mlosim_results_write_csv(const struct MlosimResults *res, const char *path);

// Largest station count whose verdict passes, searching upward from 1.
// `capped` is set when the search hit the configured ceiling.
//
// # Safety
// `scn` must be a live scenario handle; `max_sta` writable; `capped` may be NULL.
enum MlosimStatus mlosim_capacity(const struct MlosimScenario *scn,
                                  uint16_t *max_sta,
                                  bool *capped);

// Nearest-rank percentile of `delays` (`MLOSIM_DELAY_LOST` counts as
// infinite), `p` in (0, 1].
//
// # Safety
// `delays` must point to `len` values and `out` must be writable.
enum MlosimStatus mlosim_percentile(const uint64_t *delays, uintptr_t len, double p, uint64_t *out);

// Splits `n` MPDUs over `links` links as evenly as possible; `out` receives
// `links` counts.
//
// # Safety
// `out` must point to `links` writable values.
enum MlosimStatus mlosim_uniform_split(uintptr_t n, uintptr_t links, uintptr_t *out);

// Largest-remainder apportionment of `n` MPDUs proportional to `weights`.
// Negative or non-finite weights are rejected.
//
// # Safety
// `weights` must point to `links` values and `out` to `links` writable values.
enum MlosimStatus mlosim_apportion(const double *weights,
                                   uintptr_t links,
                                   uintptr_t n,
                                   uintptr_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLOSIM_H */
