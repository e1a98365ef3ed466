#ifndef VODSWARM_H
#define VODSWARM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum VsStatus {
  VS_STATUS_OK = 0,
  VS_STATUS_NULL_POINTER = 1,
  VS_STATUS_INVALID_UTF8 = 2,
  VS_STATUS_PARSE_ERROR = 3,
  VS_STATUS_INVALID_ARGUMENT = 4,
  VS_STATUS_INTERNAL = 5,
} VsStatus;

// A position popularity record.
typedef struct VsRecord VsRecord;

// A parsed or generated workload.
typedef struct VsWorkload VsWorkload;

// Message for the last failed call on this thread, or NULL. Owned by
// the library; valid until the next call on this thread.
const char *vs_last_error_message(void);

// Parses a trace. `object_length` and `window` override the metadata
// comment when positive.
//
// # Safety
// `text` must be a NUL-terminated string and `out_workload` a valid pointer.
enum VsStatus vs_workload_parse(const char *text,
                                double object_length,
                                double window,
                                struct VsWorkload **out_workload);

// Generates a synthetic workload for profile `"hi"`, `"mi"` or `"li"`.
//
// # Safety
// `profile` must be a NUL-terminated string and `out_workload` a valid pointer.
enum VsStatus vs_workload_generate(const char *profile,
                                   uint32_t sessions,
                                   double object_length,
                                   uint64_t seed,
                                   struct VsWorkload **out_workload);

// # Safety
// `workload` must come from this library and not be freed twice. NULL is ignored.
void vs_workload_free(struct VsWorkload *workload);

// # Safety
// `workload` must be a live handle and `out_count` a valid pointer.
enum VsStatus vs_workload_session_count(const struct VsWorkload *workload, size_t *out_count);

// Serializes the workload as a trace.
//
// # Safety
// `workload` must be a live handle and `out_text` a valid pointer.
enum VsStatus vs_workload_to_trace(const struct VsWorkload *workload, char **out_text);

// Dispersion report (`n`, `temporal_dispersion`, `p`, `m`, `d`,
// `category`) as JSON.
//
// # Safety
// `workload` must be a live handle and `out_json` a valid pointer.
enum VsStatus vs_workload_analyze_json(const struct VsWorkload *workload,
                                       double granularity,
                                       char **out_json);

// Empty record of `horizon` bins, each `granularity` seconds wide.
//
// # Safety
// `out_record` must be a valid pointer.
enum VsStatus vs_record_new(double granularity, size_t horizon, struct VsRecord **out_record);

// # Safety
// `record` must be a live handle.
enum VsStatus vs_record_add(struct VsRecord *record, size_t position, uint64_t count);

// # Safety
// `record` must come from this library and not be freed twice. NULL is ignored.
void vs_record_free(struct VsRecord *record);

// # Safety
// `record` must be a live handle and `out_value` a valid pointer.
enum VsStatus vs_record_sharing_potential(const struct VsRecord *record, uint64_t *out_value);

// # Safety
// `record` must be a live handle and `out_value` a valid pointer.
enum VsStatus vs_record_total_mass(const struct VsRecord *record, uint64_t *out_value);

// Fails with `VS_STATUS_INVALID_ARGUMENT` on an empty record.
//
// # Safety
// `record` must be a live handle and `out_value` a valid pointer.
enum VsStatus vs_record_spatial_dispersion(const struct VsRecord *record, double *out_value);

// Pointwise sum of `len` records into a new handle.
//
// # Safety
// `records` must point to `len` live handles (it may be NULL when `len`
// is 0) and `out_record` must be a valid pointer.
enum VsStatus vs_record_merge(const struct VsRecord *const *records,
                              size_t len,
                              struct VsRecord **out_record);

// Runs a simulation from a TOML config and returns the QoS report as JSON.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out_json` a valid pointer.
enum VsStatus vs_simulate_json(const char *config_toml, char **out_json);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void vs_string_free(char *s);

#endif  /* VODSWARM_H */
