#ifndef MARSUPIAL_H
#define MARSUPIAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_ARGUMENT = 2,
  MR_STATUS_CONFIG = 3,
  MR_STATUS_CODEC = 4,
  MR_STATUS_BUFFER_TOO_SMALL = 5,
  MR_STATUS_SIMULATION = 6,
  MR_STATUS_PANIC = 7,
} MrStatus;

typedef enum MrOutcome {
  MR_OUTCOME_RUNNING = 0,
  MR_OUTCOME_COMPLETE = 1,
  MR_OUTCOME_ABORT = 2,
  MR_OUTCOME_TIMEOUT = 3,
} MrOutcome;

/**
 * Opaque simulation handle.
 */
typedef struct MrSimulation MrSimulation;

/**
 * One planner tick of a simulation.
 */
typedef struct MrTick {
  double t;
  /**
   * Mission stage code, as carried in heartbeats.
   */
  uint8_t stage;
  /**
   * 1 while tag-relative localization is active, 0 for optical flow.
   */
  uint8_t tag_mode;
  uint8_t switched;
  double est[3];
  double fused[3];
  double truth[3];
} MrTick;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t mr_last_error(char *buf, size_t cap);

/**
 * Heading-aware exposure time for calibration bounds `[t_min, t_max]` (us).
 *
 * # Safety
 * `out` must be null or point to a writable `double`.
 */
enum MrStatus mr_exposure_time(double sun_heading,
                               double uav_heading,
                               double t_min,
                               double t_max,
                               double *out);

/**
 * AGCWD enhancement of a row-major 8-bit image. `out` receives
 * `width * height` pixels; `gamma_out`, when not null, the 256-entry gamma
 * table.
 *
 * # Safety
 * `pixels` and `out` must be valid for `width * height` bytes and
 * `gamma_out` null or valid for 256 doubles.
 */
enum MrStatus mr_agcwd_enhance(const uint8_t *pixels,
                               size_t width,
                               size_t height,
                               double alpha,
                               uint8_t *out,
                               double *gamma_out);

/**
 * CRC-16/X25 of `len` bytes. A null `data` hashes the empty string.
 *
 * # Safety
 * `data` must be null or valid for `len` bytes.
 */
uint16_t mr_crc16_x25(const uint8_t *data, size_t len);

/**
 * Encodes a message given as JSON, e.g. `{"type":"Heartbeat","stage":2}`,
 * into a frame. `*written` receives the frame length.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `buf` valid for `cap` bytes and
 * `written` null or writable.
 */
enum MrStatus mr_encode(const char *json,
                        uint8_t seq,
                        uint8_t sys_id,
                        uint8_t *buf,
                        size_t cap,
                        size_t *written);

/**
 * Decodes the frame at the start of `bytes`. The message is written to
 * `json_buf` as NUL-terminated JSON. On a codec failure the status is
 * `Codec` and the last error holds the error kind, e.g. `BadCrc`.
 *
 * # Safety
 * `bytes` must be valid for `len` bytes, `json_buf` for `cap` bytes and
 * every out pointer null or writable.
 */
enum MrStatus mr_decode(const uint8_t *bytes,
                        size_t len,
                        uint8_t *seq,
                        uint8_t *sys_id,
                        size_t *consumed,
                        char *json_buf,
                        size_t cap,
                        size_t *json_len);

/**
 * Creates a simulation from scenario JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum MrStatus mr_sim_new(const char *json, struct MrSimulation **out);

/**
 * Creates a simulation from a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MrStatus mr_sim_from_file(const char *path, struct MrSimulation **out);

/**
 * Advances one planner tick. `*done` is set to 1 (and `tick` left
 * untouched) once the mission has finished.
 *
 * # Safety
 * `sim` must come from `mr_sim_new`/`mr_sim_from_file`; `tick` and `done`
 * must be null or writable.
 */
enum MrStatus mr_sim_tick(struct MrSimulation *sim, struct MrTick *tick, uint8_t *done);

/**
 * Mission outcome so far.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
enum MrStatus mr_sim_outcome(const struct MrSimulation *sim, enum MrOutcome *out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a live handle not used afterwards.
 */
void mr_sim_free(struct MrSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARSUPIAL_H */
