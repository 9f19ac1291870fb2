#ifndef MEDTELEOP_H
#define MEDTELEOP_H

#include <stddef.h>
#include <stdint.h>

#define MT_POSE_LEN 7

#define MT_TWIST_LEN 6

#define MT_KEYPOINT_LEN 63

/**
 * Result codes. Values are stable.
 */
typedef enum MtStatus {
  MT_STATUS_OK = 0,
  MT_STATUS_NULL_POINTER = 1,
  MT_STATUS_INVALID_ARGUMENT = 2,
  MT_STATUS_CONFIG = 3,
  MT_STATUS_PARSE = 4,
  MT_STATUS_KINEMATICS = 5,
  MT_STATUS_RUNTIME = 6,
  MT_STATUS_PANIC = 7,
} MtStatus;

/**
 * Opaque serial chain.
 */
typedef struct MtChain MtChain;

/**
 * Opaque clutch state machine with its pedal mapping.
 */
typedef struct MtClutch MtClutch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. Valid until
 * the next call on this thread.
 */
const char *mt_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mt_string_free(char *s);

/**
 * Loads one of the built-in arms: `side` 0 = left, 1 = right.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum MtStatus mt_chain_builtin(uint32_t side, struct MtChain **out);

/**
 * Parses a chain definition file's text and returns the chain `name`.
 *
 * # Safety
 * `text` and `name` must be NUL-terminated; `out` a valid handle slot.
 */
enum MtStatus mt_chain_parse(const char *text, const char *name, struct MtChain **out);

/**
 * # Safety
 * `chain` must come from this library (or be NULL) and not be used after.
 */
void mt_chain_free(struct MtChain *chain);

/**
 * Number of joints; 0 for NULL.
 *
 * # Safety
 * `chain` must be a live handle or NULL.
 */
uintptr_t mt_chain_dof(const struct MtChain *chain);

/**
 * Forward kinematics into `out_pose[7]`.
 *
 * # Safety
 * `q` must hold `n` doubles, `out_pose` 7.
 */
enum MtStatus mt_chain_fk(const struct MtChain *chain,
                          const double *q,
                          uintptr_t n,
                          double *out_pose);

/**
 * Geometric Jacobian, row-major `6 × n` (rows 0-2 linear, 3-5 angular).
 *
 * # Safety
 * `q` must hold `n` doubles, `out` `6 * n`.
 */
enum MtStatus mt_chain_jacobian(const struct MtChain *chain,
                                const double *q,
                                uintptr_t n,
                                double *out);

/**
 * Gravity-compensation torques for gravity vector `g[3]` into `out[n]`.
 *
 * # Safety
 * `q` and `out` must hold `n` doubles, `g` 3.
 */
enum MtStatus mt_chain_gravity(const struct MtChain *chain,
                               const double *q,
                               uintptr_t n,
                               const double *g,
                               double *out);

/**
 * New clutch state with the default pedal mapping (left pedal clutches
 * both arms, right pedal toggles coupling).
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum MtStatus mt_clutch_new(double translation_gain, struct MtClutch **out);

/**
 * # Safety
 * `clutch` must come from this library (or be NULL) and not be used after.
 */
void mt_clutch_free(struct MtClutch *clutch);

/**
 * Applies a pedal edge. `pedal`: 0 left, 1 right; `down`: nonzero for a
 * press. Hand poses may be NULL (that arm is skipped); end-effector poses
 * are required.
 *
 * # Safety
 * Pose pointers must hold 7 doubles or be NULL where allowed.
 */
enum MtStatus mt_clutch_on_pedal(struct MtClutch *clutch,
                                 uint32_t pedal,
                                 int32_t down,
                                 const double *hand_left,
                                 const double *hand_right,
                                 const double *ee_left,
                                 const double *ee_right);

/**
 * 1 if the arm (`side` 0 left, 1 right) is clutched, 0 if not, -1 on bad
 * arguments.
 *
 * # Safety
 * `clutch` must be a live handle or NULL.
 */
int32_t mt_clutch_is_engaged(const struct MtClutch *clutch, uint32_t side);

/**
 * 1 if coupling mode is on, 0 if off, -1 for NULL.
 *
 * # Safety
 * `clutch` must be a live handle or NULL.
 */
int32_t mt_clutch_coupling(const struct MtClutch *clutch);

/**
 * End-effector target for the current hand pose.
 *
 * # Safety
 * `hand` and `out_pose` must hold 7 doubles.
 */
enum MtStatus mt_clutch_relative_target(const struct MtClutch *clutch,
                                        uint32_t side,
                                        const double *hand,
                                        double *out_pose);

/**
 * Fuses two camera detections (`pts` of 63 doubles, or NULL when the
 * camera saw no hand) into `out[63]`.
 *
 * # Safety
 * Axis pointers hold 3 doubles, point pointers 63 or NULL, `out` 63.
 */
enum MtStatus mt_fuse_keypoints(const double *c1_axis,
                                const double *c1_pts,
                                const double *c2_axis,
                                const double *c2_pts,
                                double *out);

/**
 * One step of the follower coupling law with gains `lambda`, `beta` and
 * period `dt`; writes the follower target pose.
 *
 * # Safety
 * Poses hold 7 doubles, twists 6.
 */
enum MtStatus mt_coupled_follower_target(const double *follower,
                                         const double *follower_twist,
                                         const double *desired,
                                         const double *desired_twist,
                                         double lambda,
                                         double beta,
                                         double dt,
                                         double *out_pose);

/**
 * Replays `session` under the run config at `config`, writing outputs to
 * `out_dir`; on success `*out_json` receives the report as JSON (free with
 * `mt_string_free`).
 *
 * # Safety
 * Strings must be NUL-terminated; `out_json` a valid pointer slot.
 */
enum MtStatus mt_replay(const char *config,
                        const char *session,
                        const char *out_dir,
                        char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDTELEOP_H */
