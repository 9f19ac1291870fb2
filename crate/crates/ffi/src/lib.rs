//! C ABI over the medteleop control stack.
//!
//! Conventions: every fallible function returns an [`MtStatus`]; on failure
//! `mt_last_error()` holds a message for the calling thread. Poses are
//! `double[7]` laid out `px, py, pz, qw, qx, qy, qz`; twists are `double[6]`
//! laid out linear then angular. Objects are opaque handles released with
//! their `_free` function; strings returned by the library are released with
//! `mt_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use medteleop::compliance::{coupled_follower_target, CouplingParams};
use medteleop::error::{Error, FormatError};
use medteleop::fusion::{fuse, CameraId, CameraView, KeypointSet, KEYPOINT_COUNT};
use medteleop::kinematics::{builtin_arms, parse_chains, JointVector, SerialChain};
use medteleop::runner::{run_replay, RunConfig};
use medteleop::teleop::{ClutchState, Edge, PedalConfig, PedalEdge, PedalId};
use medteleop::{PerSide, Pose, Rotation, Side, Twist, Vec3};

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Kinematics = 5,
    Runtime = 6,
    Panic = 7,
}

pub const MT_POSE_LEN: usize = 7;
pub const MT_TWIST_LEN: usize = 6;
pub const MT_KEYPOINT_LEN: usize = 63;
const _: () = assert!(MT_KEYPOINT_LEN == 3 * KEYPOINT_COUNT);

/// Opaque serial chain.
pub struct MtChain(SerialChain);

/// Opaque clutch state machine with its pedal mapping.
pub struct MtClutch {
    state: ClutchState,
    pedals: PedalConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: MtStatus, msg: impl std::fmt::Display) -> MtStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> MtStatus {
    match e {
        Error::Config(_) | Error::Format(FormatError::Io { .. }) => MtStatus::Config,
        Error::Format(_) => MtStatus::Parse,
        Error::Kinematics(_) => MtStatus::Kinematics,
        _ => MtStatus::Runtime,
    }
}

/// Runs `f`, converting panics to [`MtStatus::Panic`].
fn guard(f: impl FnOnce() -> MtStatus) -> MtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MtStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Option<&'a [f64]> {
    (!p.is_null()).then(|| std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize) -> Option<&'a mut [f64]> {
    (!p.is_null()).then(|| std::slice::from_raw_parts_mut(p, n))
}

unsafe fn read_pose(p: *const f64) -> Result<Pose, MtStatus> {
    let v = slice(p, MT_POSE_LEN).ok_or_else(|| fail(MtStatus::NullPointer, "null pose"))?;
    let r = Rotation::from_wxyz(v[3], v[4], v[5], v[6]).map_err(|e| fail(MtStatus::InvalidArgument, e))?;
    let pose = Pose::new(r, Vec3::new(v[0], v[1], v[2]));
    if !pose.is_finite() {
        return Err(fail(MtStatus::InvalidArgument, "non-finite pose"));
    }
    Ok(pose)
}

unsafe fn read_twist(p: *const f64) -> Result<Twist, MtStatus> {
    let v = slice(p, MT_TWIST_LEN).ok_or_else(|| fail(MtStatus::NullPointer, "null twist"))?;
    Ok(Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])))
}

unsafe fn write_pose(pose: &Pose, out: *mut f64) -> MtStatus {
    let Some(o) = slice_mut(out, MT_POSE_LEN) else {
        return fail(MtStatus::NullPointer, "null output");
    };
    let p = pose.position;
    let [w, x, y, z] = pose.rotation.wxyz();
    o.copy_from_slice(&[p.x, p.y, p.z, w, x, y, z]);
    MtStatus::Ok
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, MtStatus> {
    if p.is_null() {
        return Err(fail(MtStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MtStatus::InvalidArgument, "string is not UTF-8"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failure on this thread; empty if none. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn mt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads one of the built-in arms: `side` 0 = left, 1 = right.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_builtin(side: u32, out: *mut *mut MtChain) -> MtStatus {
    guard(|| {
        if out.is_null() {
            return fail(MtStatus::NullPointer, "null output");
        }
        let name = match side {
            0 => "left_arm",
            1 => "right_arm",
            _ => return fail(MtStatus::InvalidArgument, "side must be 0 or 1"),
        };
        let chain = builtin_arms().remove(name).expect("builtin arms");
        *out = Box::into_raw(Box::new(MtChain(chain)));
        MtStatus::Ok
    })
}

/// Parses a chain definition file's text and returns the chain `name`.
///
/// # Safety
/// `text` and `name` must be NUL-terminated; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_parse(text: *const c_char, name: *const c_char, out: *mut *mut MtChain) -> MtStatus {
    guard(|| {
        let text = tri!(read_str(text));
        let name = tri!(read_str(name));
        if out.is_null() {
            return fail(MtStatus::NullPointer, "null output");
        }
        let mut chains = match parse_chains(text) {
            Ok(c) => c,
            Err(e) => return fail(MtStatus::Parse, e),
        };
        match chains.remove(name) {
            Some(c) => {
                *out = Box::into_raw(Box::new(MtChain(c)));
                MtStatus::Ok
            }
            None => fail(MtStatus::InvalidArgument, format!("no chain named `{name}`")),
        }
    })
}

/// # Safety
/// `chain` must come from this library (or be NULL) and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_free(chain: *mut MtChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of joints; 0 for NULL.
///
/// # Safety
/// `chain` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_dof(chain: *const MtChain) -> usize {
    chain.as_ref().map_or(0, |c| c.0.dof())
}

unsafe fn joints<'a>(chain: *const MtChain, q: *const f64, n: usize) -> Result<(&'a SerialChain, JointVector), MtStatus> {
    let c = chain.as_ref().ok_or_else(|| fail(MtStatus::NullPointer, "null chain"))?;
    let q = slice(q, n).ok_or_else(|| fail(MtStatus::NullPointer, "null joint vector"))?;
    let jv = c.0.joint_vector(q.to_vec()).map_err(|e| fail(MtStatus::Kinematics, e))?;
    Ok((&c.0, jv))
}

/// Forward kinematics into `out_pose[7]`.
///
/// # Safety
/// `q` must hold `n` doubles, `out_pose` 7.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_fk(chain: *const MtChain, q: *const f64, n: usize, out_pose: *mut f64) -> MtStatus {
    guard(|| {
        let (c, q) = tri!(joints(chain, q, n));
        match c.forward_kinematics(&q) {
            Ok(p) => write_pose(&p, out_pose),
            Err(e) => fail(MtStatus::Kinematics, e),
        }
    })
}

/// Geometric Jacobian, row-major `6 × n` (rows 0-2 linear, 3-5 angular).
///
/// # Safety
/// `q` must hold `n` doubles, `out` `6 * n`.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_jacobian(chain: *const MtChain, q: *const f64, n: usize, out: *mut f64) -> MtStatus {
    guard(|| {
        let (c, q) = tri!(joints(chain, q, n));
        let Some(o) = slice_mut(out, 6 * n) else {
            return fail(MtStatus::NullPointer, "null output");
        };
        match c.geometric_jacobian(&q) {
            Ok(j) => {
                for r in 0..6 {
                    for k in 0..n {
                        o[r * n + k] = j[(r, k)];
                    }
                }
                MtStatus::Ok
            }
            Err(e) => fail(MtStatus::Kinematics, e),
        }
    })
}

/// Gravity-compensation torques for gravity vector `g[3]` into `out[n]`.
///
/// # Safety
/// `q` and `out` must hold `n` doubles, `g` 3.
#[no_mangle]
pub unsafe extern "C" fn mt_chain_gravity(
    chain: *const MtChain,
    q: *const f64,
    n: usize,
    g: *const f64,
    out: *mut f64,
) -> MtStatus {
    guard(|| {
        let (c, q) = tri!(joints(chain, q, n));
        let Some(g) = slice(g, 3) else {
            return fail(MtStatus::NullPointer, "null gravity");
        };
        let Some(o) = slice_mut(out, n) else {
            return fail(MtStatus::NullPointer, "null output");
        };
        match c.gravity_torques(&q, &Vec3::new(g[0], g[1], g[2])) {
            Ok(t) => {
                o.copy_from_slice(t.as_slice());
                MtStatus::Ok
            }
            Err(e) => fail(MtStatus::Kinematics, e),
        }
    })
}

/// New clutch state with the default pedal mapping (left pedal clutches
/// both arms, right pedal toggles coupling).
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn mt_clutch_new(translation_gain: f64, out: *mut *mut MtClutch) -> MtStatus {
    guard(|| {
        if out.is_null() {
            return fail(MtStatus::NullPointer, "null output");
        }
        if !(translation_gain > 0.0) || !translation_gain.is_finite() {
            return fail(MtStatus::InvalidArgument, "translation gain must be positive");
        }
        *out = Box::into_raw(Box::new(MtClutch {
            state: ClutchState::new(translation_gain),
            pedals: PedalConfig::default(),
        }));
        MtStatus::Ok
    })
}

/// # Safety
/// `clutch` must come from this library (or be NULL) and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mt_clutch_free(clutch: *mut MtClutch) {
    if !clutch.is_null() {
        drop(Box::from_raw(clutch));
    }
}

/// Applies a pedal edge. `pedal`: 0 left, 1 right; `down`: nonzero for a
/// press. Hand poses may be NULL (that arm is skipped); end-effector poses
/// are required.
///
/// # Safety
/// Pose pointers must hold 7 doubles or be NULL where allowed.
#[no_mangle]
pub unsafe extern "C" fn mt_clutch_on_pedal(
    clutch: *mut MtClutch,
    pedal: u32,
    down: i32,
    hand_left: *const f64,
    hand_right: *const f64,
    ee_left: *const f64,
    ee_right: *const f64,
) -> MtStatus {
    guard(|| {
        let Some(c) = clutch.as_mut() else {
            return fail(MtStatus::NullPointer, "null clutch");
        };
        let pedal = match pedal {
            0 => PedalId::Left,
            1 => PedalId::Right,
            _ => return fail(MtStatus::InvalidArgument, "pedal must be 0 or 1"),
        };
        let edge = if down != 0 { Edge::Down } else { Edge::Up };
        let opt = |p: *const f64| if p.is_null() { Ok(None) } else { read_pose(p).map(Some) };
        let hands = PerSide::new(tri!(opt(hand_left)), tri!(opt(hand_right)));
        let ees = PerSide::new(tri!(read_pose(ee_left)), tri!(read_pose(ee_right)));
        c.state = c.state.on_pedal(&c.pedals, PedalEdge { pedal, edge }, &hands, &ees);
        MtStatus::Ok
    })
}

/// 1 if the arm (`side` 0 left, 1 right) is clutched, 0 if not, -1 on bad
/// arguments.
///
/// # Safety
/// `clutch` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mt_clutch_is_engaged(clutch: *const MtClutch, side: u32) -> i32 {
    match (clutch.as_ref(), side) {
        (Some(c), 0) => c.state.is_engaged(Side::Left) as i32,
        (Some(c), 1) => c.state.is_engaged(Side::Right) as i32,
        _ => -1,
    }
}

/// 1 if coupling mode is on, 0 if off, -1 for NULL.
///
/// # Safety
/// `clutch` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mt_clutch_coupling(clutch: *const MtClutch) -> i32 {
    clutch.as_ref().map_or(-1, |c| c.state.coupling() as i32)
}

/// End-effector target for the current hand pose.
///
/// # Safety
/// `hand` and `out_pose` must hold 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_clutch_relative_target(
    clutch: *const MtClutch,
    side: u32,
    hand: *const f64,
    out_pose: *mut f64,
) -> MtStatus {
    guard(|| {
        let Some(c) = clutch.as_ref() else {
            return fail(MtStatus::NullPointer, "null clutch");
        };
        let side = match side {
            0 => Side::Left,
            1 => Side::Right,
            _ => return fail(MtStatus::InvalidArgument, "side must be 0 or 1"),
        };
        let hand = tri!(read_pose(hand));
        match c.state.relative_target(side, &hand) {
            Ok(p) => write_pose(&p, out_pose),
            Err(e) => fail(MtStatus::InvalidArgument, e),
        }
    })
}

unsafe fn view(camera: CameraId, axis: *const f64, pts: *const f64) -> Result<CameraView, MtStatus> {
    let a = slice(axis, 3).ok_or_else(|| fail(MtStatus::NullPointer, "null camera axis"))?;
    let kp = match slice(pts, MT_KEYPOINT_LEN) {
        Some(p) => Some(KeypointSet::from_flat(p).map_err(|e| fail(MtStatus::InvalidArgument, e))?),
        None => None,
    };
    CameraView::new(camera, Vec3::new(a[0], a[1], a[2]), kp).map_err(|e| fail(MtStatus::InvalidArgument, e))
}

/// Fuses two camera detections (`pts` of 63 doubles, or NULL when the
/// camera saw no hand) into `out[63]`.
///
/// # Safety
/// Axis pointers hold 3 doubles, point pointers 63 or NULL, `out` 63.
#[no_mangle]
pub unsafe extern "C" fn mt_fuse_keypoints(
    c1_axis: *const f64,
    c1_pts: *const f64,
    c2_axis: *const f64,
    c2_pts: *const f64,
    out: *mut f64,
) -> MtStatus {
    guard(|| {
        let v1 = tri!(view(CameraId::C1, c1_axis, c1_pts));
        let v2 = tri!(view(CameraId::C2, c2_axis, c2_pts));
        let Some(o) = slice_mut(out, MT_KEYPOINT_LEN) else {
            return fail(MtStatus::NullPointer, "null output");
        };
        match fuse(&v1, &v2) {
            Ok(k) => {
                o.copy_from_slice(&k.to_flat());
                MtStatus::Ok
            }
            Err(e) => fail(MtStatus::InvalidArgument, e),
        }
    })
}

/// One step of the follower coupling law with gains `lambda`, `beta` and
/// period `dt`; writes the follower target pose.
///
/// # Safety
/// Poses hold 7 doubles, twists 6.
#[no_mangle]
pub unsafe extern "C" fn mt_coupled_follower_target(
    follower: *const f64,
    follower_twist: *const f64,
    desired: *const f64,
    desired_twist: *const f64,
    lambda: f64,
    beta: f64,
    dt: f64,
    out_pose: *mut f64,
) -> MtStatus {
    guard(|| {
        let p = CouplingParams {
            lambda,
            beta_damp: beta,
            dt,
        };
        if let Err(e) = p.validate() {
            return fail(MtStatus::InvalidArgument, e);
        }
        let x_l = tri!(read_pose(follower));
        let v_l = tri!(read_twist(follower_twist));
        let x_r = tri!(read_pose(desired));
        let v_r = tri!(read_twist(desired_twist));
        write_pose(&coupled_follower_target(&x_l, &v_l, &x_r, &v_r, &p), out_pose)
    })
}

/// Replays `session` under the run config at `config`, writing outputs to
/// `out_dir`; on success `*out_json` receives the report as JSON (free with
/// `mt_string_free`).
///
/// # Safety
/// Strings must be NUL-terminated; `out_json` a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn mt_replay(
    config: *const c_char,
    session: *const c_char,
    out_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> MtStatus {
    guard(|| {
        let config = tri!(read_str(config));
        let session = tri!(read_str(session));
        let out_dir = tri!(read_str(out_dir));
        if out_json.is_null() {
            return fail(MtStatus::NullPointer, "null output");
        }
        *out_json = ptr::null_mut();
        let run = RunConfig::load(Path::new(config)).and_then(|cfg| run_replay(&cfg, Path::new(session), Path::new(out_dir)));
        match run {
            Ok(report) => {
                *out_json = CString::new(report.to_json()).expect("json has no NUL").into_raw();
                MtStatus::Ok
            }
            Err(e) => fail(status_of(&e), e),
        }
    })
}
