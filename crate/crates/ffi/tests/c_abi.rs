use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use medteleop::compliance::{coupled_follower_target, CouplingParams};
use medteleop::fusion::{fuse, CameraId, CameraView, KeypointSet};
use medteleop::kinematics::builtin_arms;
use medteleop::retarget::HandModel;
use medteleop::runner::{run_replay, Report, RunConfig};
use medteleop::synthetic::HumanHand;
use medteleop::teleop::{ClutchState, Edge, PedalConfig, PedalEdge, PedalId};
use medteleop::{PerSide, Pose, Rotation, Side, Twist, Vec3};
use medteleop_ffi::*;

fn flat(p: &Pose) -> [f64; 7] {
    let [w, x, y, z] = p.rotation.wxyz();
    [p.position.x, p.position.y, p.position.z, w, x, y, z]
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mt_last_error()) }.to_string_lossy().into_owned()
}

fn builtin(side: u32) -> *mut MtChain {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { mt_chain_builtin(side, &mut c) }, MtStatus::Ok);
    c
}

const Q: [f64; 7] = [0.4, 0.1, -0.2, -1.0, 0.3, 0.6, -0.1];

#[test]
fn chain_functions_match_library() {
    let lib = builtin_arms().remove("right_arm").unwrap();
    let c = builtin(1);
    unsafe {
        assert_eq!(mt_chain_dof(c), 7);
        let q = lib.joint_vector(Q.to_vec()).unwrap();

        let mut pose = [0.0; 7];
        assert_eq!(mt_chain_fk(c, Q.as_ptr(), 7, pose.as_mut_ptr()), MtStatus::Ok);
        assert_eq!(pose, flat(&lib.forward_kinematics(&q).unwrap()));

        let mut jac = [0.0; 42];
        assert_eq!(mt_chain_jacobian(c, Q.as_ptr(), 7, jac.as_mut_ptr()), MtStatus::Ok);
        let j = lib.geometric_jacobian(&q).unwrap();
        for r in 0..6 {
            for k in 0..7 {
                assert_eq!(jac[r * 7 + k], j[(r, k)]);
            }
        }

        let g = [0.0, 0.0, -9.81];
        let mut tau = [0.0; 7];
        assert_eq!(mt_chain_gravity(c, Q.as_ptr(), 7, g.as_ptr(), tau.as_mut_ptr()), MtStatus::Ok);
        let t = lib.gravity_torques(&q, &Vec3::new(0.0, 0.0, -9.81)).unwrap();
        assert_eq!(&tau[..], t.as_slice());
        mt_chain_free(c);
    }
}

#[test]
fn chain_errors_report_status_and_message() {
    let c = builtin(0);
    unsafe {
        let mut pose = [0.0; 7];
        assert_eq!(mt_chain_fk(c, Q.as_ptr(), 6, pose.as_mut_ptr()), MtStatus::Kinematics);
        assert!(!last_error().is_empty());
        assert_eq!(mt_chain_fk(ptr::null(), Q.as_ptr(), 7, pose.as_mut_ptr()), MtStatus::NullPointer);
        assert_eq!(mt_chain_fk(c, Q.as_ptr(), 7, ptr::null_mut()), MtStatus::NullPointer);
        assert_eq!(mt_chain_dof(ptr::null()), 0);
        let mut out = ptr::null_mut();
        assert_eq!(mt_chain_builtin(2, &mut out), MtStatus::InvalidArgument);
        assert!(out.is_null());
        mt_chain_free(c);
        mt_chain_free(ptr::null_mut());
    }
}

#[test]
fn chain_parse_reads_chain_files() {
    let text = CString::new(std::fs::read_to_string(core_data().join("arms.toml")).unwrap()).unwrap();
    let name = CString::new("left_arm").unwrap();
    let missing = CString::new("tail").unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(mt_chain_parse(text.as_ptr(), name.as_ptr(), &mut c), MtStatus::Ok);
        assert_eq!(mt_chain_dof(c), 7);
        mt_chain_free(c);
        assert_eq!(mt_chain_parse(text.as_ptr(), missing.as_ptr(), &mut c), MtStatus::InvalidArgument);
        assert!(last_error().contains("tail"));
        let junk = CString::new("format = [").unwrap();
        assert_eq!(mt_chain_parse(junk.as_ptr(), name.as_ptr(), &mut c), MtStatus::Parse);
    }
}

#[test]
fn clutch_follows_library_state_machine() {
    let hand0 = Pose::new(Rotation::from_axis_angle(&Vec3::z(), 0.3), Vec3::new(0.1, 0.2, 0.3));
    let ee = PerSide::new(
        Pose::new(Rotation::identity(), Vec3::new(0.5, 0.2, 1.0)),
        Pose::new(Rotation::from_axis_angle(&Vec3::x(), 0.5), Vec3::new(0.5, -0.2, 1.0)),
    );
    let hand1 = Pose::new(Rotation::from_axis_angle(&Vec3::y(), 0.2), Vec3::new(0.15, 0.1, 0.35));

    let cfg = PedalConfig::default();
    let hands = PerSide::new(Some(hand0), Some(hand0));
    let mut lib = ClutchState::new(1.5);
    for edge in [Edge::Down, Edge::Up] {
        lib = lib.on_pedal(&cfg, PedalEdge { pedal: PedalId::Left, edge }, &hands, &ee);
    }

    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(mt_clutch_new(1.5, &mut c), MtStatus::Ok);
        let h = flat(&hand0);
        let (el, er) = (flat(&ee.left), flat(&ee.right));
        assert_eq!(mt_clutch_on_pedal(c, 0, 1, h.as_ptr(), h.as_ptr(), el.as_ptr(), er.as_ptr()), MtStatus::Ok);
        assert_eq!(mt_clutch_is_engaged(c, 0), 1);
        assert_eq!(mt_clutch_is_engaged(c, 1), 1);
        assert_eq!(mt_clutch_on_pedal(c, 0, 0, h.as_ptr(), h.as_ptr(), el.as_ptr(), er.as_ptr()), MtStatus::Ok);
        assert_eq!(mt_clutch_is_engaged(c, 0), 0);
        assert_eq!(mt_clutch_coupling(c), 0);

        for (i, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let mut out = [0.0; 7];
            let h1 = flat(&hand1);
            assert_eq!(mt_clutch_relative_target(c, i as u32, h1.as_ptr(), out.as_mut_ptr()), MtStatus::Ok);
            assert_eq!(out, flat(&lib.relative_target(side, &hand1).unwrap()));
        }

        // Right pedal toggles coupling.
        assert_eq!(mt_clutch_on_pedal(c, 1, 1, ptr::null(), ptr::null(), el.as_ptr(), er.as_ptr()), MtStatus::Ok);
        assert_eq!(mt_clutch_coupling(c), 1);

        assert_eq!(mt_clutch_is_engaged(c, 5), -1);
        assert_eq!(mt_clutch_on_pedal(c, 0, 1, ptr::null(), ptr::null(), ptr::null(), er.as_ptr()), MtStatus::NullPointer);
        let bad = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(mt_clutch_on_pedal(c, 0, 1, bad.as_ptr(), ptr::null(), el.as_ptr(), er.as_ptr()), MtStatus::InvalidArgument);
        mt_clutch_free(c);
        assert_eq!(mt_clutch_new(0.0, &mut c), MtStatus::InvalidArgument);
    }
}

#[test]
fn relative_target_before_first_clutch_fails() {
    let mut c = ptr::null_mut();
    let h = flat(&Pose::identity());
    let mut out = [0.0; 7];
    unsafe {
        mt_clutch_new(1.0, &mut c);
        assert_eq!(mt_clutch_relative_target(c, 0, h.as_ptr(), out.as_mut_ptr()), MtStatus::InvalidArgument);
        mt_clutch_free(c);
    }
}

fn hand_keypoints(shift: f64) -> KeypointSet {
    let hand = HumanHand::from_robot(&HandModel::builtin(), 1.5);
    let angles = vec![0.2; hand.model().dof()];
    let wrist = Pose::new(Rotation::from_axis_angle(&Vec3::y(), 0.7), Vec3::new(0.0, 0.0, 0.5));
    let k = hand.keypoints(&angles, &wrist);
    let pts: Vec<Vec3> = k.points().iter().enumerate().map(|(i, p)| p + Vec3::new(shift * i as f64, -shift, shift)).collect();
    KeypointSet::from_slice(&pts).unwrap()
}

#[test]
fn fuse_matches_library() {
    let a1 = Vec3::new(0.0, 0.0, -1.0);
    let a2 = Vec3::new(-1.0, 0.0, -0.3);
    let k1 = hand_keypoints(0.0);
    let k2 = hand_keypoints(1e-3);
    let want = fuse(
        &CameraView::new(CameraId::C1, a1, Some(k1.clone())).unwrap(),
        &CameraView::new(CameraId::C2, a2, Some(k2.clone())).unwrap(),
    )
    .unwrap();
    let (f1, f2) = (k1.to_flat(), k2.to_flat());
    let mut out = [0.0; MT_KEYPOINT_LEN];
    unsafe {
        assert_eq!(
            mt_fuse_keypoints(a1.as_ptr(), f1.as_ptr(), a2.as_ptr(), f2.as_ptr(), out.as_mut_ptr()),
            MtStatus::Ok
        );
        assert_eq!(&out[..], &want.to_flat()[..]);

        // One camera missing passes the other through.
        assert_eq!(
            mt_fuse_keypoints(a1.as_ptr(), ptr::null(), a2.as_ptr(), f2.as_ptr(), out.as_mut_ptr()),
            MtStatus::Ok
        );
        assert_eq!(&out[..], &f2[..]);
        assert_eq!(
            mt_fuse_keypoints(a1.as_ptr(), ptr::null(), a2.as_ptr(), ptr::null(), out.as_mut_ptr()),
            MtStatus::InvalidArgument
        );
        let zero = [0.0; 3];
        assert_eq!(
            mt_fuse_keypoints(zero.as_ptr(), f1.as_ptr(), a2.as_ptr(), f2.as_ptr(), out.as_mut_ptr()),
            MtStatus::InvalidArgument
        );
    }
}

#[test]
fn coupling_step_matches_library() {
    let x_l = Pose::new(Rotation::from_axis_angle(&Vec3::z(), 0.1), Vec3::new(0.4, 0.1, 1.0));
    let x_r = Pose::new(Rotation::from_axis_angle(&Vec3::x(), 0.2), Vec3::new(0.45, 0.12, 1.02));
    let v_l = Twist::new(Vec3::new(0.01, 0.0, -0.02), Vec3::new(0.0, 0.1, 0.0));
    let v_r = Twist::new(Vec3::new(0.0, 0.03, 0.0), Vec3::new(0.05, 0.0, 0.0));
    let p = CouplingParams {
        lambda: 3.0,
        beta_damp: 0.5,
        dt: 0.01,
    };
    let want = flat(&coupled_follower_target(&x_l, &v_l, &x_r, &v_r, &p));
    let tw = |t: &Twist| {
        let (l, a) = (t.linear, t.angular);
        [l[0], l[1], l[2], a[0], a[1], a[2]]
    };
    let (fl, fr, tl, tr) = (flat(&x_l), flat(&x_r), tw(&v_l), tw(&v_r));
    let mut out = [0.0; 7];
    unsafe {
        let s = mt_coupled_follower_target(fl.as_ptr(), tl.as_ptr(), fr.as_ptr(), tr.as_ptr(), 3.0, 0.5, 0.01, out.as_mut_ptr());
        assert_eq!(s, MtStatus::Ok);
        assert_eq!(out, want);
        let s = mt_coupled_follower_target(fl.as_ptr(), tl.as_ptr(), fr.as_ptr(), tr.as_ptr(), -1.0, 0.5, 0.01, out.as_mut_ptr());
        assert_eq!(s, MtStatus::InvalidArgument);
    }
}

fn core_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

#[test]
fn replay_returns_report_json() {
    let data = core_data();
    let config = data.join("configs/needle_injection.toml");
    let session = data.join("sessions/needle_injection.session");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let want = run_replay(&RunConfig::load(&config).unwrap(), &session, a.path()).unwrap();

    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    let (cc, cs, co) = (c(&config), c(&session), c(b.path()));
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(mt_replay(cc.as_ptr(), cs.as_ptr(), co.as_ptr(), &mut json), MtStatus::Ok);
        let got = Report::from_json(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        mt_string_free(json);
        assert_eq!(got.state_hash, want.state_hash);
        assert_eq!(got.command_hash, want.command_hash);
        assert_eq!(got, want);
    }
    assert!(b.path().join("report.json").exists());

    let missing = c(&data.join("configs/none.toml"));
    unsafe {
        assert_eq!(mt_replay(missing.as_ptr(), cs.as_ptr(), co.as_ptr(), &mut json), MtStatus::Config);
        assert!(json.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(mt_replay(ptr::null(), cs.as_ptr(), co.as_ptr(), &mut json), MtStatus::NullPointer);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/medteleop.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mt_chain_fk", "mt_clutch_on_pedal", "mt_replay", "MT_STATUS_OK", "MT_KEYPOINT_LEN 63"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(cc) = which("cc") else { return };
    for lang in ["c", "c++"] {
        let out = Command::new(&cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
            .unwrap();
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn which(name: &str) -> Result<PathBuf, ()> {
    std::env::var_os("PATH")
        .and_then(|p| std::env::split_paths(&p).map(|d| d.join(name)).find(|p| p.is_file()))
        .ok_or(())
}
