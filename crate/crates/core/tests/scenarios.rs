use std::path::{Path, PathBuf};

use medteleop::runner::{replay_events, RunConfig, Script, Setup};
use medteleop::teleop::parse_session;

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn setup(script: Script) -> Setup {
    let cfg = RunConfig::load(&data().join(format!("configs/{}.toml", script.name()))).unwrap();
    Setup::load(&cfg).unwrap()
}

#[test]
fn generators_reproduce_shipped_sessions() {
    for script in Script::ALL {
        let generated = script.generate(&setup(script)).unwrap();
        let shipped = std::fs::read_to_string(data().join(format!("sessions/{}.session", script.name()))).unwrap();
        assert!(generated == shipped, "{}: generator output differs from shipped session", script.name());
        assert_eq!(Script::from_name(script.name()), Some(script));
    }
    assert_eq!(Script::from_name("juggling"), None);
}

#[test]
fn auscultation_holds_contact_force() {
    let s = setup(Script::Auscultation);
    let events = parse_session(&script_text(Script::Auscultation)).unwrap();
    let report = replay_events(s, &events, None).unwrap();
    assert_eq!(report.force_tracking.len(), 1);
    let f = &report.force_tracking[0];
    let target = f.desired_force_n.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(target > 0.0);
    assert!(f.contact_samples > 1000, "{} samples in contact", f.contact_samples);
    assert!(f.mean_abs_error_n < 0.3 * target, "mean error {} N", f.mean_abs_error_n);
    assert!(f.rms_error_n >= f.mean_abs_error_n);
    assert!(report.bvm.is_none() && report.needle.is_none());
}

fn script_text(script: Script) -> String {
    std::fs::read_to_string(data().join(format!("sessions/{}.session", script.name()))).unwrap()
}
