//! Run orchestration: configuration, the per-tick controller, session
//! replay, the live bridge and the run report.

pub mod bridge;
mod config;
mod controller;
mod live;
mod report;
pub mod script;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub use config::{Gains, Mode, RunConfig, CONFIG_DIR_ENV, CONFIG_FORMAT};
pub use controller::{event_tick, Controller, Setup};
pub use live::{LiveHandle, LiveOptions, LiveOutcome, LiveServer};
pub use report::{BvmReport, ForceTracking, Report, ReportFormat};
pub use script::Script;

use crate::error::{Error, Result};
use crate::teleop::{read_session, EventPayload, SessionEvent};

/// Feeds `events` through a fresh controller. Events stamped `t` are applied
/// before the tick at which the clock reaches `t`; the run ends on the tick
/// of the `end` event or of the last event.
pub fn replay_events(setup: Setup, events: &[SessionEvent], state_log: Option<&Path>) -> Result<Report> {
    let dt = setup.dt;
    let mut ctl = Controller::new(setup)?;
    if let Some(p) = state_log {
        let f = File::create(p).map_err(|e| Error::Runtime(format!("{}: {e}", p.display())))?;
        ctl.set_state_log(Box::new(BufWriter::new(f)))?;
    }
    let last = match events.iter().position(|e| e.payload == EventPayload::End) {
        Some(i) => &events[..=i],
        None => events,
    };
    let Some(final_event) = last.last() else {
        return ctl.finish();
    };
    let end_tick = event_tick(final_event.t, dt);
    let mut next = 0;
    while ctl.tick() <= end_tick {
        while next < last.len() && event_tick(last[next].t, dt) <= ctl.tick() {
            ctl.apply(&last[next].payload)?;
            next += 1;
        }
        if ctl.tick() == end_tick {
            break;
        }
        ctl.step()?;
    }
    ctl.finish()
}

/// Replays a session file and writes `report.json`, `report.txt` and
/// `state.log` into `out_dir`.
pub fn run_replay(cfg: &RunConfig, session: &Path, out_dir: &Path) -> Result<Report> {
    let setup = Setup::load(cfg)?;
    let events = read_session(session)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Runtime(format!("{}: {e}", out_dir.display())))?;
    let report = replay_events(setup, &events, Some(&out_dir.join("state.log")))?;
    write_report(&report, out_dir)?;
    Ok(report)
}

pub fn write_report(report: &Report, out_dir: &Path) -> Result<()> {
    let w = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::Runtime(format!("{}: {e}", p.display())))
    };
    w("report.json", report.to_json())?;
    w("report.txt", report.to_text())
}
