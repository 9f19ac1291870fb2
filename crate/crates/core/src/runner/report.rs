//! Run report: the same numbers rendered as text or JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::side::Side;
use crate::sim::{BvmMetrics, NeedleAttempt, ScenarioKind, TIDAL_RANGE_ML};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvmReport {
    /// Bag constants were fitted to match recorded trials, so the volumes
    /// are calibrated model output rather than independent predictions.
    pub calibrated: bool,
    pub hands: usize,
    pub metrics: BvmMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceTracking {
    pub arm: Side,
    pub desired_force_n: [f64; 3],
    pub contact_samples: usize,
    pub mean_abs_error_n: f64,
    pub rms_error_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub ticks: u64,
    pub duration_s: f64,
    pub events: usize,
    pub dropped_keypoint_frames: usize,
    pub state_hash: String,
    pub command_hash: String,
    pub bvm: Option<BvmReport>,
    pub needle: Option<Vec<NeedleAttempt>>,
    pub force_tracking: Vec<ForceTracking>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format `{s}` (text|json)")),
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Runtime(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Json => self.to_json(),
        }
    }

    /// Plain-text rendering; numbers are printed with full precision so
    /// they match the JSON form exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = serde_json::to_value(self.kind).unwrap();
        let _ = writeln!(s, "scenario: {} ({})", self.scenario, kind.as_str().unwrap_or("?"));
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "ticks: {}", self.ticks);
        let _ = writeln!(s, "duration_s: {}", self.duration_s);
        let _ = writeln!(s, "events: {}", self.events);
        let _ = writeln!(s, "dropped_keypoint_frames: {}", self.dropped_keypoint_frames);
        let _ = writeln!(s, "state_hash: {}", self.state_hash);
        let _ = writeln!(s, "command_hash: {}", self.command_hash);
        if let Some(b) = &self.bvm {
            let m = &b.metrics;
            let label = if b.calibrated { " [calibrated bag model]" } else { "" };
            let _ = writeln!(s, "bvm ({} hand{}){label}:", b.hands, if b.hands == 1 { "" } else { "s" });
            let _ = writeln!(s, "  breaths: {}", m.breaths.len());
            let _ = writeln!(s, "  interval_s: {}", m.interval_s);
            let _ = writeln!(s, "  ventilation_time_s: {}", m.ventilation_time_s);
            let _ = writeln!(s, "  mean_volume_ml: {}", m.mean_volume_ml);
            let _ = writeln!(
                s,
                "  fraction_in_range: {} ({}-{} mL)",
                m.fraction_in_range, TIDAL_RANGE_ML.0, TIDAL_RANGE_ML.1
            );
            for (i, br) in m.breaths.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "  breath {}: peak_time_s={} peak_compression={} rise_time_s={} volume_ml={}",
                    i + 1,
                    br.peak_time_s,
                    br.peak_compression,
                    br.rise_time_s,
                    br.volume_ml
                );
            }
        }
        if let Some(attempts) = &self.needle {
            let _ = writeln!(s, "needle attempts: {}", attempts.len());
            for a in attempts {
                let _ = writeln!(
                    s,
                    "  attempt {}: window=[{}, {}] samples={} max_deviation_deg={} incidence_deg=[{}, {}] mean_incidence_deg={}",
                    a.index,
                    a.start_s,
                    a.end_s,
                    a.samples,
                    a.max_deviation_deg,
                    a.min_incidence_deg,
                    a.max_incidence_deg,
                    a.mean_incidence_deg
                );
            }
        }
        for f in &self.force_tracking {
            let _ = writeln!(
                s,
                "force tracking ({} arm): desired_force_n=[{}, {}, {}] contact_samples={} mean_abs_error_n={} rms_error_n={}",
                f.arm,
                f.desired_force_n[0],
                f.desired_force_n[1],
                f.desired_force_n[2],
                f.contact_samples,
                f.mean_abs_error_n,
                f.rms_error_n
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
