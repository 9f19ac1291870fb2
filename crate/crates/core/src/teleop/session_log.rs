//! Line-delimited session log: the record/replay unit for operator input.
//!
//! ```text
//! format: 1
//! t=0.02 kind=pose arm=left p=0.1,0.2,0.3 r=1,0,0,0
//! t=0.02 kind=keypoints hand=right c1.axis=0,0,-1 c1.pts=<63 floats> c2.axis=1,0,0 c2.pts=none
//! t=0.5 kind=pedal pedal=left edge=down
//! t=0.7 kind=coupling
//! t=0.9 kind=template hand=right name=syringe
//! t=3 kind=end
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Floats use Rust's
//! shortest round-trip formatting, so write → parse is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Edge, PedalEdge, PedalId};
use crate::error::FormatError;
use crate::fusion::{CameraId, CameraView, KeypointSet};
use crate::geom::{Pose, Rotation, Vec3};
use crate::side::Side;

pub const SESSION_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum EventPayload {
    HandPose { arm: Side, pose: Pose },
    Keypoints { hand: Side, views: [CameraView; 2] },
    Pedal(PedalEdge),
    CouplingToggle,
    Template { hand: Side, name: String },
    /// Marks the session length; nothing is applied.
    End,
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::HandPose { .. } => "pose",
            EventPayload::Keypoints { .. } => "keypoints",
            EventPayload::Pedal(_) => "pedal",
            EventPayload::CouplingToggle => "coupling",
            EventPayload::Template { .. } => "template",
            EventPayload::End => "end",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionEvent {
    pub t: f64,
    pub payload: EventPayload,
}

impl SessionEvent {
    pub fn new(t: f64, payload: EventPayload) -> Self {
        SessionEvent { t, payload }
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("t={} kind={}", self.t, self.payload.kind());
        match &self.payload {
            EventPayload::HandPose { arm, pose } => {
                let p = pose.position;
                let r = pose.rotation.wxyz();
                let _ = write!(
                    s,
                    " arm={arm} p={},{},{} r={},{},{},{}",
                    p.x, p.y, p.z, r[0], r[1], r[2], r[3]
                );
            }
            EventPayload::Keypoints { hand, views } => {
                let _ = write!(s, " hand={hand}");
                for v in views {
                    let tag = camera_tag(v.camera);
                    let a = v.axis();
                    let _ = write!(s, " {tag}.axis={},{},{} {tag}.pts=", a.x, a.y, a.z);
                    match &v.keypoints {
                        Some(k) => s.push_str(&join(&k.to_flat())),
                        None => s.push_str("none"),
                    }
                }
            }
            EventPayload::Pedal(e) => {
                let _ = write!(s, " pedal={} edge={}", e.pedal.as_str(), e.edge.as_str());
            }
            EventPayload::Template { hand, name } => {
                let _ = write!(s, " hand={hand} name={name}");
            }
            EventPayload::CouplingToggle | EventPayload::End => {}
        }
        s
    }
}

fn camera_tag(c: CameraId) -> &'static str {
    match c {
        CameraId::C1 => "c1",
        CameraId::C2 => "c2",
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_session(events: &[SessionEvent]) -> String {
    let mut out = format!("format: {SESSION_FORMAT}\n");
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

pub fn read_session(path: &Path) -> Result<Vec<SessionEvent>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_session(&text)
}

pub fn parse_session(text: &str) -> Result<Vec<SessionEvent>, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (n, header) = lines
        .next()
        .ok_or_else(|| FormatError::parse(1, "missing `format: 1` header"))?;
    let version = header
        .strip_prefix("format:")
        .map(str::trim)
        .ok_or_else(|| FormatError::parse(n, "first line must be the `format: 1` header"))?;
    if version != SESSION_FORMAT.to_string() {
        return Err(FormatError::UnsupportedFormat {
            found: version.to_string(),
            supported: SESSION_FORMAT,
        });
    }
    let mut events = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (n, line) in lines {
        let ev = parse_line(line).map_err(|m| FormatError::parse(n, m))?;
        if ev.t < last_t {
            return Err(FormatError::parse(n, format!("timestamp {} goes backwards", ev.t)));
        }
        last_t = ev.t;
        events.push(ev);
    }
    Ok(events)
}

struct Fields<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: &'a str) -> Result<Self, String> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, found `{tok}`"))?;
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return Err(format!("duplicate field `{k}`"));
            }
            pairs.push((k, v));
        }
        Ok(Fields { pairs })
    }

    fn get(&self, key: &str) -> Result<&'a str, String> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing field `{key}`"))
    }

    fn only(&self, allowed: &[&str]) -> Result<(), String> {
        match self.pairs.iter().find(|(k, _)| !allowed.contains(k)) {
            Some((k, _)) => Err(format!("unexpected field `{k}`")),
            None => Ok(()),
        }
    }
}

fn floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>, String> {
    let v = s
        .split(',')
        .map(|x| x.parse::<f64>().map_err(|_| format!("bad number `{x}` in {what}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(format!("{what} needs {n} numbers, found {}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(format!("{what} has non-finite values"));
    }
    Ok(v)
}

fn side(s: &str) -> Result<Side, String> {
    s.parse::<Side>().map_err(|_| format!("unknown side `{s}`"))
}

fn view(f: &Fields, camera: CameraId) -> Result<CameraView, String> {
    let tag = camera_tag(camera);
    let a = floats(f.get(&format!("{tag}.axis"))?, 3, "camera axis")?;
    let pts = f.get(&format!("{tag}.pts"))?;
    let keypoints = if pts == "none" {
        None
    } else {
        let flat = floats(pts, 63, "keypoints")?;
        Some(KeypointSet::from_flat(&flat).map_err(|e| e.to_string())?)
    };
    CameraView::new(camera, Vec3::new(a[0], a[1], a[2]), keypoints).map_err(|e| e.to_string())
}

fn parse_line(line: &str) -> Result<SessionEvent, String> {
    let f = Fields::parse(line)?;
    let t_str = f.get("t")?;
    let t: f64 = t_str.parse().map_err(|_| format!("bad timestamp `{t_str}`"))?;
    if !t.is_finite() || t < 0.0 {
        return Err(format!("timestamp must be finite and non-negative, found `{t_str}`"));
    }
    let payload = match f.get("kind")? {
        "pose" => {
            f.only(&["t", "kind", "arm", "p", "r"])?;
            let p = floats(f.get("p")?, 3, "position")?;
            let r = floats(f.get("r")?, 4, "rotation")?;
            let rotation = Rotation::from_wxyz(r[0], r[1], r[2], r[3]).map_err(|e| e.to_string())?;
            EventPayload::HandPose {
                arm: side(f.get("arm")?)?,
                pose: Pose::new(rotation, Vec3::new(p[0], p[1], p[2])),
            }
        }
        "keypoints" => {
            f.only(&["t", "kind", "hand", "c1.axis", "c1.pts", "c2.axis", "c2.pts"])?;
            EventPayload::Keypoints {
                hand: side(f.get("hand")?)?,
                views: [view(&f, CameraId::C1)?, view(&f, CameraId::C2)?],
            }
        }
        "pedal" => {
            f.only(&["t", "kind", "pedal", "edge"])?;
            EventPayload::Pedal(PedalEdge {
                pedal: f.get("pedal")?.parse::<PedalId>()?,
                edge: f.get("edge")?.parse::<Edge>()?,
            })
        }
        "coupling" => {
            f.only(&["t", "kind"])?;
            EventPayload::CouplingToggle
        }
        "template" => {
            f.only(&["t", "kind", "hand", "name"])?;
            EventPayload::Template {
                hand: side(f.get("hand")?)?,
                name: f.get("name")?.to_string(),
            }
        }
        "end" => {
            f.only(&["t", "kind"])?;
            EventPayload::End
        }
        other => return Err(format!("unknown event kind `{other}`")),
    };
    Ok(SessionEvent { t, payload })
}
