//! Bridge wire protocol between the runner and an operator console.
//!
//! One TCP stream carries frames of a 4-byte big-endian length followed by
//! a UTF-8 JSON object with a `kind` tag and a `seq` number. The client's
//! first message must be `hello` with a supported `version`; the server
//! answers `welcome` and then streams `snapshot`s. Sequence numbers strictly
//! increase per direction. A protocol violation ends the connection with a
//! `close` message naming a [`CloseReason`].

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::geom::{Pose, Rotation, Vec3};
use crate::side::{PerSide, Side};
use crate::sim::SimState;
use crate::teleop::{ClutchState, Edge, EventPayload, PedalConfig, PedalEdge, PedalId};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloseReason {
    /// First message was not a supported `hello`.
    Handshake,
    UnknownKind,
    BadSeq,
    Malformed,
    TooLarge,
    UnknownTemplate,
    /// Server shutting down or client `bye`.
    Shutdown,
}

impl CloseReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            CloseReason::Handshake => "handshake",
            CloseReason::UnknownKind => "unknown-kind",
            CloseReason::BadSeq => "bad-seq",
            CloseReason::Malformed => "malformed",
            CloseReason::TooLarge => "too-large",
            CloseReason::UnknownTemplate => "unknown-template",
            CloseReason::Shutdown => "shutdown",
        }
    }
}

impl std::fmt::Display for CloseReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Client → server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Inbound {
    Hello { seq: u64, version: u32 },
    /// Operator hand pose sample: position and `[w, x, y, z]` quaternion.
    Pose { seq: u64, arm: Side, p: [f64; 3], r: [f64; 4] },
    Pedal { seq: u64, pedal: PedalId, edge: Edge },
    Template { seq: u64, hand: Side, name: String },
    Coupling { seq: u64 },
    Bye { seq: u64 },
}

const INBOUND_KINDS: [&str; 6] = ["hello", "pose", "pedal", "template", "coupling", "bye"];

impl Inbound {
    pub fn seq(&self) -> u64 {
        match self {
            Inbound::Hello { seq, .. }
            | Inbound::Pose { seq, .. }
            | Inbound::Pedal { seq, .. }
            | Inbound::Template { seq, .. }
            | Inbound::Coupling { seq }
            | Inbound::Bye { seq } => *seq,
        }
    }

    /// The session event this message records as, if any.
    pub fn to_event(&self) -> Result<Option<EventPayload>, CloseReason> {
        Ok(Some(match self {
            Inbound::Pose { arm, p, r, .. } => {
                let rot = Rotation::from_wxyz(r[0], r[1], r[2], r[3]).map_err(|_| CloseReason::Malformed)?;
                let pose = Pose::new(rot, Vec3::from(*p));
                if !pose.is_finite() {
                    return Err(CloseReason::Malformed);
                }
                EventPayload::HandPose { arm: *arm, pose }
            }
            Inbound::Pedal { pedal, edge, .. } => EventPayload::Pedal(PedalEdge {
                pedal: *pedal,
                edge: *edge,
            }),
            Inbound::Template { hand, name, .. } => {
                if name.is_empty() || name.chars().any(char::is_whitespace) {
                    return Err(CloseReason::Malformed);
                }
                EventPayload::Template {
                    hand: *hand,
                    name: name.clone(),
                }
            }
            Inbound::Coupling { .. } => EventPayload::CouplingToggle,
            Inbound::Hello { .. } | Inbound::Bye { .. } => return Ok(None),
        }))
    }
}

/// Decodes one inbound frame body, distinguishing unknown kinds from
/// otherwise malformed messages.
pub fn decode_inbound(body: &[u8]) -> Result<Inbound, CloseReason> {
    let v: serde_json::Value = serde_json::from_slice(body).map_err(|_| CloseReason::Malformed)?;
    let kind = v.get("kind").and_then(|k| k.as_str()).ok_or(CloseReason::Malformed)?;
    if !INBOUND_KINDS.contains(&kind) {
        return Err(CloseReason::UnknownKind);
    }
    serde_json::from_value(v).map_err(|_| CloseReason::Malformed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub p: [f64; 3],
    pub r: [f64; 4],
}

impl From<&Pose> for PoseMsg {
    fn from(pose: &Pose) -> Self {
        let p = pose.position;
        PoseMsg {
            p: [p.x, p.y, p.z],
            r: pose.rotation.wxyz(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSnapshot {
    pub ee: PoseMsg,
    /// Last commanded end-effector pose, if the operator has driven the arm.
    pub commanded: Option<PoseMsg>,
    pub q: Vec<f64>,
    pub force: [f64; 3],
    pub torque: [f64; 3],
    pub in_contact: bool,
    pub clutched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandSnapshot {
    pub q: Vec<f64>,
    pub template: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub bag_compression: Option<f64>,
    pub kinetic_energy: f64,
}

/// Complete renderable state; no earlier snapshot is needed to draw it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub clock: f64,
    pub coupling: bool,
    pub arms: PerSide<ArmSnapshot>,
    pub hands: PerSide<HandSnapshot>,
    pub metrics: SnapshotMetrics,
}

impl Snapshot {
    pub fn new(state: &SimState, clutch: &ClutchState, commanded: &PerSide<Option<Pose>>) -> Self {
        Snapshot {
            tick: state.tick,
            clock: state.clock,
            coupling: clutch.coupling(),
            arms: PerSide::from_fn(|s| {
                let a = &state.arms[s];
                ArmSnapshot {
                    ee: PoseMsg::from(&a.ee),
                    commanded: commanded[s].as_ref().map(PoseMsg::from),
                    q: a.q.angles().to_vec(),
                    force: a.wrench.force,
                    torque: a.wrench.torque,
                    in_contact: a.in_contact(),
                    clutched: clutch.is_engaged(s),
                }
            }),
            hands: PerSide::from_fn(|s| HandSnapshot {
                q: state.hands[s].q.clone(),
                template: state.hands[s].template.clone(),
            }),
            metrics: SnapshotMetrics {
                bag_compression: state.bag_compression,
                kinetic_energy: state.kinetic_energy(),
            },
        }
    }
}

/// Server → client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outbound {
    Welcome {
        seq: u64,
        version: u32,
        scenario: String,
        templates: Vec<String>,
        pedals: PedalConfig,
        control_rate_hz: f64,
        snapshot_rate_hz: f64,
    },
    Snapshot {
        seq: u64,
        #[serde(flatten)]
        snapshot: Box<Snapshot>,
    },
    Close {
        seq: u64,
        reason: CloseReason,
        detail: String,
    },
}

impl Outbound {
    pub fn seq(&self) -> u64 {
        match self {
            Outbound::Welcome { seq, .. } | Outbound::Snapshot { seq, .. } | Outbound::Close { seq, .. } => *seq,
        }
    }
}

#[derive(Debug)]
pub enum FrameError {
    Io(io::Error),
    TooLarge(usize),
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        FrameError::Io(e)
    }
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, FrameError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn write_message<T: Serialize>(w: &mut impl Write, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &body)
}

/// Minimal blocking client, used by tests and scripted operators.
pub struct BridgeClient {
    stream: TcpStream,
    seq: u64,
    pub welcome: Outbound,
}

impl BridgeClient {
    /// Connects and completes the handshake.
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        write_message(&mut stream, &Inbound::Hello { seq: 0, version: PROTOCOL_VERSION })?;
        let mut c = BridgeClient {
            stream,
            seq: 0,
            welcome: Outbound::Close {
                seq: 0,
                reason: CloseReason::Handshake,
                detail: String::new(),
            },
        };
        c.welcome = c.recv()?;
        match c.welcome {
            Outbound::Welcome { .. } => Ok(c),
            ref other => Err(io::Error::other(format!("handshake refused: {other:?}"))),
        }
    }

    /// Sends a message, replacing its sequence number with the next one.
    pub fn send(&mut self, mut msg: Inbound) -> io::Result<()> {
        self.seq += 1;
        match &mut msg {
            Inbound::Hello { seq, .. }
            | Inbound::Pose { seq, .. }
            | Inbound::Pedal { seq, .. }
            | Inbound::Template { seq, .. }
            | Inbound::Coupling { seq }
            | Inbound::Bye { seq } => *seq = self.seq,
        }
        write_message(&mut self.stream, &msg)
    }

    /// Sends a raw frame body (for protocol tests).
    pub fn send_raw(&mut self, body: &[u8]) -> io::Result<()> {
        write_frame(&mut self.stream, body)
    }

    pub fn recv(&mut self) -> io::Result<Outbound> {
        let body = read_frame(&mut self.stream).map_err(|e| match e {
            FrameError::Io(e) => e,
            FrameError::TooLarge(n) => io::Error::other(format!("frame of {n} bytes")),
        })?;
        serde_json::from_slice(&body).map_err(io::Error::other)
    }

    /// Receives until the next snapshot.
    pub fn next_snapshot(&mut self) -> io::Result<Snapshot> {
        loop {
            match self.recv()? {
                Outbound::Snapshot { snapshot, .. } => return Ok(*snapshot),
                Outbound::Close { reason, detail, .. } => {
                    return Err(io::Error::new(io::ErrorKind::ConnectionAborted, format!("{reason}: {detail}")))
                }
                Outbound::Welcome { .. } => {}
            }
        }
    }

    /// Receives until the server's `close`, returning its reason.
    pub fn wait_close(&mut self) -> io::Result<CloseReason> {
        loop {
            if let Outbound::Close { reason, .. } = self.recv()? {
                return Ok(reason);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_distinguished() {
        assert_eq!(decode_inbound(br#"{"kind":"teleport","seq":1}"#), Err(CloseReason::UnknownKind));
        assert_eq!(decode_inbound(br#"{"kind":"pose","seq":1}"#), Err(CloseReason::Malformed));
        assert_eq!(decode_inbound(b"not json"), Err(CloseReason::Malformed));
    }

    #[test]
    fn inbound_round_trip() {
        let m = Inbound::Pedal {
            seq: 4,
            pedal: PedalId::Left,
            edge: Edge::Down,
        };
        let body = serde_json::to_vec(&m).unwrap();
        assert_eq!(decode_inbound(&body).unwrap(), m);
    }

    #[test]
    fn frames_round_trip_and_cap() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{}").unwrap();
        assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), b"{}");
        let big = ((MAX_FRAME_BYTES + 1) as u32).to_be_bytes();
        assert!(matches!(read_frame(&mut big.as_slice()), Err(FrameError::TooLarge(_))));
    }
}
