use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::thread;
use std::time::Duration;

use medteleop::runner::bridge::{read_frame, write_frame, BridgeClient, CloseReason, Inbound, Outbound, PROTOCOL_VERSION};
use medteleop::runner::{run_replay, LiveOptions, LiveServer, RunConfig};
use medteleop::teleop::{read_session, Edge, EventPayload, PedalId};
use medteleop::{Error, Side};

fn config() -> RunConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/configs/needle_injection.toml");
    RunConfig::load(&p).unwrap()
}

fn pose(arm: Side, x: f64) -> Inbound {
    let y = if arm == Side::Left { 0.2 } else { -0.2 };
    Inbound::Pose {
        seq: 0,
        arm,
        p: [0.3 + x, y, 1.0],
        r: [1.0, 0.0, 0.0, 0.0],
    }
}

fn pedal(edge: Edge) -> Inbound {
    Inbound::Pedal {
        seq: 0,
        pedal: PedalId::Left,
        edge,
    }
}

#[test]
fn recorded_live_session_replays_to_same_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let live_dir = dir.path().join("live");
    let handle = LiveServer::start(&config(), LiveOptions::new(0, &live_dir)).unwrap();
    let mut c = BridgeClient::connect(handle.local_addr()).unwrap();
    match &c.welcome {
        Outbound::Welcome { version, templates, .. } => {
            assert_eq!(*version, PROTOCOL_VERSION);
            assert!(templates.contains(&"syringe".to_string()));
        }
        other => panic!("{other:?}"),
    }
    c.next_snapshot().unwrap();

    c.send(pose(Side::Left, 0.0)).unwrap();
    c.send(pose(Side::Right, 0.0)).unwrap();
    c.send(pedal(Edge::Down)).unwrap();
    thread::sleep(Duration::from_millis(30));
    c.send(pedal(Edge::Up)).unwrap();
    for i in 0..100 {
        let arm = if i % 2 == 0 { Side::Left } else { Side::Right };
        c.send(pose(arm, 0.0005 * i as f64)).unwrap();
        if i % 10 == 0 {
            thread::sleep(Duration::from_millis(15));
        }
    }
    c.send(Inbound::Template {
        seq: 0,
        hand: Side::Right,
        name: "syringe".into(),
    })
    .unwrap();
    thread::sleep(Duration::from_millis(100));
    let snap = c.next_snapshot().unwrap();
    assert!(snap.tick > 0);
    c.send(Inbound::Bye { seq: 0 }).unwrap();
    assert_eq!(c.wait_close().unwrap(), CloseReason::Shutdown);

    let live = handle.stop().unwrap();
    let events = read_session(&live.session).unwrap();
    assert_eq!(events.last().unwrap().payload, EventPayload::End);
    // hello and bye are not recorded; the rest are, in order.
    assert_eq!(events.len(), 2 + 2 + 100 + 1 + 1);
    assert!(live.report.ticks > 0);

    let replay = run_replay(&config(), &live.session, &dir.path().join("replay")).unwrap();
    assert_eq!(replay.ticks, live.report.ticks);
    assert_eq!(replay.state_hash, live.report.state_hash);
    assert_eq!(replay.command_hash, live.report.command_hash);
    assert_eq!(
        std::fs::read(live_dir.join("state.log")).unwrap(),
        std::fs::read(dir.path().join("replay/state.log")).unwrap()
    );
}

#[test]
fn idle_client_still_receives_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let handle = LiveServer::start(&config(), LiveOptions::new(0, dir.path())).unwrap();
    let mut c = BridgeClient::connect(handle.local_addr()).unwrap();
    let a = c.next_snapshot().unwrap();
    let b = c.next_snapshot().unwrap();
    let d = c.next_snapshot().unwrap();
    assert!(a.tick < b.tick && b.tick < d.tick);
    assert!(d.arms.left.commanded.is_none());
    drop(c);
    handle.stop().unwrap();
}

fn raw_connect(addr: std::net::SocketAddr) -> TcpStream {
    let s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    s
}

fn close_reason(s: &mut TcpStream) -> CloseReason {
    loop {
        let body = read_frame(s).unwrap();
        if let Outbound::Close { reason, .. } = serde_json::from_slice(&body).unwrap() {
            return reason;
        }
    }
}

#[test]
fn protocol_violations_close_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let handle = LiveServer::start(&config(), LiveOptions::new(0, dir.path())).unwrap();
    let addr = handle.local_addr();

    let mut c = BridgeClient::connect(addr).unwrap();
    c.send_raw(br#"{"kind":"teleport","seq":1}"#).unwrap();
    assert_eq!(c.wait_close().unwrap(), CloseReason::UnknownKind);

    let mut c = BridgeClient::connect(addr).unwrap();
    c.send_raw(br#"{"kind":"coupling","seq":5}"#).unwrap();
    c.send_raw(br#"{"kind":"coupling","seq":5}"#).unwrap();
    assert_eq!(c.wait_close().unwrap(), CloseReason::BadSeq);

    let mut c = BridgeClient::connect(addr).unwrap();
    c.send_raw(br#"{"kind":"pose","seq":1,"arm":"left","p":[0,0,0],"r":[0,0,0,0]}"#).unwrap();
    assert_eq!(c.wait_close().unwrap(), CloseReason::Malformed);

    let mut c = BridgeClient::connect(addr).unwrap();
    c.send(Inbound::Template {
        seq: 0,
        hand: Side::Left,
        name: "banjo".into(),
    })
    .unwrap();
    assert_eq!(c.wait_close().unwrap(), CloseReason::UnknownTemplate);

    // First message must be hello.
    let mut s = raw_connect(addr);
    write_frame(&mut s, br#"{"kind":"coupling","seq":1}"#).unwrap();
    assert_eq!(close_reason(&mut s), CloseReason::Handshake);

    let mut s = raw_connect(addr);
    write_frame(&mut s, format!(r#"{{"kind":"hello","seq":0,"version":{}}}"#, PROTOCOL_VERSION + 1).as_bytes()).unwrap();
    assert_eq!(close_reason(&mut s), CloseReason::Handshake);

    // A length prefix over the cap is refused without reading the body.
    let mut s = raw_connect(addr);
    s.write_all(&(64u32 << 20).to_be_bytes()).unwrap();
    assert_eq!(close_reason(&mut s), CloseReason::TooLarge);
    let mut rest = Vec::new();
    let _ = s.read_to_end(&mut rest);

    // Violations close only the offending connection.
    let mut ok = BridgeClient::connect(addr).unwrap();
    ok.next_snapshot().unwrap();
    let live = handle.stop().unwrap();
    assert_eq!(ok.wait_close().unwrap(), CloseReason::Shutdown);
    // The coupling toggle accepted before the bad seq, then the end line.
    let n = read_session(&live.session).unwrap().len();
    assert_eq!(n, 2);
}

#[test]
fn duration_bounded_run_ends_by_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = LiveOptions::new(0, dir.path());
    opts.duration_s = Some(0.2);
    let live = LiveServer::start(&config(), opts).unwrap().wait().unwrap();
    assert_eq!(live.report.ticks, 20);
    assert!(dir.path().join("report.json").exists());
    let replay = run_replay(&config(), &live.session, &dir.path().join("r")).unwrap();
    assert_eq!(replay.state_hash, live.report.state_hash);
}

#[test]
fn port_in_use_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port();
    let err = LiveServer::start(&config(), LiveOptions::new(port, dir.path())).err().unwrap();
    assert!(matches!(err, Error::Startup(_)), "{err:?}");
    assert_eq!(err.exit_code(), Error::Startup(std::io::Error::other("x")).exit_code());
}
