//! Live mode: a paced control loop fed by bridge clients.
//!
//! The control thread owns the controller. Each connection has a reader
//! thread pushing decoded messages into a bounded inbound channel, drained
//! at tick boundaries, and a writer draining a per-connection snapshot queue
//! that drops its oldest entry on overflow. Every applied event is appended
//! to `session.log` stamped with the tick it was applied on, so the file
//! replays to the same state log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam::channel::{bounded, Receiver, Sender};
use crossbeam::queue::ArrayQueue;

use super::bridge::{
    decode_inbound, read_frame, write_message, CloseReason, FrameError, Inbound, Outbound, Snapshot,
    PROTOCOL_VERSION,
};
use super::config::RunConfig;
use super::controller::{Controller, Setup};
use super::report::Report;
use super::write_report;
use crate::error::{Error, Result};
use crate::teleop::{parse_session, EventPayload, SessionEvent, SESSION_FORMAT};

const INBOUND_CAPACITY: usize = 1024;
const SNAPSHOT_QUEUE: usize = 8;
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
const POLL: Duration = Duration::from_millis(2);

#[derive(Clone, Debug)]
pub struct LiveOptions {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub out_dir: PathBuf,
    /// Stop on its own after this much simulated time.
    pub duration_s: Option<f64>,
}

impl LiveOptions {
    pub fn new(port: u16, out_dir: impl Into<PathBuf>) -> Self {
        LiveOptions {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port,
            out_dir: out_dir.into(),
            duration_s: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LiveOutcome {
    pub report: Report,
    /// Recorded session, replayable with `run --replay`.
    pub session: PathBuf,
}

type SnapshotQueue = Arc<ArrayQueue<Snapshot>>;

struct Shared {
    stop: AtomicBool,
    clients: Mutex<Vec<SnapshotQueue>>,
    inbound: Sender<Inbound>,
    templates: Vec<String>,
    welcome: Outbound,
}

pub struct LiveServer;

pub struct LiveHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    control: JoinHandle<Result<LiveOutcome>>,
    acceptor: JoinHandle<()>,
}

impl LiveServer {
    /// Binds the port, then starts the control loop and acceptor threads.
    pub fn start(cfg: &RunConfig, opts: LiveOptions) -> Result<LiveHandle> {
        let setup = Setup::load(cfg)?;
        std::fs::create_dir_all(&opts.out_dir)
            .map_err(|e| Error::Runtime(format!("{}: {e}", opts.out_dir.display())))?;
        let listener = TcpListener::bind((opts.bind, opts.port)).map_err(Error::Startup)?;
        listener.set_nonblocking(true).map_err(Error::Startup)?;
        let addr = listener.local_addr().map_err(Error::Startup)?;

        let (tx, rx) = bounded(INBOUND_CAPACITY);
        let shared = Arc::new(Shared {
            stop: AtomicBool::new(false),
            clients: Mutex::new(Vec::new()),
            inbound: tx,
            templates: setup.templates.names(),
            welcome: Outbound::Welcome {
                seq: 0,
                version: PROTOCOL_VERSION,
                scenario: setup.scenario.name.clone(),
                templates: setup.templates.names(),
                pedals: setup.scenario.pedals,
                control_rate_hz: cfg.control_rate_hz,
                snapshot_rate_hz: cfg.snapshot_rate_hz,
            },
        });
        let ctl = Controller::new(setup)?;
        let tps = cfg.ticks_per_snapshot();
        let sh = shared.clone();
        let control = thread::spawn(move || control_loop(ctl, rx, sh, opts, tps));
        let sh = shared.clone();
        let acceptor = thread::spawn(move || accept_loop(listener, sh));
        Ok(LiveHandle {
            addr,
            shared,
            control,
            acceptor,
        })
    }
}

impl LiveHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// True once the control loop has ended (duration reached or error).
    pub fn is_finished(&self) -> bool {
        self.control.is_finished()
    }

    /// Stops the loop and returns the report of everything run so far.
    pub fn stop(self) -> Result<LiveOutcome> {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    /// Waits for a `duration_s`-bounded run to end by itself.
    pub fn wait(self) -> Result<LiveOutcome> {
        while !self.control.is_finished() {
            thread::sleep(Duration::from_millis(10));
        }
        self.stop()
    }

    fn join(self) -> Result<LiveOutcome> {
        let out = self
            .control
            .join()
            .map_err(|_| Error::Runtime("control loop panicked".into()))?;
        let _ = self.acceptor.join();
        out
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Runtime(e.to_string())
}

fn control_loop(
    mut ctl: Controller,
    rx: Receiver<Inbound>,
    shared: Arc<Shared>,
    opts: LiveOptions,
    ticks_per_snapshot: u64,
) -> Result<LiveOutcome> {
    let result = run_control(&mut ctl, &rx, &shared, &opts, ticks_per_snapshot);
    shared.stop.store(true, Ordering::SeqCst);
    let session = result?;
    let report = ctl.finish()?;
    write_report(&report, &opts.out_dir)?;
    Ok(LiveOutcome { report, session })
}

fn run_control(
    ctl: &mut Controller,
    rx: &Receiver<Inbound>,
    shared: &Shared,
    opts: &LiveOptions,
    ticks_per_snapshot: u64,
) -> Result<PathBuf> {
    let dt = ctl.setup().dt;
    let state_log = File::create(opts.out_dir.join("state.log")).map_err(io_err)?;
    ctl.set_state_log(Box::new(BufWriter::new(state_log)))?;
    let session_path = opts.out_dir.join("session.log");
    let mut session = File::create(&session_path).map_err(io_err)?;
    writeln!(session, "format: {SESSION_FORMAT}").map_err(io_err)?;

    let start = Instant::now();
    publish(shared, ctl);
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        if let Some(d) = opts.duration_s {
            if ctl.tick() as f64 * dt >= d - 1e-9 {
                break;
            }
        }
        let t = ctl.tick() as f64 * dt;
        while let Ok(msg) = rx.try_recv() {
            let Ok(Some(payload)) = msg.to_event() else { continue };
            let line = SessionEvent::new(t, payload).to_line();
            // Apply exactly what replay will read back.
            let ev = parse_session(&format!("format: {SESSION_FORMAT}\n{line}\n"))?.remove(0);
            writeln!(session, "{line}").map_err(io_err)?;
            session.flush().map_err(io_err)?;
            ctl.apply(&ev.payload)?;
        }
        ctl.step()?;
        if ctl.tick().is_multiple_of(ticks_per_snapshot) {
            publish(shared, ctl);
        }
        let due = start + Duration::from_secs_f64(ctl.tick() as f64 * dt);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    }
    let end = SessionEvent::new(ctl.tick() as f64 * dt, EventPayload::End);
    writeln!(session, "{}", end.to_line()).map_err(io_err)?;
    session.flush().map_err(io_err)?;
    Ok(session_path)
}

fn publish(shared: &Shared, ctl: &Controller) {
    let snap = Snapshot::new(ctl.state(), ctl.clutch(), ctl.commanded());
    for q in shared.clients.lock().unwrap().iter() {
        q.force_push(snap.clone());
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut conns = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let sh = shared.clone();
                conns.push(thread::spawn(move || serve(stream, sh)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
    for c in conns {
        let _ = c.join();
    }
}

struct Closer {
    seq: u64,
}

impl Closer {
    fn close(&mut self, stream: &mut TcpStream, reason: CloseReason, detail: impl Into<String>) {
        self.seq += 1;
        let _ = write_message(
            stream,
            &Outbound::Close {
                seq: self.seq,
                reason,
                detail: detail.into(),
            },
        );
        let _ = stream.shutdown(Shutdown::Both);
    }
}

fn handshake(stream: &mut TcpStream) -> std::result::Result<(), (CloseReason, String)> {
    let body = read_frame(stream).map_err(|e| match e {
        FrameError::TooLarge(n) => (CloseReason::TooLarge, format!("{n} bytes")),
        FrameError::Io(e) => (CloseReason::Handshake, e.to_string()),
    })?;
    match decode_inbound(&body) {
        Ok(Inbound::Hello { version, .. }) if version == PROTOCOL_VERSION => Ok(()),
        Ok(Inbound::Hello { version, .. }) => {
            Err((CloseReason::Handshake, format!("unsupported version {version}")))
        }
        _ => Err((CloseReason::Handshake, "first message must be hello".into())),
    }
}

fn serve(mut stream: TcpStream, shared: Arc<Shared>) {
    let mut closer = Closer { seq: 0 };
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT));
    if let Err((reason, detail)) = handshake(&mut stream) {
        closer.close(&mut stream, reason, detail);
        return;
    }
    if write_message(&mut stream, &shared.welcome).is_err() {
        return;
    }
    let _ = stream.set_read_timeout(None);
    let queue: SnapshotQueue = Arc::new(ArrayQueue::new(SNAPSHOT_QUEUE));
    shared.clients.lock().unwrap().push(queue.clone());

    let verdict: Arc<Mutex<Option<(CloseReason, String)>>> = Arc::new(Mutex::new(None));
    let reader_done = Arc::new(AtomicBool::new(false));
    let reader = stream.try_clone().ok().map(|r| {
        let (v, done, sh) = (verdict.clone(), reader_done.clone(), shared.clone());
        thread::spawn(move || {
            let res = read_loop(r, &sh);
            if let Err(x) = res {
                *v.lock().unwrap() = Some(x);
            }
            done.store(true, Ordering::SeqCst);
        })
    });

    loop {
        if let Some((reason, detail)) = verdict.lock().unwrap().take() {
            closer.close(&mut stream, reason, detail);
            break;
        }
        if reader_done.load(Ordering::SeqCst) || reader.is_none() {
            let _ = stream.shutdown(Shutdown::Both);
            break;
        }
        if shared.stop.load(Ordering::SeqCst) {
            // Deliver whatever the final tick published first.
            while let Some(s) = queue.pop() {
                closer.seq += 1;
                let _ = write_message(&mut stream, &Outbound::Snapshot { seq: closer.seq, snapshot: Box::new(s) });
            }
            closer.close(&mut stream, CloseReason::Shutdown, "server stopping");
            break;
        }
        let mut sent = false;
        while let Some(s) = queue.pop() {
            closer.seq += 1;
            let msg = Outbound::Snapshot {
                seq: closer.seq,
                snapshot: Box::new(s),
            };
            if write_message(&mut stream, &msg).is_err() {
                let _ = stream.shutdown(Shutdown::Both);
                sent = false;
                reader_done.store(true, Ordering::SeqCst);
                break;
            }
            sent = true;
        }
        if !sent {
            thread::sleep(POLL);
        }
    }
    shared.clients.lock().unwrap().retain(|q| !Arc::ptr_eq(q, &queue));
    if let Some(r) = reader {
        let _ = r.join();
    }
}

/// Reads client messages until EOF, `bye` or a violation.
fn read_loop(mut r: TcpStream, shared: &Shared) -> std::result::Result<(), (CloseReason, String)> {
    let mut last_seq = 0u64;
    loop {
        let body = match read_frame(&mut r) {
            Ok(b) => b,
            Err(FrameError::TooLarge(n)) => return Err((CloseReason::TooLarge, format!("{n} bytes"))),
            Err(FrameError::Io(_)) => return Ok(()),
        };
        let msg = decode_inbound(&body).map_err(|reason| {
            let text = String::from_utf8_lossy(&body);
            (reason, text.chars().take(120).collect::<String>())
        })?;
        if msg.seq() <= last_seq {
            return Err((CloseReason::BadSeq, format!("seq {} after {last_seq}", msg.seq())));
        }
        last_seq = msg.seq();
        match &msg {
            Inbound::Hello { .. } => return Err((CloseReason::Handshake, "repeated hello".into())),
            Inbound::Bye { .. } => return Err((CloseReason::Shutdown, "bye".into())),
            Inbound::Template { name, .. } if !shared.templates.contains(name) => {
                return Err((CloseReason::UnknownTemplate, name.clone()))
            }
            _ => {}
        }
        if let Err(reason) = msg.to_event() {
            return Err((reason, "invalid payload".into()));
        }
        if shared.inbound.send(msg).is_err() {
            return Ok(());
        }
    }
}
