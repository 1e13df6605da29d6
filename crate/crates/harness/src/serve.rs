//! `serve`: a training run steered live over a web socket.
//!
//! The trainer runs on the calling thread with a [`LiveSource`]. One network
//! thread owns the listener and the single client. They share only the
//! intervention mailbox (inbound), a newest-wins frame cell (outbound) and
//! the pause/finish control block.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use iddqn::agent::{RunObserver, StepSnapshot};
use iddqn::intervention::{LiveSource, Mailbox};
use iddqn::track::TrackSpec;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use crate::config::RunConfig;
use crate::error::{HarnessError, HarnessResult};
use crate::protocol::{parse_client, ClientMessage, Frame, ServerMessage, SessionInfo, PROTOCOL_VERSION};
use crate::train::{prepared, train_session, TrainSummary};

pub const BUSY_REASON: &str = "session already has an operator; only one client may connect";

/// Holds only the newest frame.
#[derive(Default)]
pub struct FrameCell(Mutex<Option<Frame>>);

impl FrameCell {
    pub fn put(&self, f: Frame) {
        *self.0.lock().unwrap_or_else(|p| p.into_inner()) = Some(f);
    }

    pub fn latest(&self) -> Option<Frame> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

#[derive(Default)]
struct ControlState {
    paused: bool,
    connected: bool,
}

#[derive(Default)]
pub struct Control {
    state: Mutex<ControlState>,
    cv: Condvar,
    finished: AtomicBool,
    done: Mutex<Option<ServerMessage>>,
}

impl Control {
    fn lock(&self) -> std::sync::MutexGuard<'_, ControlState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn set_paused(&self, on: bool) {
        self.lock().paused = on;
        self.cv.notify_all();
    }

    pub fn paused(&self) -> bool {
        self.lock().paused
    }

    fn set_connected(&self, on: bool) {
        let mut s = self.lock();
        s.connected = on;
        if !on {
            s.paused = false;
        }
        drop(s);
        self.cv.notify_all();
    }

    fn wait_for_client(&self) {
        let mut s = self.lock();
        while !s.connected {
            s = self.cv.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    fn wait_while_paused(&self) {
        let mut s = self.lock();
        while s.paused {
            s = self.cv.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }
}

/// Trainer-side observer: publishes frames, honors pause and the step rate.
struct SessionObserver {
    cell: Arc<FrameCell>,
    control: Arc<Control>,
    period: Option<Duration>,
    next: Option<Instant>,
}

impl RunObserver for SessionObserver {
    fn wants_steps(&self) -> bool {
        true
    }

    fn on_step(&mut self, s: &StepSnapshot) -> iddqn::Result<()> {
        self.cell.put(Frame::from_snapshot(s));
        self.control.wait_while_paused();
        if let Some(p) = self.period {
            let now = Instant::now();
            let next = self.next.map_or(now + p, |n| n.max(now.checked_sub(p).unwrap_or(now)) + p);
            if next > now {
                thread::sleep(next - now);
            }
            self.next = Some(next);
        }
        Ok(())
    }
}

fn send(ws: &mut WebSocket<TcpStream>, m: &ServerMessage) -> bool {
    ws.send(Message::text(m.to_text())).is_ok()
}

fn reject(stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(500)));
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let _ = ws.close(Some(CloseFrame {
            code: CloseCode::Policy,
            reason: BUSY_REASON.into(),
        }));
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            match ws.read() {
                Ok(_) => continue,
                Err(_) => break,
            }
        }
    }
}

struct Network {
    listener: TcpListener,
    mailbox: Mailbox,
    cell: Arc<FrameCell>,
    control: Arc<Control>,
    hello: ServerMessage,
    tick: Duration,
}

impl Network {
    fn admit(&self, stream: TcpStream) -> Option<WebSocket<TcpStream>> {
        stream.set_nonblocking(false).ok()?;
        stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
        let mut ws = tungstenite::accept(stream).ok()?;
        ws.get_mut().set_read_timeout(Some(Duration::from_millis(2))).ok()?;
        if !send(&mut ws, &self.hello) {
            return None;
        }
        self.mailbox.set_connected(true);
        self.control.set_connected(true);
        log::info!("operator connected");
        Some(ws)
    }

    fn drop_client(&self) {
        self.mailbox.set_connected(false);
        self.control.set_connected(false);
        log::info!("operator disconnected; training continues without human input");
    }

    /// Drain pending client messages. Returns false when the client is gone.
    fn read_client(&self, ws: &mut WebSocket<TcpStream>) -> bool {
        loop {
            match ws.read() {
                Ok(Message::Text(t)) => match parse_client(&t) {
                    Ok(ClientMessage::Steer { index }) => {
                        if let Err(e) = self.mailbox.post_steer(index) {
                            send(ws, &ServerMessage::warning(e.to_string()));
                        }
                    }
                    Ok(ClientMessage::Engage { on }) => self.mailbox.set_engaged(on),
                    Ok(ClientMessage::Pause) => self.control.set_paused(true),
                    Ok(ClientMessage::Resume) => self.control.set_paused(false),
                    Err(w) => {
                        log::warn!("{w}");
                        if !send(ws, &ServerMessage::warning(w)) {
                            return false;
                        }
                    }
                },
                Ok(Message::Close(_)) => return false,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return true
                }
                Err(_) => return false,
            }
        }
    }

    fn run(self) {
        let mut client: Option<WebSocket<TcpStream>> = None;
        let mut next_tick = Instant::now();
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    if client.is_some() {
                        log::warn!("rejecting a second client");
                        reject(stream);
                    } else {
                        client = self.admit(stream);
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {}
                Err(e) => log::warn!("accept failed: {e}"),
            }
            if let Some(ws) = client.as_mut() {
                if !self.read_client(ws) {
                    client = None;
                    self.drop_client();
                }
            }
            if self.control.finished.load(Ordering::SeqCst) {
                if let Some(mut ws) = client.take() {
                    if let Some(done) = self.control.done.lock().unwrap_or_else(|p| p.into_inner()).clone() {
                        send(&mut ws, &done);
                    }
                    let _ = ws.close(Some(CloseFrame {
                        code: CloseCode::Normal,
                        reason: "training finished".into(),
                    }));
                    let _ = ws.flush();
                    self.drop_client();
                }
                return;
            }
            let now = Instant::now();
            if now >= next_tick {
                if let (Some(ws), Some(mut f)) = (client.as_mut(), self.cell.latest()) {
                    f.paused = self.control.paused();
                    if !send(ws, &ServerMessage::Frame(f)) {
                        client = None;
                        self.drop_client();
                    }
                }
                next_tick = next_tick.max(now.checked_sub(self.tick).unwrap_or(now)) + self.tick;
            }
            if client.is_none() {
                thread::sleep(Duration::from_millis(2));
            }
        }
    }
}

/// Run a live session on an already bound listener. With `wait_for_client`
/// training starts once the first operator connects.
pub fn serve(
    cfg: &RunConfig,
    out: &Path,
    listener: TcpListener,
    wait_for_client: bool,
) -> HarnessResult<TrainSummary> {
    let cfg = prepared(cfg)?;
    listener
        .set_nonblocking(true)
        .map_err(|e| HarnessError::io("configuring listener", e))?;
    let track: TrackSpec = cfg.training_track()?.spec().clone();
    let mailbox = Mailbox::new();
    let cell = Arc::new(FrameCell::default());
    let control = Arc::new(Control::default());
    let sched = cfg.intervention.schedule;
    let net = Network {
        listener,
        mailbox: mailbox.clone(),
        cell: cell.clone(),
        control: control.clone(),
        hello: ServerMessage::Hello {
            v: PROTOCOL_VERSION,
            track,
            session: SessionInfo {
                n_actions: iddqn::env::N_ACTIONS,
                h_freq: sched.h_freq,
                h_steps: sched.h_steps,
                h_limit: sched.h_limit,
                total_steps: cfg.run.total_steps,
                step_hz: cfg.serve.step_hz,
                frame_hz: cfg.serve.frame_hz,
            },
        },
        tick: Duration::from_secs_f64(1.0 / cfg.serve.frame_hz),
    };
    let handle = thread::Builder::new()
        .name("session-net".into())
        .spawn(move || net.run())
        .map_err(|e| HarnessError::io("starting network thread", e))?;
    if wait_for_client {
        control.wait_for_client();
    }
    let mut obs = SessionObserver {
        cell,
        control: control.clone(),
        period: (cfg.serve.step_hz > 0.0).then(|| Duration::from_secs_f64(1.0 / cfg.serve.step_hz)),
        next: None,
    };
    let result = train_session(&cfg, out, Some(LiveSource::new(mailbox)), &mut obs);
    if let Ok(s) = &result {
        *control.done.lock().unwrap_or_else(|p| p.into_inner()) = Some(ServerMessage::Done {
            v: PROTOCOL_VERSION,
            total_steps: s.total_steps,
            episodes: s.episodes,
            intervened_steps: s.intervened_steps,
        });
    }
    control.finished.store(true, Ordering::SeqCst);
    let _ = handle.join();
    result
}

/// Bind `host:port`; a busy port is a configuration error.
pub fn bind(host: &str, port: u16) -> HarnessResult<TcpListener> {
    TcpListener::bind((host, port)).map_err(|e| HarnessError::Config(format!("cannot listen on {host}:{port}: {e}")))
}
