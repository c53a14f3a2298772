//! TCP service: session registry, console connections and the health
//! endpoint.
//!
//! One port serves both the framed protocol and plain-HTTP health checks;
//! a connection whose first bytes are `GET ` is treated as HTTP. No valid
//! frame can start that way, since it would announce a payload above
//! [`MAX_FRAME`](crate::protocol::MAX_FRAME).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use lazydagger_core::env::{ActionBounds, EnvAction, EnvState, Environment, Scene};
use lazydagger_core::meta::Mode;
use lazydagger_core::safety::AbsoluteThresholds;
use serde::{Deserialize, Serialize};

use crate::protocol::{
    read_body, write_message, Counters, ErrorCode, Frame, HumanAction, InterventionRequest, Message, Phase, Resync,
    PROTOCOL_VERSION,
};
use crate::supervisor::RemoteSupervisor;
use crate::{InterventionError, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub session_id: String,
    /// Shared secret every console must present in `hello`.
    pub token: String,
    pub timeout: Duration,
    /// Send every `decimation`-th autonomous step as a summary; 0 disables
    /// summaries.
    pub decimation: usize,
    pub bounds: ActionBounds,
    pub scene: Scene,
}

impl SessionConfig {
    pub fn for_env(session_id: &str, token: &str, env: &dyn Environment) -> Self {
        SessionConfig {
            session_id: session_id.into(),
            token: token.into(),
            timeout: DEFAULT_TIMEOUT,
            decimation: 10,
            bounds: env.spec().bounds.clone(),
            scene: env.scene(),
        }
    }
}

/// What a timestamped session event was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    RequestSent { episode: usize, t: usize },
    ActionAccepted { episode: usize, t: usize },
    ActionRejected { t: usize },
    StepExecuted { episode: usize, t: usize, mode: Mode },
    ConsoleJoined,
    ConsoleLeft,
}

#[derive(Debug, Clone)]
pub struct Event {
    pub at: Instant,
    pub kind: EventKind,
}

pub(crate) enum Answer {
    Action(EnvAction),
    Disconnected,
}

struct Console {
    id: u64,
    stream: TcpStream,
}

pub(crate) struct View {
    pub mode: Mode,
    pub episode: usize,
    pub t: usize,
    pub state: Option<EnvState>,
    pub counters: Counters,
    pub autonomous_steps: u64,
    pub thresholds: Option<AbsoluteThresholds>,
}

pub(crate) struct Inner {
    pub phase: Phase,
    console: Option<Console>,
    next_console: u64,
    pub pending: Option<InterventionRequest>,
    pub answer: Option<Answer>,
    pub view: View,
    pub events: Vec<Event>,
}

impl Inner {
    pub fn log(&mut self, kind: EventKind) {
        self.events.push(Event {
            at: Instant::now(),
            kind,
        });
    }

    pub fn has_console(&self) -> bool {
        self.console.is_some()
    }

    /// Best effort: a failed write drops the console.
    pub fn send(&mut self, message: &Message) {
        let Some(console) = self.console.as_mut() else {
            return;
        };
        if write_message(&mut console.stream, message).is_err() {
            self.drop_console();
        }
    }

    fn drop_console(&mut self) {
        if let Some(c) = self.console.take() {
            let _ = c.stream.shutdown(Shutdown::Both);
            self.log(EventKind::ConsoleLeft);
            if self.pending.is_some() && self.answer.is_none() {
                self.answer = Some(Answer::Disconnected);
            }
        }
    }

    fn resync(&self, config: &SessionConfig) -> Message {
        Message::Resync(Resync {
            session_id: config.session_id.clone(),
            phase: self.phase,
            mode: self.view.mode,
            episode: self.view.episode,
            t: self.view.t,
            state: self.view.state.clone(),
            scene: config.scene.clone(),
            counters: self.view.counters,
            thresholds: self.view.thresholds,
            pending: self.pending.clone(),
        })
    }
}

pub(crate) struct Session {
    pub config: SessionConfig,
    pub inner: Mutex<Inner>,
    pub cond: Condvar,
}

impl Session {
    fn new(config: SessionConfig) -> Self {
        Session {
            config,
            inner: Mutex::new(Inner {
                phase: Phase::Idle,
                console: None,
                next_console: 0,
                pending: None,
                answer: None,
                view: View {
                    mode: Mode::Autonomous,
                    episode: 0,
                    t: 0,
                    state: None,
                    counters: Counters::default(),
                    autonomous_steps: 0,
                    thresholds: None,
                },
                events: Vec::new(),
            }),
            cond: Condvar::new(),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHealth {
    pub session_id: String,
    pub phase: Phase,
    pub console_connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub protocol: u32,
    pub sessions: Vec<SessionHealth>,
}

struct Shared {
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    stopping: AtomicBool,
    connections: Mutex<Vec<TcpStream>>,
}

impl Shared {
    fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    fn health(&self) -> Health {
        let sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let mut list: Vec<SessionHealth> = sessions
            .values()
            .map(|s| {
                let inner = s.lock();
                SessionHealth {
                    session_id: s.config.session_id.clone(),
                    phase: inner.phase,
                    console_connected: inner.has_console(),
                }
            })
            .collect();
        list.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        Health {
            status: "ok".into(),
            protocol: PROTOCOL_VERSION,
            sessions: list,
        }
    }
}

/// A running service. Dropping it shuts it down.
pub struct ServiceHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

/// Binds `bind_address` and opens the first session.
pub fn serve(bind_address: &str, session: SessionConfig) -> Result<ServiceHandle> {
    let listener = TcpListener::bind(bind_address).map_err(|e| InterventionError::Bind {
        address: bind_address.to_string(),
        source: e,
    })?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        sessions: Mutex::new(HashMap::new()),
        stopping: AtomicBool::new(false),
        connections: Mutex::new(Vec::new()),
    });
    let handle = ServiceHandle {
        addr,
        shared: shared.clone(),
        accept: Some(std::thread::spawn(move || accept_loop(listener, shared))),
    };
    handle.open_session(session)?;
    Ok(handle)
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn open_session(&self, config: SessionConfig) -> Result<()> {
        let mut sessions = self.shared.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if sessions.contains_key(&config.session_id) {
            return Err(InterventionError::DuplicateSession(config.session_id));
        }
        sessions.insert(config.session_id.clone(), Arc::new(Session::new(config)));
        Ok(())
    }

    /// The rollout side of a session.
    pub fn supervisor(&self, session_id: &str) -> Result<RemoteSupervisor> {
        self.shared
            .session(session_id)
            .map(RemoteSupervisor::new)
            .ok_or_else(|| InterventionError::UnknownSession(session_id.to_string()))
    }

    pub fn health(&self) -> Health {
        self.shared.health()
    }

    pub fn events(&self, session_id: &str) -> Vec<Event> {
        self.shared
            .session(session_id)
            .map(|s| s.lock().events.clone())
            .unwrap_or_default()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        for c in self.shared.connections.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        for s in self.shared.sessions.lock().unwrap_or_else(|e| e.into_inner()).values() {
            let mut inner = s.lock();
            inner.drop_console();
            s.cond.notify_all();
        }
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        if let Ok(clone) = stream.try_clone() {
            shared.connections.lock().unwrap_or_else(|e| e.into_inner()).push(clone);
        }
        let shared = shared.clone();
        std::thread::spawn(move || {
            let _ = handle_connection(stream, &shared);
        });
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) -> Result<()> {
    let mut head = [0u8; 4];
    stream.read_exact(&mut head)?;
    if &head == b"GET " {
        return answer_http(stream, shared);
    }
    let frame = read_body(&mut stream, u32::from_be_bytes(head) as usize);
    let reject = |stream: &mut TcpStream, code: ErrorCode, msg: String| -> Result<()> {
        let _ = write_message(stream, &Message::error(code, msg));
        let _ = stream.shutdown(Shutdown::Both);
        Ok(())
    };
    let hello = match frame {
        Ok(Frame {
            protocol: PROTOCOL_VERSION,
            message: Message::Hello(h),
        }) => h,
        Ok(Frame {
            protocol: PROTOCOL_VERSION,
            ..
        }) => return reject(&mut stream, ErrorCode::ExpectedHello, "first message must be hello".into()),
        Ok(Frame { protocol, .. }) => {
            return reject(
                &mut stream,
                ErrorCode::VersionMismatch,
                format!("server speaks protocol {PROTOCOL_VERSION}, client sent {protocol}"),
            )
        }
        Err(e) => return reject(&mut stream, ErrorCode::Malformed, e.to_string()),
    };
    let Some(session) = shared.session(&hello.session_id) else {
        return reject(
            &mut stream,
            ErrorCode::UnknownSession,
            format!("no session {:?}", hello.session_id),
        );
    };
    if hello.token != session.config.token {
        return reject(&mut stream, ErrorCode::BadToken, "token rejected".into());
    }
    let id = {
        let mut inner = session.lock();
        if inner.has_console() {
            drop(inner);
            return reject(
                &mut stream,
                ErrorCode::SessionBusy,
                format!("session {:?} already has a console", hello.session_id),
            );
        }
        let id = inner.next_console;
        inner.next_console += 1;
        let resync = inner.resync(&session.config);
        write_message(&mut stream, &resync)?;
        inner.console = Some(Console {
            id,
            stream: stream.try_clone()?,
        });
        inner.log(EventKind::ConsoleJoined);
        id
    };
    let result = console_loop(&mut stream, &session);
    let mut inner = session.lock();
    if inner.console.as_ref().is_some_and(|c| c.id == id) {
        inner.drop_console();
        session.cond.notify_all();
    }
    result
}

fn console_loop(stream: &mut TcpStream, session: &Session) -> Result<()> {
    loop {
        let message = match crate::protocol::read_message(stream) {
            Ok(m) => m,
            Err(InterventionError::Closed) => return Ok(()),
            Err(e) => {
                let mut inner = session.lock();
                inner.send(&Message::error(ErrorCode::Malformed, e.to_string()));
                return Err(e);
            }
        };
        let mut inner = session.lock();
        match message {
            Message::HumanAction(a) => on_human_action(&mut inner, session, a),
            other => inner.send(&Message::error(
                ErrorCode::Malformed,
                format!("unexpected message from console: {}", type_name(&other)),
            )),
        }
    }
}

fn on_human_action(inner: &mut Inner, session: &Session, a: HumanAction) {
    let Some(request) = inner.pending.clone() else {
        inner.send(&Message::error(
            ErrorCode::NoOutstandingRequest,
            format!("no intervention is outstanding (action for t {})", a.t),
        ));
        return;
    };
    if inner.answer.is_some() {
        return;
    }
    if a.t != request.t || a.action.dim() != session.config.bounds.dim() || a.action.0.iter().any(|v| !v.is_finite())
    {
        inner.log(EventKind::ActionRejected { t: a.t });
        let why = if a.t != request.t {
            format!("action for t {} but the request is for t {}", a.t, request.t)
        } else {
            format!("action must be {} finite numbers", session.config.bounds.dim())
        };
        inner.send(&Message::error(ErrorCode::StaleTimestep, why));
        inner.send(&Message::RequestIntervention(request));
        return;
    }
    inner.log(EventKind::ActionAccepted {
        episode: request.episode,
        t: request.t,
    });
    inner.answer = Some(Answer::Action(session.config.bounds.clip(&a.action)));
    session.cond.notify_all();
}

fn type_name(m: &Message) -> &'static str {
    match m {
        Message::Hello(_) => "hello",
        Message::RequestIntervention(_) => "request_intervention",
        Message::HumanAction(_) => "human_action",
        Message::ModeUpdate(_) => "mode_update",
        Message::Resync(_) => "resync",
        Message::Error(_) => "error",
    }
}

fn answer_http(stream: TcpStream, shared: &Shared) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    let path = request_line.split_whitespace().next().unwrap_or("");
    let (status, body) = if path == "/health" || path.starts_with("/health?") {
        ("200 OK", serde_json::to_string(&shared.health())?)
    } else {
        ("404 Not Found", r#"{"error":"not found"}"#.to_string())
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()?;
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}
