//! Live evaluation: connects to a doctor agent, plays the patient for every
//! case, and scores what the agent did.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{serve, AgentContext, BuiltinAgent};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, transcripts_to_jsonl, MetricConfig, ScoreReport, TranscriptRecord};
use crate::ontology::{cases_to_json, CaseRecord, Ontology};
use crate::protocol::{decode, encode, EndReason, Message, PROTOCOL_VERSION};
use crate::seed;
use crate::simulator::{start_session, Response};
use crate::templates::{Role, TemplatePack};

pub const DEFAULT_TURN_BUDGET: usize = 20;
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_TURN_TIMEOUT: Duration = Duration::from_secs(30);
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the doctor lives: `builtin:<name>`, `exec:<command>` or `tcp:<host:port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentSpec {
    Builtin(BuiltinAgent),
    /// Run through `sh -c`, speaking the protocol on stdin/stdout.
    Exec(String),
    Tcp(String),
}

impl FromStr for AgentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("agent spec {s:?} needs a builtin:, exec: or tcp: prefix")))?;
        if rest.trim().is_empty() {
            return Err(Error::Config(format!("agent spec {s:?} is empty after the prefix")));
        }
        match scheme {
            "builtin" => Ok(AgentSpec::Builtin(rest.parse()?)),
            "exec" => Ok(AgentSpec::Exec(rest.to_string())),
            "tcp" => Ok(AgentSpec::Tcp(rest.to_string())),
            _ => Err(Error::Config(format!("unknown agent transport {scheme:?}"))),
        }
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::Builtin(a) => write!(f, "builtin:{a}"),
            AgentSpec::Exec(cmd) => write!(f, "exec:{cmd}"),
            AgentSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentEndpoint {
    pub spec: AgentSpec,
    pub handshake_timeout: Duration,
    pub turn_timeout: Duration,
}

impl AgentEndpoint {
    pub fn new(spec: AgentSpec) -> Self {
        AgentEndpoint {
            spec,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            turn_timeout: DEFAULT_TURN_TIMEOUT,
        }
    }

    pub fn with_timeouts(mut self, handshake: Duration, turn: Duration) -> Result<Self> {
        if handshake.is_zero() || turn.is_zero() {
            return Err(Error::Config("agent timeouts must be positive".into()));
        }
        self.handshake_timeout = handshake;
        self.turn_timeout = turn;
        Ok(self)
    }
}

/// An open line-oriented channel to one agent instance.
pub struct Connection {
    incoming: Receiver<io::Result<String>>,
    peeked: Option<io::Result<String>>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    tcp: Option<TcpStream>,
    agent_thread: Option<JoinHandle<()>>,
}

fn spawn_reader<R: Read + Send + 'static>(source: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl Connection {
    /// Opens a transport. Built-in agents run on a thread behind OS pipes and
    /// need `ctx`.
    pub fn open(endpoint: &AgentEndpoint, ctx: Option<&AgentContext>) -> Result<Self> {
        match &endpoint.spec {
            AgentSpec::Builtin(kind) => {
                let ctx = ctx
                    .ok_or_else(|| Error::Config(format!("built-in agent {kind} needs an ontology and pack")))?
                    .clone();
                let kind = *kind;
                let (to_agent_r, to_agent_w) = io::pipe()?;
                let (from_agent_r, from_agent_w) = io::pipe()?;
                let agent_thread = thread::spawn(move || {
                    let mut agent = kind.build(&ctx);
                    let _ = serve(agent.as_mut(), kind.as_str(), BufReader::new(to_agent_r), from_agent_w);
                });
                Ok(Connection {
                    incoming: spawn_reader(from_agent_r),
                    peeked: None,
                    writer: Some(Box::new(to_agent_w)),
                    child: None,
                    tcp: None,
                    agent_thread: Some(agent_thread),
                })
            }
            AgentSpec::Exec(command) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(command)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Transport(format!("cannot start {command:?}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    incoming: spawn_reader(stdout),
                    peeked: None,
                    writer: Some(Box::new(stdin)),
                    child: Some(child),
                    tcp: None,
                    agent_thread: None,
                })
            }
            AgentSpec::Tcp(address) => {
                let addrs: Vec<_> = address
                    .to_socket_addrs()
                    .map_err(|e| Error::Transport(format!("cannot resolve {address}: {e}")))?
                    .collect();
                let mut last = None;
                for addr in addrs {
                    match TcpStream::connect_timeout(&addr, endpoint.handshake_timeout) {
                        Ok(stream) => {
                            let _ = stream.set_nodelay(true);
                            let read_half = stream.try_clone()?;
                            let write_half = stream.try_clone()?;
                            return Ok(Connection {
                                incoming: spawn_reader(read_half),
                                peeked: None,
                                writer: Some(Box::new(write_half)),
                                child: None,
                                tcp: Some(stream),
                                agent_thread: None,
                            });
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(Error::Transport(match last {
                    Some(e) => format!("cannot connect to {address}: {e}"),
                    None => format!("{address} resolved to no addresses"),
                }))
            }
        }
    }

    pub fn send(&mut self, message: &Message) -> Result<()> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::Transport("connection is closed".into()))?;
        let line = encode(message);
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .map_err(|e| Error::Transport(format!("cannot write to agent: {e}")))
    }

    /// Next raw line, waiting at most `timeout`.
    pub fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        let next = match self.peeked.take() {
            Some(line) => line,
            None => match self.incoming.recv_timeout(timeout) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport("agent closed the connection".into()))
                }
            },
        };
        next.map_err(|e| Error::Transport(format!("cannot read from agent: {e}")))
    }

    pub fn recv(&mut self, timeout: Duration) -> Result<Message> {
        decode(&self.recv_line(timeout)?)
    }

    /// Whether the agent has already sent something nobody asked for.
    pub fn has_surplus(&mut self) -> bool {
        if self.peeked.is_some() {
            return true;
        }
        match self.incoming.try_recv() {
            Ok(line) => {
                self.peeked = Some(line);
                true
            }
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => false,
        }
    }

    /// Sends `hello` and waits for the agent's; returns the name it gave, if any.
    pub fn handshake(&mut self, timeout: Duration) -> Result<Option<String>> {
        self.send(&Message::hello())?;
        match self.recv(timeout)? {
            Message::Hello {
                protocol_version: PROTOCOL_VERSION,
                agent,
            } => Ok(agent),
            Message::Hello { protocol_version, .. } => Err(Error::Protocol(format!(
                "agent speaks protocol version {protocol_version}, expected {PROTOCOL_VERSION}"
            ))),
            other => Err(Error::Protocol(format!("expected hello, got {}", other.type_name()))),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.writer = None;
        if let Some(stream) = self.tcp.take() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_millis(500);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
        if let Some(handle) = self.agent_thread.take() {
            let _ = handle.join();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToAgent,
    FromAgent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub direction: Direction,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
    pub message: Message,
}

/// Everything that crossed the wire in one session, plus what it amounted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub case_id: String,
    /// sha256 of the run manifest this session belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    pub end_reason: EndReason,
    pub messages: Vec<LoggedMessage>,
    pub transcript: TranscriptRecord,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Case-independent session inputs.
#[derive(Clone, Copy)]
pub struct SessionEnv<'a> {
    pub ontology: &'a Ontology,
    pub pack: &'a TemplatePack,
}

pub struct SessionOutcome {
    pub log: SessionLog,
    /// Set when the session was aborted; the connection should not be reused.
    pub failure: Option<Error>,
}

impl SessionOutcome {
    pub fn transcript(&self) -> &TranscriptRecord {
        &self.log.transcript
    }
}

struct Wire<'c> {
    conn: &'c mut Connection,
    messages: Vec<LoggedMessage>,
}

impl Wire<'_> {
    fn send(&mut self, message: Message) -> Result<()> {
        self.conn.send(&message)?;
        self.messages.push(LoggedMessage {
            direction: Direction::ToAgent,
            at_ms: now_ms(),
            message,
        });
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message> {
        let message = self.conn.recv(timeout)?;
        self.messages.push(LoggedMessage {
            direction: Direction::FromAgent,
            at_ms: now_ms(),
            message: message.clone(),
        });
        Ok(message)
    }
}

/// Plays one case against a connected, handshaken agent. Agent misbehaviour
/// ends the session with a truncated transcript and `failure` set; only
/// problems with the case itself are returned as errors.
pub fn run_session(
    conn: &mut Connection,
    case: &CaseRecord,
    env: SessionEnv<'_>,
    seed: u64,
    budget: usize,
    session_id: &str,
    turn_timeout: Duration,
) -> Result<SessionOutcome> {
    if budget == 0 {
        return Err(Error::Config("turn budget must be at least 1".into()));
    }
    let (mut session, opening) = start_session(case, env.pack, env.ontology, seed)?;
    let mut wire = Wire {
        conn,
        messages: Vec::new(),
    };

    let mut drive = || -> Result<EndReason> {
        wire.send(Message::SessionStart {
            session_id: session_id.to_string(),
        })?;
        wire.send(Message::utterance(session_id, Role::Patient, opening.text.clone()))?;
        loop {
            let text = match wire.recv(turn_timeout)? {
                Message::Utterance {
                    role: Role::Doctor,
                    text,
                    session_id: sid,
                } => {
                    if sid.as_deref().is_some_and(|s| s != session_id) {
                        return Err(Error::Protocol(format!(
                            "reply tagged for session {:?} during {session_id}",
                            sid.unwrap_or_default()
                        )));
                    }
                    text
                }
                Message::Error { reason, .. } => {
                    return Err(Error::Protocol(format!("agent reported an error: {reason}")))
                }
                other => {
                    return Err(Error::Protocol(format!(
                        "expected a doctor utterance, got {}",
                        other.type_name()
                    )))
                }
            };
            if wire.conn.has_surplus() {
                return Err(Error::Protocol("more than one reply to a patient utterance".into()));
            }
            match session.respond_text(&text)? {
                Response::Finished => return Ok(EndReason::Diagnosed),
                Response::Reply(_) if session.doctor_utterances() >= budget => return Ok(EndReason::Budget),
                Response::Reply(reply) => {
                    wire.send(Message::utterance(session_id, Role::Patient, reply.text))?
                }
            }
        }
    };

    let (end_reason, failure) = match drive() {
        Ok(reason) => (reason, None),
        Err(e @ (Error::Protocol(_) | Error::Transport(_) | Error::Timeout(_))) => (EndReason::Abort, Some(e)),
        Err(e) => return Err(e.context(format!("session {session_id}"))),
    };
    match &failure {
        Some(e) => session.truncate(Some(e.to_string())),
        None if end_reason == EndReason::Budget => session.truncate(None),
        None => {}
    }
    let _ = wire.send(Message::SessionEnd {
        session_id: session_id.to_string(),
        reason: end_reason,
    });
    Ok(SessionOutcome {
        log: SessionLog {
            session_id: session_id.to_string(),
            case_id: case.case_id.clone(),
            manifest: None,
            end_reason,
            messages: wire.messages,
            transcript: session.transcript(),
        },
        failure,
    })
}

/// Session id for the `index`-th case.
pub fn session_id(index: usize, case: &CaseRecord) -> String {
    format!("{index:05}-{}", case.case_id)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub turn_budget: usize,
    pub workers: usize,
    pub metrics: MetricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: seed::DEFAULT_SEED,
            turn_budget: DEFAULT_TURN_BUDGET,
            workers: 1,
            metrics: MetricConfig::default(),
        }
    }
}

/// Parsed inputs together with the exact documents they came from.
#[derive(Clone, Copy)]
pub struct RunInputs<'a> {
    pub ontology: &'a Ontology,
    pub ontology_source: &'a str,
    pub pack: &'a TemplatePack,
    pub pack_source: &'a str,
    pub cases: &'a [CaseRecord],
    pub cases_source: &'a str,
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSetDigest {
    pub count: usize,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub protocol_version: u32,
    pub agent: String,
    pub ontology: InputDigest,
    pub pack: InputDigest,
    pub cases: CaseSetDigest,
    pub seed: u64,
    pub turn_budget: usize,
    pub metrics: MetricConfig,
}

impl RunManifest {
    pub fn new(agent: &AgentSpec, inputs: &RunInputs<'_>, config: &RunConfig) -> Self {
        RunManifest {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            protocol_version: PROTOCOL_VERSION,
            agent: agent.to_string(),
            ontology: InputDigest {
                name: inputs.ontology.name().to_string(),
                sha256: sha256_hex(inputs.ontology_source.as_bytes()),
            },
            pack: InputDigest {
                name: inputs.pack.name().to_string(),
                sha256: sha256_hex(inputs.pack_source.as_bytes()),
            },
            cases: CaseSetDigest {
                count: inputs.cases.len(),
                sha256: sha256_hex(inputs.cases_source.as_bytes()),
            },
            seed: config.seed,
            turn_budget: config.turn_budget,
            metrics: config.metrics.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("manifest serializes");
        out.push('\n');
        out
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

#[derive(Debug)]
pub struct BenchmarkRun {
    pub manifest: RunManifest,
    pub transcripts: Vec<TranscriptRecord>,
    pub sessions: Vec<SessionLog>,
    pub report: ScoreReport,
}

fn connect(endpoint: &AgentEndpoint, ctx: &AgentContext) -> Result<Connection> {
    let mut conn = Connection::open(endpoint, Some(ctx))?;
    conn.handshake(endpoint.handshake_timeout)?;
    Ok(conn)
}

fn aborted(case: &CaseRecord, session_id: String, error: Error) -> SessionOutcome {
    SessionOutcome {
        log: SessionLog {
            session_id,
            case_id: case.case_id.clone(),
            manifest: None,
            end_reason: EndReason::Abort,
            messages: Vec::new(),
            transcript: TranscriptRecord {
                case_id: case.case_id.clone(),
                asked_symptoms: Vec::new(),
                predicted_disease: None,
                n_pred: 0,
                n_gold: case.implicit_symptoms.len(),
                gold_disease: case.disease.clone(),
                truncated: true,
                doctor_utterances: 0,
                unparseable: 0,
                abort_reason: Some(error.to_string()),
            },
        },
        failure: Some(error),
    }
}

/// Runs every case and scores the result. Case `i` is played with a seed
/// derived from `(config.seed, i)`, so results do not depend on `workers`.
/// Failing to reach the agent at all is an error; later per-session failures
/// are recorded as aborted, truncated sessions.
pub fn run_benchmark(endpoint: &AgentEndpoint, inputs: RunInputs<'_>, config: &RunConfig) -> Result<BenchmarkRun> {
    config.metrics.validate()?;
    if config.turn_budget == 0 {
        return Err(Error::Config("turn budget must be at least 1".into()));
    }
    if inputs.cases.is_empty() {
        return Err(Error::Config("no cases to evaluate".into()));
    }
    let manifest = RunManifest::new(&endpoint.spec, &inputs, config);
    let manifest_digest = manifest.digest();
    let ctx = AgentContext {
        ontology: Arc::new(inputs.ontology.clone()),
        pack: Arc::new(inputs.pack.clone()),
        seed: config.seed,
    };
    let first = connect(endpoint, &ctx).map_err(|e| e.context(format!("agent {}", endpoint.spec)))?;
    let env = SessionEnv {
        ontology: inputs.ontology,
        pack: inputs.pack,
    };
    let workers = config.workers.clamp(1, inputs.cases.len());
    let next = AtomicUsize::new(0);
    let mut first = Some(first);

    let results: Vec<Vec<(usize, Result<SessionOutcome>)>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let mut conn = first.take();
                let (next, ctx) = (&next, &ctx);
                scope.spawn(move || {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(case) = inputs.cases.get(i) else { break };
                        let sid = session_id(i, case);
                        let c = match conn.take() {
                            Some(c) => Ok(c),
                            None => connect(endpoint, ctx),
                        };
                        let outcome = match c {
                            Err(e) => Ok(aborted(case, sid, e)),
                            Ok(mut c) => {
                                let seed = seed::derive(config.seed, i as u64);
                                let r = run_session(&mut c, case, env, seed, config.turn_budget, &sid, endpoint.turn_timeout);
                                if matches!(&r, Ok(o) if o.failure.is_none()) {
                                    conn = Some(c);
                                }
                                r
                            }
                        };
                        done.push((i, outcome));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut slots: Vec<Option<SessionOutcome>> = (0..inputs.cases.len()).map(|_| None).collect();
    for (i, outcome) in results.into_iter().flatten() {
        slots[i] = Some(outcome?);
    }
    let mut sessions = Vec::with_capacity(slots.len());
    for slot in slots {
        let mut log = slot.expect("every case ran").log;
        log.manifest = Some(manifest_digest.clone());
        sessions.push(log);
    }
    let transcripts: Vec<TranscriptRecord> = sessions.iter().map(|s| s.transcript.clone()).collect();
    let report = aggregate(&transcripts, inputs.cases, inputs.ontology, &config.metrics)?;
    Ok(BenchmarkRun {
        manifest,
        transcripts,
        sessions,
        report,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const CASES_FILE: &str = "cases.json";

impl BenchmarkRun {
    /// Writes the run into `dir`. Everything but the session log, which
    /// carries wall-clock timestamps, is a pure function of the manifest
    /// inputs for a deterministic agent.
    pub fn write_to(&self, dir: &Path, cases: &[CaseRecord], ontology: &Ontology) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: &str, body: &str| {
            fs::write(dir.join(name), body).map_err(|e| Error::from(e).context(dir.join(name).display().to_string()))
        };
        write(MANIFEST_FILE, &self.manifest.to_json())?;
        write(CASES_FILE, &cases_to_json(cases))?;
        write(TRANSCRIPTS_FILE, &transcripts_to_jsonl(&self.transcripts))?;
        let mut sessions = String::new();
        for s in &self.sessions {
            sessions.push_str(&serde_json::to_string(s).expect("session log serializes"));
            sessions.push('\n');
        }
        write(SESSIONS_FILE, &sessions)?;
        write(REPORT_JSON_FILE, &self.report.to_json())?;
        write(REPORT_TEXT_FILE, &self.report.to_text(Some(ontology)))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub agent: String,
    pub probes: Vec<ProbeResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.probes.iter().all(|p| p.passed)
    }

    pub fn probe(&self, name: &str) -> Option<&ProbeResult> {
        self.probes.iter().find(|p| p.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("conformance of {}\n", self.agent);
        for p in &self.probes {
            let mark = if p.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{mark} {:<12} {}\n", p.name, p.detail));
        }
        out
    }
}

pub const PROBE_HANDSHAKE: &str = "handshake";
pub const PROBE_FRAMING: &str = "framing";
pub const PROBE_ONE_REPLY: &str = "one_reply";
pub const PROBE_SESSION_END: &str = "session_end";

/// Patient lines sent during the probe session.
const PROBE_LINES: [&str; 3] = [
    "Hi Doctor, I have been feeling Fever and Cough",
    "No, I don't have that.",
    "Yes, sometimes.",
];

#[derive(Default)]
struct ProbeState {
    framing: Option<String>,
    one_reply: Option<String>,
    session_end: Option<String>,
}

impl ProbeState {
    fn note(slot: &mut Option<String>, detail: impl Into<String>) {
        if slot.is_none() {
            *slot = Some(detail.into());
        }
    }

    /// Waits for the reply to one patient utterance, then for `grace` to catch extras.
    /// Returns false when the connection is no longer usable.
    fn exchange(&mut self, conn: &mut Connection, sid: &str, text: &str, turn: Duration, grace: Duration) -> bool {
        if let Err(e) = conn.send(&Message::utterance(sid, Role::Patient, text)) {
            Self::note(&mut self.one_reply, e.to_string());
            return false;
        }
        match conn.recv(turn) {
            Ok(Message::Utterance { role: Role::Doctor, .. }) => {}
            Ok(other) => Self::note(&mut self.one_reply, format!("answered with {} instead of a doctor utterance", other.type_name())),
            Err(e @ Error::Protocol(_)) => {
                Self::note(&mut self.framing, e.to_string());
                return false;
            }
            Err(e) => {
                Self::note(&mut self.one_reply, format!("no reply: {e}"));
                return false;
            }
        }
        thread::sleep(grace);
        if conn.has_surplus() {
            Self::note(&mut self.one_reply, "sent more than one reply to a patient utterance");
            if let Err(e @ Error::Protocol(_)) = conn.recv(turn) {
                Self::note(&mut self.framing, e.to_string());
            }
            return false;
        }
        true
    }
}

/// Drives a scripted session against the agent and reports each protocol rule.
/// Only an unreachable agent is an error.
pub fn check_conformance(
    endpoint: &AgentEndpoint,
    ctx: Option<&AgentContext>,
    grace: Duration,
) -> Result<ConformanceReport> {
    let mut conn = Connection::open(endpoint, ctx)?;
    let mut probes = Vec::new();
    let mut state = ProbeState::default();
    let agent = endpoint.spec.to_string();

    let reply = conn
        .send(&Message::hello())
        .and_then(|_| conn.recv(endpoint.handshake_timeout));
    let handshake = match reply {
        Ok(Message::Hello {
            protocol_version: PROTOCOL_VERSION,
            agent,
        }) => Ok(agent.map_or_else(|| "hello exchanged".to_string(), |n| format!("hello from {n}"))),
        Ok(Message::Hello { protocol_version, .. }) => Err(format!("agent speaks protocol version {protocol_version}")),
        Ok(other) => Err(format!("expected hello, got {}", other.type_name())),
        // recv only reports protocol errors for lines that are not records
        Err(e @ Error::Protocol(_)) => {
            state.framing = Some(e.to_string());
            Err(e.to_string())
        }
        Err(e) => Err(e.to_string()),
    };
    let handshake_ok = handshake.is_ok();
    probes.push(ProbeResult {
        name: PROBE_HANDSHAKE.into(),
        passed: handshake_ok,
        detail: handshake.unwrap_or_else(|e| e),
    });

    let mut usable = handshake_ok;
    if usable {
        let _ = conn.send(&Message::SessionStart {
            session_id: "probe-1".into(),
        });
        for line in PROBE_LINES {
            if !state.exchange(&mut conn, "probe-1", line, endpoint.turn_timeout, grace) {
                usable = false;
                break;
            }
        }
    }
    if usable {
        let _ = conn.send(&Message::SessionEnd {
            session_id: "probe-1".into(),
            reason: EndReason::Budget,
        });
        thread::sleep(grace);
        if conn.has_surplus() {
            ProbeState::note(&mut state.session_end, "sent output after session_end");
            usable = false;
        } else if conn
            .send(&Message::SessionStart {
                session_id: "probe-2".into(),
            })
            .is_err()
        {
            ProbeState::note(&mut state.session_end, "connection closed after session_end");
            usable = false;
        } else if !state.exchange(&mut conn, "probe-2", PROBE_LINES[0], endpoint.turn_timeout, grace) {
            ProbeState::note(&mut state.session_end, "did not serve a second session");
            usable = false;
        }
    }
    if usable {
        let _ = conn.send(&Message::SessionEnd {
            session_id: "probe-2".into(),
            reason: EndReason::Abort,
        });
    }

    let skipped = |slot: Option<String>, ok: &str| match slot {
        Some(detail) => (false, detail),
        None if handshake_ok => (true, ok.to_string()),
        None => (false, "not run: handshake failed".to_string()),
    };
    let (passed, detail) = match state.framing {
        Some(d) => (false, d),
        None => (handshake_ok, if handshake_ok { "every line was a record".into() } else { "not run: handshake failed".into() }),
    };
    probes.push(ProbeResult {
        name: PROBE_FRAMING.into(),
        passed,
        detail,
    });
    let (passed, detail) = skipped(state.one_reply, "one reply per patient utterance");
    probes.push(ProbeResult {
        name: PROBE_ONE_REPLY.into(),
        passed,
        detail,
    });
    let session_end = if state.session_end.is_none() && !usable && handshake_ok {
        Some("not run: earlier probe failed".to_string())
    } else {
        state.session_end
    };
    let (passed, detail) = skipped(session_end, "quiet after session_end and ready for the next session");
    probes.push(ProbeResult {
        name: PROBE_SESSION_END.into(),
        passed,
        detail,
    });
    Ok(ConformanceReport { agent, probes })
}
