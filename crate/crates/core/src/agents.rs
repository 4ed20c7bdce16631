//! Built-in doctor agents and the agent side of the wire protocol.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dialogue::{render_diagnosis, render_inquiry};
use crate::error::{Error, Result};
use crate::ontology::{DiseaseId, Ontology, SymptomId};
use crate::protocol::{decode, encode, single_line, Message, PROTOCOL_VERSION};
use crate::seed::{self, SeededRng};
use crate::templates::{Role, StageCategory, TemplatePack};
use crate::text::{name_key, tokens};

/// A doctor: sees patient text, answers with doctor text.
pub trait DoctorAgent: Send {
    /// Forget everything about the previous session.
    fn begin_session(&mut self, session_id: &str);
    fn reply(&mut self, patient_text: &str) -> Result<String>;
}

/// Line the echo agent sends on every turn. Names no symptom or disease.
pub const ECHO_LINE: &str = "Could you tell me a little more about that?";

pub const DEFAULT_ORACLE_CAP: usize = 15;
pub const DEFAULT_P_DIAG: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinAgent {
    Oracle,
    Random,
    Echo,
}

impl BuiltinAgent {
    pub const ALL: [BuiltinAgent; 3] = [BuiltinAgent::Oracle, BuiltinAgent::Random, BuiltinAgent::Echo];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinAgent::Oracle => "oracle",
            BuiltinAgent::Random => "random",
            BuiltinAgent::Echo => "echo",
        }
    }

    pub fn build(self, ctx: &AgentContext) -> Box<dyn DoctorAgent> {
        match self {
            BuiltinAgent::Oracle => Box::new(OracleAgent::new(ctx.clone(), DEFAULT_ORACLE_CAP)),
            BuiltinAgent::Random => Box::new(RandomAgent::new(ctx.clone(), DEFAULT_P_DIAG)),
            BuiltinAgent::Echo => Box::new(EchoAgent),
        }
    }
}

impl fmt::Display for BuiltinAgent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinAgent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinAgent::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown built-in agent {s:?} (expected oracle, random or echo)")))
    }
}

/// What a built-in agent knows about the world.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub ontology: Arc<Ontology>,
    pub pack: Arc<TemplatePack>,
    pub seed: u64,
}

impl AgentContext {
    fn session_rng(&self, session_id: &str) -> SeededRng {
        seed::rng(seed::derive_keyed(self.seed, session_id))
    }
}

pub struct EchoAgent;

impl DoctorAgent for EchoAgent {
    fn begin_session(&mut self, _session_id: &str) {}

    fn reply(&mut self, _patient_text: &str) -> Result<String> {
        Ok(ECHO_LINE.to_string())
    }
}

/// Reads a patient answer as yes or no. Known template sentences are matched
/// exactly; anything else is negative when it contains a denial word.
#[derive(Debug, Clone)]
pub struct AnswerClassifier {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

const DENIALS: [&str; 7] = ["no", "not", "never", "don", "dont", "haven", "nothing"];

impl AnswerClassifier {
    pub fn new(pack: &TemplatePack) -> Self {
        let keys = |cat| pack.templates(cat).iter().map(|t| name_key(t.text())).collect();
        AnswerClassifier {
            positive: keys(StageCategory::IPSP),
            negative: keys(StageCategory::INSP),
        }
    }

    pub fn is_positive(&self, text: &str) -> bool {
        let key = name_key(text);
        if self.positive.contains(&key) {
            return true;
        }
        if self.negative.contains(&key) {
            return false;
        }
        !tokens(text).iter().any(|t| DENIALS.contains(&t.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleState {
    pub known_positive: BTreeSet<SymptomId>,
    pub known_negative: BTreeSet<SymptomId>,
    pub asked: BTreeSet<SymptomId>,
    pub candidate_scores: BTreeMap<DiseaseId, i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleAction {
    Ask(SymptomId),
    Diagnose(DiseaseId),
}

impl OracleState {
    pub fn rescore(&mut self, ontology: &Ontology) {
        self.candidate_scores = ontology
            .disease_symptoms()
            .iter()
            .map(|(d, set)| {
                let pos = set.intersection(&self.known_positive).count() as i64;
                let neg = set.intersection(&self.known_negative).count() as i64;
                (d.clone(), pos - neg)
            })
            .collect();
    }

    /// Top-scoring diseases in id order.
    pub fn leaders(&self) -> Vec<&DiseaseId> {
        let Some(best) = self.candidate_scores.values().max() else {
            return Vec::new();
        };
        self.candidate_scores
            .iter()
            .filter(|(_, s)| *s == best)
            .map(|(d, _)| d)
            .collect()
    }

    fn is_open(&self, s: &SymptomId) -> bool {
        !self.asked.contains(s) && !self.known_positive.contains(s) && !self.known_negative.contains(s)
    }
}

/// Next move of the greedy oracle: diagnose once one disease leads or `questions`
/// reaches `cap`; otherwise ask the open symptom that splits the leaders while
/// covering as many of them as possible.
pub fn oracle_step(state: &OracleState, ontology: &Ontology, questions: usize, cap: usize) -> OracleAction {
    let leaders = state.leaders();
    let leader = leaders[0].clone();
    if leaders.len() == 1 || questions >= cap {
        return OracleAction::Diagnose(leader);
    }
    let coverage = |s: &SymptomId| {
        leaders
            .iter()
            .filter(|d| ontology.symptoms_of(d).is_some_and(|set| set.contains(s)))
            .count()
    };
    let pool: BTreeSet<&SymptomId> = leaders
        .iter()
        .filter_map(|d| ontology.symptoms_of(d))
        .flatten()
        .filter(|s| state.is_open(s))
        .collect();
    let mut best: Option<(&SymptomId, usize)> = None;
    for s in pool {
        let c = coverage(s);
        if c > 0 && c < leaders.len() && best.is_none_or(|(_, b)| c > b) {
            best = Some((s, c));
        }
    }
    if let Some((s, _)) = best {
        return OracleAction::Ask(s.clone());
    }
    let fallback = ontology
        .symptoms_of(&leader)
        .into_iter()
        .flatten()
        .filter(|s| state.is_open(s))
        .fold(None::<(&SymptomId, usize)>, |acc, s| {
            let c = coverage(s);
            match acc {
                Some((_, b)) if b >= c => acc,
                _ => Some((s, c)),
            }
        });
    match fallback {
        Some((s, _)) => OracleAction::Ask(s.clone()),
        None => OracleAction::Diagnose(leader),
    }
}

/// Ontology-aware greedy doctor.
pub struct OracleAgent {
    ctx: AgentContext,
    cap: usize,
    classifier: AnswerClassifier,
    state: OracleState,
    pending: Option<SymptomId>,
    questions: usize,
    rng: SeededRng,
}

impl OracleAgent {
    pub fn new(ctx: AgentContext, cap: usize) -> Self {
        let classifier = AnswerClassifier::new(&ctx.pack);
        let rng = ctx.session_rng("");
        OracleAgent {
            ctx,
            cap,
            classifier,
            state: OracleState::default(),
            pending: None,
            questions: 0,
            rng,
        }
    }

    pub fn state(&self) -> &OracleState {
        &self.state
    }
}

impl DoctorAgent for OracleAgent {
    fn begin_session(&mut self, session_id: &str) {
        self.state = OracleState::default();
        self.pending = None;
        self.questions = 0;
        self.rng = self.ctx.session_rng(session_id);
    }

    fn reply(&mut self, patient_text: &str) -> Result<String> {
        let ontology = &self.ctx.ontology;
        match self.pending.take() {
            Some(s) if self.classifier.is_positive(patient_text) => {
                self.state.known_positive.insert(s);
            }
            Some(s) => {
                self.state.known_negative.insert(s);
            }
            None => {
                for s in ontology.scan_symptoms(patient_text) {
                    self.state.known_positive.insert(s);
                }
            }
        }
        self.state.rescore(ontology);
        match oracle_step(&self.state, ontology, self.questions, self.cap) {
            OracleAction::Ask(s) => {
                let u = render_inquiry(&s, &self.ctx.pack, ontology, &mut self.rng)?;
                self.state.asked.insert(s.clone());
                self.pending = Some(s);
                self.questions += 1;
                Ok(u.text)
            }
            OracleAction::Diagnose(d) => Ok(render_diagnosis(&d, &self.ctx.pack, ontology, &mut self.rng)?.text),
        }
    }
}

/// Asks random symptoms and stops at a random moment with a random diagnosis.
pub struct RandomAgent {
    ctx: AgentContext,
    p_diag: f64,
    asked: BTreeSet<SymptomId>,
    rng: SeededRng,
}

impl RandomAgent {
    pub fn new(ctx: AgentContext, p_diag: f64) -> Self {
        let rng = ctx.session_rng("");
        RandomAgent {
            ctx,
            p_diag,
            asked: BTreeSet::new(),
            rng,
        }
    }
}

impl DoctorAgent for RandomAgent {
    fn begin_session(&mut self, session_id: &str) {
        self.asked.clear();
        self.rng = self.ctx.session_rng(session_id);
    }

    fn reply(&mut self, _patient_text: &str) -> Result<String> {
        let ontology = &self.ctx.ontology;
        let open: Vec<&SymptomId> = ontology
            .symptoms()
            .iter()
            .map(|s| &s.id)
            .filter(|s| !self.asked.contains(*s))
            .collect();
        if open.is_empty() || self.rng.gen_bool(self.p_diag) {
            let d = &ontology
                .diseases()
                .choose(&mut self.rng)
                .expect("ontology has diseases")
                .id;
            return Ok(render_diagnosis(d, &self.ctx.pack, ontology, &mut self.rng)?.text);
        }
        let s = (*open.choose(&mut self.rng).expect("non-empty")).clone();
        let text = render_inquiry(&s, &self.ctx.pack, ontology, &mut self.rng)?.text;
        self.asked.insert(s);
        Ok(text)
    }
}

fn send<W: Write>(writer: &mut W, message: &Message) -> Result<()> {
    writeln!(writer, "{}", encode(message))?;
    writer.flush()?;
    Ok(())
}

/// Runs the agent side of the protocol until the harness closes the stream.
/// A malformed record gets an `error` reply and ends the loop with an error.
pub fn serve<R: BufRead, W: Write>(agent: &mut dyn DoctorAgent, name: &str, reader: R, mut writer: W) -> Result<()> {
    let mut current: Option<String> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let message = match decode(&line) {
            Ok(m) => m,
            Err(e) => {
                send(
                    &mut writer,
                    &Message::Error {
                        session_id: current.clone(),
                        reason: e.to_string(),
                    },
                )?;
                return Err(e);
            }
        };
        match message {
            Message::Hello { protocol_version, .. } => {
                if protocol_version != PROTOCOL_VERSION {
                    let reason = format!("unsupported protocol version {protocol_version}");
                    send(&mut writer, &Message::Error { session_id: None, reason: reason.clone() })?;
                    return Err(Error::Protocol(reason));
                }
                send(
                    &mut writer,
                    &Message::Hello {
                        protocol_version: PROTOCOL_VERSION,
                        agent: Some(name.to_string()),
                    },
                )?;
            }
            Message::SessionStart { session_id } => {
                agent.begin_session(&session_id);
                current = Some(session_id);
            }
            Message::Utterance {
                session_id,
                role: Role::Patient,
                text,
            } => {
                let session_id = session_id.or_else(|| current.clone());
                let reply = match agent.reply(&text) {
                    Ok(text) => Message::Utterance {
                        session_id,
                        role: Role::Doctor,
                        text: single_line(&text),
                    },
                    Err(e) => Message::Error {
                        session_id,
                        reason: e.to_string(),
                    },
                };
                send(&mut writer, &reply)?;
            }
            Message::Utterance { role: Role::Doctor, .. } => {
                let reason = "agents do not accept doctor utterances".to_string();
                send(&mut writer, &Message::Error { session_id: current.clone(), reason: reason.clone() })?;
                return Err(Error::Protocol(reason));
            }
            Message::SessionEnd { .. } | Message::Error { .. } => current = None,
        }
    }
    Ok(())
}

/// Serves every accepted TCP connection on its own thread with a fresh agent.
/// Returns after `max_connections` connections when given, otherwise never.
pub fn listen(
    listener: TcpListener,
    kind: BuiltinAgent,
    ctx: AgentContext,
    max_connections: Option<usize>,
) -> Result<()> {
    let mut handles = Vec::new();
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let ctx = ctx.clone();
        handles.push(thread::spawn(move || {
            let mut agent = kind.build(&ctx);
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve(agent.as_mut(), kind.as_str(), reader, stream);
        }));
        if max_connections.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}
