//! The patient side of a live session.

use serde::{Deserialize, Serialize};

use crate::dialogue::{render_answer, render_complaint, Utterance};
use crate::error::{Error, Result};
use crate::metrics::TranscriptRecord;
use crate::ontology::{CaseRecord, DiseaseId, Ontology, SymptomId};
use crate::seed::{self, SeededRng};
use crate::templates::{Role, TemplatePack};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActKind {
    /// One or more symptoms, in the order they appear in the text.
    Inquiry(Vec<SymptomId>),
    Diagnosis(DiseaseId),
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoctorAct {
    pub kind: ActKind,
    pub raw_text: String,
}

/// Classifies a doctor utterance. Any disease mention makes it a diagnosis;
/// otherwise symptom mentions make it an inquiry.
pub fn parse_doctor(text: &str, ontology: &Ontology) -> DoctorAct {
    let kind = if let Some(d) = ontology.scan_diseases(text).into_iter().next() {
        ActKind::Diagnosis(d)
    } else {
        let symptoms = ontology.scan_symptoms(text);
        if symptoms.is_empty() {
            ActKind::Unparseable
        } else {
            ActKind::Inquiry(symptoms)
        }
    };
    DoctorAct {
        kind,
        raw_text: text.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingDoctor,
    Finished,
}

/// A line of the live conversation as exchanged, without annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Reply(Utterance),
    /// The doctor diagnosed; the session is over.
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskedEntry {
    pub symptom: SymptomId,
    pub present: bool,
}

pub struct SimulatorSession<'a> {
    case: CaseRecord,
    ontology: &'a Ontology,
    pack: &'a TemplatePack,
    rng: SeededRng,
    state: SessionState,
    asked_log: Vec<AskedEntry>,
    predicted_disease: Option<DiseaseId>,
    inquiries: usize,
    unparseable_count: usize,
    doctor_utterances: usize,
    turns: Vec<Turn>,
    abort_reason: Option<String>,
}

/// Opens a session; the returned utterance is the patient's complaint.
pub fn start_session<'a>(
    case: &CaseRecord,
    pack: &'a TemplatePack,
    ontology: &'a Ontology,
    seed: u64,
) -> Result<(SimulatorSession<'a>, Utterance)> {
    case.validate(ontology)?;
    let mut rng = seed::rng(seed);
    let opening = render_complaint(&case.explicit_symptoms, pack, ontology, &mut rng)?;
    let session = SimulatorSession {
        case: case.clone(),
        ontology,
        pack,
        rng,
        state: SessionState::AwaitingDoctor,
        asked_log: Vec::new(),
        predicted_disease: None,
        inquiries: 0,
        unparseable_count: 0,
        doctor_utterances: 0,
        turns: vec![Turn {
            role: Role::Patient,
            text: opening.text.clone(),
        }],
        abort_reason: None,
    };
    Ok((session, opening))
}

impl<'a> SimulatorSession<'a> {
    pub fn case(&self) -> &CaseRecord {
        &self.case
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn asked_log(&self) -> &[AskedEntry] {
        &self.asked_log
    }

    pub fn predicted_disease(&self) -> Option<&DiseaseId> {
        self.predicted_disease.as_ref()
    }

    pub fn unparseable_count(&self) -> usize {
        self.unparseable_count
    }

    /// Doctor utterances received so far.
    pub fn doctor_utterances(&self) -> usize {
        self.doctor_utterances
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Answers from the case record: explicit symptoms are present, implicit
    /// ones carry their recorded polarity, anything else is absent.
    pub fn answer_for(&self, symptom: &SymptomId) -> bool {
        self.case.polarity(symptom).unwrap_or(false)
    }

    pub fn respond(&mut self, act: &DoctorAct) -> Result<Response> {
        if self.state == SessionState::Finished {
            return Err(Error::State(format!("session for case {} is finished", self.case.case_id)));
        }
        self.doctor_utterances += 1;
        self.turns.push(Turn {
            role: Role::Doctor,
            text: act.raw_text.clone(),
        });
        let present = match &act.kind {
            ActKind::Diagnosis(d) => {
                self.predicted_disease = Some(d.clone());
                self.state = SessionState::Finished;
                return Ok(Response::Finished);
            }
            ActKind::Inquiry(symptoms) => {
                self.inquiries += 1;
                for s in symptoms {
                    let present = self.answer_for(s);
                    self.asked_log.push(AskedEntry {
                        symptom: s.clone(),
                        present,
                    });
                }
                self.answer_for(&symptoms[0])
            }
            ActKind::Unparseable => {
                self.inquiries += 1;
                self.unparseable_count += 1;
                false
            }
        };
        let reply = render_answer(present, self.pack, &mut self.rng)?;
        self.turns.push(Turn {
            role: Role::Patient,
            text: reply.text.clone(),
        });
        Ok(Response::Reply(reply))
    }

    /// Parses `text` against the session's ontology and responds to it.
    pub fn respond_text(&mut self, text: &str) -> Result<Response> {
        let act = parse_doctor(text, self.ontology);
        self.respond(&act)
    }

    /// Ends the session without a diagnosis, e.g. when the turn budget runs out.
    pub fn truncate(&mut self, reason: Option<String>) {
        if self.state == SessionState::AwaitingDoctor {
            self.state = SessionState::Finished;
            self.abort_reason = reason;
        }
    }

    pub fn transcript(&self) -> TranscriptRecord {
        TranscriptRecord {
            case_id: self.case.case_id.clone(),
            asked_symptoms: self.asked_log.iter().map(|e| e.symptom.clone()).collect(),
            predicted_disease: self.predicted_disease.clone(),
            n_pred: self.inquiries,
            n_gold: self.case.implicit_symptoms.len(),
            gold_disease: self.case.disease.clone(),
            truncated: self.predicted_disease.is_none(),
            doctor_utterances: self.doctor_utterances,
            unparseable: self.unparseable_count,
            abort_reason: self.abort_reason.clone(),
        }
    }
}
