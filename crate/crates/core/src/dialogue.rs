//! Turns cases into multi-turn dialogues and summarizes generated datasets.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{json_error, Error, Result};
use crate::ontology::{CaseRecord, DiseaseId, Ontology, SymptomId};
use crate::seed;
use crate::templates::{choose, complaint_arity, Role, StageCategory, TemplatePack};
use crate::text::{capitalize_first, word_count};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub stage: StageCategory,
    pub text: String,
    #[serde(rename = "symptoms", default, skip_serializing_if = "Vec::is_empty")]
    pub mentioned_symptoms: Vec<SymptomId>,
    #[serde(rename = "disease", default, skip_serializing_if = "Option::is_none")]
    pub mentioned_disease: Option<DiseaseId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub case_id: String,
    pub utterances: Vec<Utterance>,
    pub gold: CaseRecord,
}

impl Dialogue {
    /// Patient/doctor rounds: the opening pair plus one per inquiry.
    pub fn rounds(&self) -> usize {
        self.utterances.len().div_ceil(2)
    }
}

fn symptom_label(ontology: &Ontology, id: &SymptomId) -> Result<String> {
    ontology
        .symptom(id)
        .map(|s| capitalize_first(&s.canonical_name))
        .ok_or_else(|| Error::Integrity(format!("unknown symptom {id}")))
}

fn disease_label(ontology: &Ontology, id: &DiseaseId) -> Result<String> {
    ontology
        .disease(id)
        .map(|d| capitalize_first(&d.canonical_name))
        .ok_or_else(|| Error::Integrity(format!("unknown disease {id}")))
}

/// Patient opening naming every symptom in `symptoms`.
pub fn render_complaint<R: Rng + ?Sized>(
    symptoms: &[SymptomId],
    pack: &TemplatePack,
    ontology: &Ontology,
    rng: &mut R,
) -> Result<Utterance> {
    let labels = symptoms
        .iter()
        .map(|s| symptom_label(ontology, s))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&str> = labels.iter().map(String::as_str).collect();
    let choice = choose(pack, StageCategory::BSP, Some(complaint_arity(names.len())), rng)?;
    Ok(Utterance {
        role: Role::Patient,
        stage: StageCategory::BSP,
        text: choice.template.render_symptoms(&names)?,
        mentioned_symptoms: symptoms.to_vec(),
        mentioned_disease: None,
    })
}

/// Doctor question about one symptom.
pub fn render_inquiry<R: Rng + ?Sized>(
    symptom: &SymptomId,
    pack: &TemplatePack,
    ontology: &Ontology,
    rng: &mut R,
) -> Result<Utterance> {
    let label = symptom_label(ontology, symptom)?;
    let choice = choose(pack, StageCategory::IIQD, None, rng)?;
    Ok(Utterance {
        role: Role::Doctor,
        stage: StageCategory::IIQD,
        text: choice.template.render(&BTreeMap::from([("symptom", label.as_str())]))?,
        mentioned_symptoms: vec![symptom.clone()],
        mentioned_disease: None,
    })
}

/// Patient confirmation or denial.
pub fn render_answer<R: Rng + ?Sized>(
    present: bool,
    pack: &TemplatePack,
    rng: &mut R,
) -> Result<Utterance> {
    let stage = if present {
        StageCategory::IPSP
    } else {
        StageCategory::INSP
    };
    let choice = choose(pack, stage, None, rng)?;
    Ok(Utterance {
        role: Role::Patient,
        stage,
        text: choice.template.render(&BTreeMap::new())?,
        mentioned_symptoms: Vec::new(),
        mentioned_disease: None,
    })
}

/// Doctor's closing diagnosis.
pub fn render_diagnosis<R: Rng + ?Sized>(
    disease: &DiseaseId,
    pack: &TemplatePack,
    ontology: &Ontology,
    rng: &mut R,
) -> Result<Utterance> {
    let label = disease_label(ontology, disease)?;
    let choice = choose(pack, StageCategory::LDSD, None, rng)?;
    Ok(Utterance {
        role: Role::Doctor,
        stage: StageCategory::LDSD,
        text: choice.template.render(&BTreeMap::from([("disease", label.as_str())]))?,
        mentioned_symptoms: Vec::new(),
        mentioned_disease: Some(disease.clone()),
    })
}

/// Renders one case: opening complaint, one inquiry/answer pair per implicit
/// symptom in case order, then the diagnosis.
pub fn generate_dialogue(
    case: &CaseRecord,
    pack: &TemplatePack,
    ontology: &Ontology,
    seed: u64,
) -> Result<Dialogue> {
    case.validate(ontology)?;
    let mut rng = seed::rng(seed);
    let mut utterances = Vec::with_capacity(2 + 2 * case.implicit_symptoms.len());
    utterances.push(render_complaint(&case.explicit_symptoms, pack, ontology, &mut rng)?);
    for implicit in &case.implicit_symptoms {
        utterances.push(render_inquiry(&implicit.symptom, pack, ontology, &mut rng)?);
        utterances.push(render_answer(implicit.present, pack, &mut rng)?);
    }
    utterances.push(render_diagnosis(&case.disease, pack, ontology, &mut rng)?);
    Ok(Dialogue {
        case_id: case.case_id.clone(),
        utterances,
        gold: case.clone(),
    })
}

/// One dialogue per case, in order; case `i` is rendered with a seed derived from `(seed, i)`.
pub fn generate_dataset(
    cases: &[CaseRecord],
    pack: &TemplatePack,
    ontology: &Ontology,
    seed: u64,
) -> Result<Vec<Dialogue>> {
    cases
        .iter()
        .enumerate()
        .map(|(i, case)| {
            generate_dialogue(case, pack, ontology, seed::derive(seed, i as u64))
                .map_err(|e| e.context(format!("case {}", case.case_id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_dialogues: usize,
    pub avg_rounds: f64,
    pub max_rounds: usize,
    pub min_rounds: usize,
    pub avg_utterances: f64,
    pub max_utterances: usize,
    pub min_utterances: usize,
    pub avg_words_per_dialogue: f64,
    pub avg_words_per_patient_utterance: f64,
    pub avg_words_per_doctor_utterance: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Corpus statistics. A round is one patient utterance and the doctor reply to it.
pub fn compute_stats(dialogues: &[Dialogue]) -> DatasetStats {
    let rounds: Vec<usize> = dialogues.iter().map(Dialogue::rounds).collect();
    let lengths: Vec<usize> = dialogues.iter().map(|d| d.utterances.len()).collect();
    let (mut words, mut patient_words, mut patient_utts, mut doctor_words, mut doctor_utts) =
        (0, 0, 0, 0, 0);
    for u in dialogues.iter().flat_map(|d| &d.utterances) {
        let n = word_count(&u.text);
        words += n;
        match u.role {
            Role::Patient => {
                patient_words += n;
                patient_utts += 1;
            }
            Role::Doctor => {
                doctor_words += n;
                doctor_utts += 1;
            }
        }
    }
    let n = dialogues.len();
    DatasetStats {
        total_dialogues: n,
        avg_rounds: ratio(rounds.iter().sum(), n),
        max_rounds: rounds.iter().copied().max().unwrap_or(0),
        min_rounds: rounds.iter().copied().min().unwrap_or(0),
        avg_utterances: ratio(lengths.iter().sum(), n),
        max_utterances: lengths.iter().copied().max().unwrap_or(0),
        min_utterances: lengths.iter().copied().min().unwrap_or(0),
        avg_words_per_dialogue: ratio(words, n),
        avg_words_per_patient_utterance: ratio(patient_words, patient_utts),
        avg_words_per_doctor_utterance: ratio(doctor_words, doctor_utts),
    }
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let rows: [(&str, String); 10] = [
            ("Total dialogues", self.total_dialogues.to_string()),
            ("Avg. rounds per dialogue", format!("{:.1}", self.avg_rounds)),
            ("Max. rounds in a dialogue", self.max_rounds.to_string()),
            ("Min. rounds in a dialogue", self.min_rounds.to_string()),
            ("Avg. utterances per dialogue", format!("{:.1}", self.avg_utterances)),
            ("Max. utterances in a dialogue", self.max_utterances.to_string()),
            ("Min. utterances in a dialogue", self.min_utterances.to_string()),
            ("Avg. words per dialogue", format!("{:.1}", self.avg_words_per_dialogue)),
            ("Avg. words per patient utterance", format!("{:.1}", self.avg_words_per_patient_utterance)),
            ("Avg. words per doctor utterance", format!("{:.1}", self.avg_words_per_doctor_utterance)),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k:<34}{v:>10}\n"))
            .collect()
    }
}

/// How often each symptom appears across explicit and implicit lists.
pub fn symptom_frequency(cases: &[CaseRecord]) -> BTreeMap<SymptomId, usize> {
    let mut counts = BTreeMap::new();
    for case in cases {
        for s in case.explicit_symptoms.iter().chain(case.implicit_ids()) {
            *counts.entry(s.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// One JSON record per line.
pub fn dataset_to_jsonl(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

pub fn load_dataset(document: &str, ontology: &Ontology) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::new();
    for (i, line) in document.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(line)
            .map_err(|e| json_error("dataset", e).context(format!("dataset line {}", i + 1)))?;
        d.gold
            .validate(ontology)
            .map_err(|e| e.context(format!("dataset line {}", i + 1)))?;
        dialogues.push(d);
    }
    Ok(dialogues)
}

/// Plain transcript with "Patient: " / "Doctor: " prefixes, dialogues separated by blank lines.
pub fn dataset_to_text(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for (i, d) in dialogues.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# {}\n", d.case_id));
        for u in &d.utterances {
            let who = match u.role {
                Role::Patient => "Patient",
                Role::Doctor => "Doctor",
            };
            out.push_str(&format!("{who}: {}\n", u.text));
        }
    }
    out
}

/// Symptoms across a dataset's gold cases that never appear in any utterance annotation.
pub fn unmentioned_symptoms(dialogues: &[Dialogue]) -> BTreeSet<SymptomId> {
    let mentioned: BTreeSet<&SymptomId> = dialogues
        .iter()
        .flat_map(|d| d.utterances.iter().flat_map(|u| &u.mentioned_symptoms))
        .collect();
    dialogues
        .iter()
        .flat_map(|d| d.gold.explicit_symptoms.iter().chain(d.gold.implicit_ids()))
        .filter(|s| !mentioned.contains(s))
        .cloned()
        .collect()
}
