//! Symptom-inquiry and diagnosis scores over session transcripts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{json_error, Error, Result};
use crate::ontology::{CaseRecord, DiseaseId, Ontology, SymptomId};

/// What a doctor agent did in one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub case_id: String,
    /// Every symptom the doctor asked about, in order, repeats included.
    pub asked_symptoms: Vec<SymptomId>,
    #[serde(default)]
    pub predicted_disease: Option<DiseaseId>,
    /// Doctor turns that were inquiries or could not be parsed.
    pub n_pred: usize,
    pub n_gold: usize,
    pub gold_disease: DiseaseId,
    pub truncated: bool,
    /// All doctor utterances, the diagnosis included.
    #[serde(default)]
    pub doctor_utterances: usize,
    #[serde(default)]
    pub unparseable: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl TranscriptRecord {
    pub fn validate(&self) -> Result<()> {
        if self.truncated && self.predicted_disease.is_some() {
            return Err(Error::Validation(format!(
                "transcript {} is truncated but has a prediction",
                self.case_id
            )));
        }
        if self.unparseable > self.n_pred {
            return Err(Error::Validation(format!(
                "transcript {} has more unparseable turns than inquiries",
                self.case_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueLevelVariant {
    #[default]
    Recall,
    PrecisionWithCost,
}

impl DialogueLevelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DialogueLevelVariant::Recall => "recall",
            DialogueLevelVariant::PrecisionWithCost => "precision_with_cost",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub thresholds: Vec<f64>,
    pub dialogue_level_variant: DialogueLevelVariant,
}

/// 0.0, 0.1, ..., 0.9
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            thresholds: default_thresholds(),
            dialogue_level_variant: DialogueLevelVariant::Recall,
        }
    }
}

impl MetricConfig {
    pub fn new(thresholds: Vec<f64>, variant: DialogueLevelVariant) -> Result<Self> {
        let config = MetricConfig {
            thresholds,
            dialogue_level_variant: variant,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Config(format!("threshold {t} is outside [0, 1]")));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// 1 when `symptom` belongs to the disease's symptom set.
pub fn membership(symptom: &SymptomId, disease: &DiseaseId, ontology: &Ontology) -> Result<u8> {
    if ontology.symptom(symptom).is_none() {
        return Err(Error::Integrity(format!("unknown symptom {symptom}")));
    }
    let set = ontology
        .symptoms_of(disease)
        .ok_or_else(|| Error::Integrity(format!("unknown disease {disease}")))?;
    Ok(u8::from(set.contains(symptom)))
}

/// min/max of the two inquiry counts; two zeros count as a perfect match.
pub fn cost(n_gold: usize, n_pred: usize) -> f64 {
    let (lo, hi) = (n_gold.min(n_pred), n_gold.max(n_pred));
    if hi == 0 {
        1.0
    } else {
        lo as f64 / hi as f64
    }
}

/// Cost-scaled share of asked symptoms that `relevant` accepts.
///
/// The share is taken over `max(n_pred, asked)`: a single turn can name
/// several symptoms, and dividing by turns alone would let the score pass 1.
fn cost_scaled_share(t: &TranscriptRecord, mut relevant: impl FnMut(&SymptomId) -> Result<bool>) -> Result<f64> {
    if t.n_pred == 0 && t.asked_symptoms.is_empty() {
        return Ok(if t.n_gold == 0 { 1.0 } else { 0.0 });
    }
    let mut hits = 0usize;
    for s in &t.asked_symptoms {
        if relevant(s)? {
            hits += 1;
        }
    }
    let denominator = t.n_pred.max(t.asked_symptoms.len());
    // One division of exact integers, so the result is the correctly rounded
    // ratio and compares against thresholds like the exact fraction would.
    let (lo, hi) = match (t.n_gold.min(t.n_pred), t.n_gold.max(t.n_pred)) {
        (_, 0) => (1, 1),
        pair => pair,
    };
    Ok((lo * hits) as f64 / (hi * denominator) as f64)
}

/// How much of the questioning targeted the gold disease's symptom set.
pub fn disease_wise_score(t: &TranscriptRecord, ontology: &Ontology) -> Result<f64> {
    if ontology.symptoms_of(&t.gold_disease).is_none() {
        return Err(Error::Integrity(format!(
            "transcript {} has unknown gold disease {}",
            t.case_id, t.gold_disease
        )));
    }
    cost_scaled_share(t, |s| Ok(membership(s, &t.gold_disease, ontology)? == 1))
}

/// Credit for asking about the case's own implicit symptoms.
pub fn dialogue_level_score(
    t: &TranscriptRecord,
    case: &CaseRecord,
    variant: DialogueLevelVariant,
) -> Result<f64> {
    if t.case_id != case.case_id {
        return Err(Error::Integrity(format!(
            "transcript {} scored against case {}",
            t.case_id, case.case_id
        )));
    }
    let implicit: BTreeSet<&SymptomId> = case.implicit_ids().collect();
    match variant {
        DialogueLevelVariant::Recall => {
            if implicit.is_empty() {
                return Ok(1.0);
            }
            let asked: BTreeSet<&SymptomId> = t.asked_symptoms.iter().collect();
            Ok(asked.intersection(&implicit).count() as f64 / implicit.len() as f64)
        }
        DialogueLevelVariant::PrecisionWithCost => cost_scaled_share(t, |s| Ok(implicit.contains(s))),
    }
}

/// Whether the prediction names the gold disease, by id or any surface form.
pub fn diagnosis_correct(t: &TranscriptRecord, ontology: &Ontology) -> bool {
    match &t.predicted_disease {
        None => false,
        Some(p) => {
            let resolved = ontology.resolve_disease(p.as_str()).unwrap_or(p);
            let gold = ontology.resolve_disease(t.gold_disease.as_str()).unwrap_or(&t.gold_disease);
            resolved == gold
        }
    }
}

/// 1 when the diagnosis is right and the disease-wise score reaches `threshold`.
pub fn reliability(t: &TranscriptRecord, ontology: &Ontology, threshold: f64) -> Result<u8> {
    let s = disease_wise_score(t, ontology)?;
    Ok(u8::from(diagnosis_correct(t, ontology) && s >= threshold))
}

/// Scores for a single transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueScore {
    pub case_id: String,
    pub s_diag: f64,
    pub s_dise: f64,
    pub correct: bool,
    pub sentences: usize,
}

pub fn score_transcript(
    t: &TranscriptRecord,
    case: &CaseRecord,
    ontology: &Ontology,
    variant: DialogueLevelVariant,
) -> Result<DialogueScore> {
    Ok(DialogueScore {
        case_id: t.case_id.clone(),
        s_diag: dialogue_level_score(t, case, variant)?,
        s_dise: disease_wise_score(t, ontology)?,
        correct: diagnosis_correct(t, ontology),
        sentences: t.n_pred + usize::from(t.predicted_disease.is_some()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub reliability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseAccuracy {
    pub disease: DiseaseId,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgnoreRatio {
    pub symptom: SymptomId,
    pub f1: usize,
    pub f2: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub transcripts: usize,
    pub truncated: usize,
    pub dialogue_level_variant: DialogueLevelVariant,
    pub s_diag: f64,
    pub s_dise: f64,
    pub diag_acc: f64,
    pub avg_sentences: f64,
    pub reliability_curve: Vec<CurvePoint>,
    pub per_disease_accuracy: Vec<DiseaseAccuracy>,
    /// Ascending by ratio, ties by symptom id.
    pub ignore_ratio: Vec<IgnoreRatio>,
}

fn index_cases(cases: &[CaseRecord]) -> HashMap<&str, &CaseRecord> {
    cases.iter().map(|c| (c.case_id.as_str(), c)).collect()
}

fn case_for<'a>(index: &HashMap<&str, &'a CaseRecord>, t: &TranscriptRecord) -> Result<&'a CaseRecord> {
    index
        .get(t.case_id.as_str())
        .copied()
        .ok_or_else(|| Error::Integrity(format!("no case for transcript {}", t.case_id)))
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Corpus-level report. Every transcript must have its case in `cases`.
pub fn aggregate(
    transcripts: &[TranscriptRecord],
    cases: &[CaseRecord],
    ontology: &Ontology,
    config: &MetricConfig,
) -> Result<ScoreReport> {
    config.validate()?;
    let index = index_cases(cases);
    let mut scores = Vec::with_capacity(transcripts.len());
    for t in transcripts {
        let case = case_for(&index, t)?;
        scores.push(score_transcript(t, case, ontology, config.dialogue_level_variant)?);
    }
    let n = scores.len();
    let correct = scores.iter().filter(|s| s.correct).count();
    let reliability_curve = config
        .thresholds
        .iter()
        .map(|&threshold| {
            let hits = scores.iter().filter(|s| s.correct && s.s_dise >= threshold).count();
            CurvePoint {
                threshold,
                reliability: mean(hits as f64, n),
            }
        })
        .collect();

    Ok(ScoreReport {
        transcripts: n,
        truncated: transcripts.iter().filter(|t| t.truncated).count(),
        dialogue_level_variant: config.dialogue_level_variant,
        s_diag: mean(scores.iter().map(|s| s.s_diag).sum(), n),
        s_dise: mean(scores.iter().map(|s| s.s_dise).sum(), n),
        diag_acc: mean(correct as f64, n),
        avg_sentences: mean(scores.iter().map(|s| s.sentences).sum::<usize>() as f64, n),
        reliability_curve,
        per_disease_accuracy: disease_accuracy_rows(transcripts, ontology),
        ignore_ratio: ignore_ratio_rows(transcripts, cases)?,
    })
}

fn disease_accuracy_rows(transcripts: &[TranscriptRecord], ontology: &Ontology) -> Vec<DiseaseAccuracy> {
    let mut tally: BTreeMap<&DiseaseId, (usize, usize)> = BTreeMap::new();
    for t in transcripts {
        let entry = tally.entry(&t.gold_disease).or_default();
        entry.0 += usize::from(diagnosis_correct(t, ontology));
        entry.1 += 1;
    }
    tally
        .into_iter()
        .map(|(disease, (correct, total))| DiseaseAccuracy {
            disease: disease.clone(),
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
        .collect()
}

/// Fraction of each gold disease's transcripts that were diagnosed correctly.
pub fn per_disease_accuracy(
    transcripts: &[TranscriptRecord],
    ontology: &Ontology,
) -> BTreeMap<DiseaseId, f64> {
    disease_accuracy_rows(transcripts, ontology)
        .into_iter()
        .map(|row| (row.disease, row.accuracy))
        .collect()
}

fn ignore_ratio_rows(transcripts: &[TranscriptRecord], cases: &[CaseRecord]) -> Result<Vec<IgnoreRatio>> {
    let index = index_cases(cases);
    let mut f1: BTreeMap<&SymptomId, usize> = BTreeMap::new();
    let mut f2: BTreeMap<&SymptomId, usize> = BTreeMap::new();
    for t in transcripts {
        let case = case_for(&index, t)?;
        for s in case.explicit_symptoms.iter().chain(case.implicit_ids()) {
            *f1.entry(s).or_default() += 1;
        }
        for s in &t.asked_symptoms {
            *f2.entry(s).or_default() += 1;
        }
    }
    let mut rows: Vec<IgnoreRatio> = f1
        .into_iter()
        .map(|(s, f1)| {
            let f2 = f2.get(s).copied().unwrap_or(0);
            IgnoreRatio {
                symptom: s.clone(),
                f1,
                f2,
                ratio: f2 as f64 / f1 as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.ratio.total_cmp(&b.ratio).then_with(|| a.symptom.cmp(&b.symptom)));
    Ok(rows)
}

/// f2/f1 per symptom: times asked over times it occurs in the transcripts' cases.
pub fn symptom_ignore_ratio(
    transcripts: &[TranscriptRecord],
    cases: &[CaseRecord],
) -> Result<BTreeMap<SymptomId, f64>> {
    Ok(ignore_ratio_rows(transcripts, cases)?
        .into_iter()
        .map(|row| (row.symptom, row.ratio))
        .collect())
}

/// Column headings of the summary table.
pub const SUMMARY_COLUMNS: [&str; 4] = ["S_diag", "S_dise", "Diag_acc", "Avg. Sentence"];

impl ScoreReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn from_json(document: &str) -> Result<Self> {
        serde_json::from_str(document).map_err(|e| json_error("report", e))
    }

    /// Summary row under the four standard columns.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        for c in SUMMARY_COLUMNS {
            let _ = write!(out, "{c:>14}");
        }
        out.push('\n');
        for v in [self.s_diag, self.s_dise, self.diag_acc] {
            let _ = write!(out, "{v:>14.3}");
        }
        let _ = writeln!(out, "{:>14.2}", self.avg_sentences);
        out
    }

    /// Reliability by threshold, one column per threshold.
    pub fn threshold_table(&self) -> String {
        let mut head = format!("{:<6}", "t");
        let mut row = format!("{:<6}", "R");
        for p in &self.reliability_curve {
            let _ = write!(head, "{:>7.1}", p.threshold);
            let _ = write!(row, "{:>7.3}", p.reliability);
        }
        format!("{head}\n{row}\n")
    }

    /// Two-column threshold/reliability listing for plotting tools.
    pub fn curve_data(&self) -> String {
        let mut out = String::from("threshold\treliability\n");
        for p in &self.reliability_curve {
            let _ = writeln!(out, "{:.1}\t{:.6}", p.threshold, p.reliability);
        }
        out
    }

    pub fn disease_table(&self, ontology: Option<&Ontology>) -> String {
        let mut out = format!("{:<32}{:>10}{:>8}\n", "Disease", "Accuracy", "n");
        for row in &self.per_disease_accuracy {
            let name = ontology
                .and_then(|o| o.disease(&row.disease))
                .map_or(row.disease.as_str(), |d| d.canonical_name.as_str());
            let _ = writeln!(out, "{name:<32}{:>10.3}{:>8}", row.accuracy, row.total);
        }
        out
    }

    /// The `limit` lowest ratios first.
    pub fn ignore_table(&self, ontology: Option<&Ontology>, limit: usize) -> String {
        let mut out = format!("{:<40}{:>8}{:>6}{:>6}\n", "Symptom", "f2/f1", "f2", "f1");
        for row in self.ignore_ratio.iter().take(limit) {
            let name = ontology
                .and_then(|o| o.symptom(&row.symptom))
                .map_or(row.symptom.as_str(), |s| s.canonical_name.as_str());
            let _ = writeln!(out, "{name:<40}{:>8.2}{:>6}{:>6}", row.ratio, row.f2, row.f1);
        }
        out
    }

    pub fn to_text(&self, ontology: Option<&Ontology>) -> String {
        format!(
            "transcripts: {}  truncated: {}  dialogue-level variant: {}\n\n{}\nReliability by threshold\n{}\nPer-disease accuracy\n{}\nMost ignored symptoms\n{}",
            self.transcripts,
            self.truncated,
            self.dialogue_level_variant.as_str(),
            self.summary_table(),
            self.threshold_table(),
            self.disease_table(ontology),
            self.ignore_table(ontology, 10),
        )
    }
}

pub fn transcripts_to_jsonl(transcripts: &[TranscriptRecord]) -> String {
    let mut out = String::new();
    for t in transcripts {
        out.push_str(&serde_json::to_string(t).expect("transcript serializes"));
        out.push('\n');
    }
    out
}

/// Parses one transcript per line; blank lines are skipped.
pub fn load_transcripts(document: &str) -> Result<Vec<TranscriptRecord>> {
    let mut out = Vec::new();
    for (i, line) in document.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TranscriptRecord = serde_json::from_str(line)
            .map_err(|e| json_error("transcript", e).context(format!("transcript line {}", i + 1)))?;
        t.validate().map_err(|e| e.context(format!("transcript line {}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}
