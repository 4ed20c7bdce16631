#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ddxbench_core::metrics::{DialogueLevelVariant, TranscriptRecord};
use ddxbench_core::ontology::{CaseRecord, DiseaseId, Ontology, SymptomId};
use num::{BigInt, BigRational, One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

/// Transcripts against `cases` with every awkward shape the scorer has to handle:
/// repeats, foreign symptoms, zero inquiries, multi-symptom turns, aliases and truncation.
pub fn random_transcripts<R: Rng>(rng: &mut R, ontology: &Ontology, cases: &[CaseRecord], n: usize) -> Vec<TranscriptRecord> {
    let symptoms: Vec<&SymptomId> = ontology.symptoms().iter().map(|s| &s.id).collect();
    (0..n)
        .map(|_| {
            let case = cases.choose(rng).unwrap();
            let len = rng.gen_range(0..=8);
            let asked: Vec<SymptomId> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.4) {
                        let own: Vec<&SymptomId> = ontology.symptoms_of(&case.disease).unwrap().iter().collect();
                        (*own.choose(rng).unwrap()).clone()
                    } else {
                        (*symptoms.choose(rng).unwrap()).clone()
                    }
                })
                .collect();
            let n_pred = match (asked.len(), rng.gen_range(0..4)) {
                (0, 0) => 0,
                (0, _) => rng.gen_range(0..3),
                (k, 0) => rng.gen_range(1..=k),
                (k, _) => k + rng.gen_range(0..3),
            };
            let truncated = rng.gen_bool(0.15);
            let predicted_disease = if truncated {
                None
            } else {
                Some(random_prediction(rng, ontology, &case.disease))
            };
            TranscriptRecord {
                case_id: case.case_id.clone(),
                asked_symptoms: asked,
                predicted_disease,
                n_pred,
                n_gold: case.implicit_symptoms.len(),
                gold_disease: case.disease.clone(),
                truncated,
                doctor_utterances: n_pred + 1,
                unparseable: 0,
                abort_reason: None,
            }
        })
        .collect()
}

fn random_prediction<R: Rng>(rng: &mut R, ontology: &Ontology, gold: &DiseaseId) -> DiseaseId {
    let gold_entry = ontology.disease(gold).unwrap();
    match rng.gen_range(0..5) {
        0 => gold.clone(),
        1 => DiseaseId::new(gold_entry.canonical_name.to_uppercase()),
        2 => match gold_entry.aliases.choose(rng) {
            Some(alias) => DiseaseId::new(alias.clone()),
            None => gold.clone(),
        },
        _ => ontology.diseases().choose(rng).unwrap().id.clone(),
    }
}

fn q(n: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Thresholds 0/10 .. 9/10 as exact fractions.
pub fn decile_thresholds() -> Vec<BigRational> {
    (0..10).map(|i| ratio(i, 10)).collect()
}

pub fn to_f64(x: &BigRational) -> f64 {
    num::ToPrimitive::to_f64(x).unwrap()
}

/// Naive exact recomputation of every per-dialogue quantity.
#[derive(Debug, Clone)]
pub struct Exact {
    pub s_dise: BigRational,
    pub s_diag: BigRational,
    pub correct: bool,
    pub sentences: usize,
}

fn exact_cost(n_gold: usize, n_pred: usize) -> BigRational {
    let (lo, hi) = if n_gold < n_pred { (n_gold, n_pred) } else { (n_pred, n_gold) };
    if hi == 0 {
        BigRational::one()
    } else {
        ratio(lo, hi)
    }
}

fn exact_share(t: &TranscriptRecord, hits: usize) -> BigRational {
    if t.n_pred == 0 && t.asked_symptoms.is_empty() {
        return if t.n_gold == 0 { BigRational::one() } else { BigRational::zero() };
    }
    let den = if t.n_pred > t.asked_symptoms.len() { t.n_pred } else { t.asked_symptoms.len() };
    exact_cost(t.n_gold, t.n_pred) * q(hits) / q(den)
}

fn names_gold(predicted: &str, ontology: &Ontology, gold: &DiseaseId) -> bool {
    let entry = ontology.disease(gold).unwrap();
    let p = predicted.to_lowercase();
    p == gold.as_str().to_lowercase()
        || p == entry.canonical_name.to_lowercase()
        || entry.aliases.iter().any(|a| a.to_lowercase() == p)
}

pub fn exact_score(t: &TranscriptRecord, case: &CaseRecord, ontology: &Ontology, variant: DialogueLevelVariant) -> Exact {
    let gold_set = ontology.symptoms_of(&t.gold_disease).unwrap();
    let dise_hits = t.asked_symptoms.iter().filter(|s| gold_set.contains(*s)).count();
    let implicit: Vec<&SymptomId> = case.implicit_symptoms.iter().map(|i| &i.symptom).collect();
    let s_diag = match variant {
        DialogueLevelVariant::Recall => {
            if implicit.is_empty() {
                BigRational::one()
            } else {
                let mut covered = 0;
                for s in &implicit {
                    if t.asked_symptoms.contains(s) {
                        covered += 1;
                    }
                }
                ratio(covered, implicit.len())
            }
        }
        DialogueLevelVariant::PrecisionWithCost => {
            let hits = t.asked_symptoms.iter().filter(|s| implicit.contains(s)).count();
            exact_share(t, hits)
        }
    };
    Exact {
        s_dise: exact_share(t, dise_hits),
        s_diag,
        correct: t
            .predicted_disease
            .as_ref()
            .is_some_and(|p| names_gold(p.as_str(), ontology, &t.gold_disease)),
        sentences: t.n_pred + usize::from(t.predicted_disease.is_some()),
    }
}

/// Corpus-level numbers from the exact per-dialogue scores.
#[derive(Debug, Clone)]
pub struct ExactReport {
    pub s_diag: BigRational,
    pub s_dise: BigRational,
    pub correct: usize,
    pub sentences: usize,
    pub reliability_hits: Vec<usize>,
    pub per_disease: BTreeMap<DiseaseId, (usize, usize)>,
    pub ignore: BTreeMap<SymptomId, (usize, usize)>,
}

pub fn exact_report(
    transcripts: &[TranscriptRecord],
    cases: &[CaseRecord],
    ontology: &Ontology,
    variant: DialogueLevelVariant,
    thresholds: &[BigRational],
) -> ExactReport {
    let mut out = ExactReport {
        s_diag: BigRational::zero(),
        s_dise: BigRational::zero(),
        correct: 0,
        sentences: 0,
        reliability_hits: vec![0; thresholds.len()],
        per_disease: BTreeMap::new(),
        ignore: BTreeMap::new(),
    };
    for t in transcripts {
        let case = cases.iter().find(|c| c.case_id == t.case_id).unwrap();
        let e = exact_score(t, case, ontology, variant);
        out.s_diag += &e.s_diag;
        out.s_dise += &e.s_dise;
        out.correct += usize::from(e.correct);
        out.sentences += e.sentences;
        for (i, th) in thresholds.iter().enumerate() {
            if e.correct && e.s_dise >= *th {
                out.reliability_hits[i] += 1;
            }
        }
        let d = out.per_disease.entry(t.gold_disease.clone()).or_default();
        d.0 += usize::from(e.correct);
        d.1 += 1;
        for s in case.explicit_symptoms.iter().chain(case.implicit_symptoms.iter().map(|i| &i.symptom)) {
            out.ignore.entry(s.clone()).or_default().0 += 1;
        }
    }
    let known: BTreeSet<SymptomId> = out.ignore.keys().cloned().collect();
    for t in transcripts {
        for s in &t.asked_symptoms {
            if known.contains(s) {
                out.ignore.get_mut(s).unwrap().1 += 1;
            }
        }
    }
    let n = transcripts.len().max(1);
    out.s_diag /= q(n);
    out.s_dise /= q(n);
    out
}

fn close(label: &str, got: f64, want: &BigRational) -> Result<(), String> {
    let want = to_f64(want);
    if (got - want).abs() <= 1e-12 {
        Ok(())
    } else {
        Err(format!("{label}: got {got}, exact {want}"))
    }
}

fn same_fraction(label: &str, got: f64, num: usize, den: usize) -> Result<(), String> {
    if got == num as f64 / den as f64 {
        Ok(())
    } else {
        Err(format!("{label}: got {got}, exact {num}/{den}"))
    }
}

/// Checks an `aggregate` result against the exact recomputation.
pub fn check_against_exact(report: &ddxbench_core::metrics::ScoreReport, exact: &ExactReport, n: usize) -> Result<(), String> {
    if report.transcripts != n {
        return Err(format!("transcripts: got {}, want {n}", report.transcripts));
    }
    close("s_diag", report.s_diag, &exact.s_diag)?;
    close("s_dise", report.s_dise, &exact.s_dise)?;
    same_fraction("diag_acc", report.diag_acc, exact.correct, n)?;
    same_fraction("avg_sentences", report.avg_sentences, exact.sentences, n)?;
    if report.reliability_curve.len() != exact.reliability_hits.len() {
        return Err("curve length".into());
    }
    for (point, &hits) in report.reliability_curve.iter().zip(&exact.reliability_hits) {
        same_fraction(&format!("R({})", point.threshold), point.reliability, hits, n)?;
    }
    let diseases: Vec<_> = report
        .per_disease_accuracy
        .iter()
        .map(|r| (r.disease.clone(), (r.correct, r.total)))
        .collect();
    let want: Vec<_> = exact.per_disease.clone().into_iter().collect();
    if diseases != want {
        return Err(format!("per-disease accuracy: got {diseases:?}, want {want:?}"));
    }
    for row in &report.per_disease_accuracy {
        same_fraction(&format!("accuracy of {}", row.disease), row.accuracy, row.correct, row.total)?;
    }
    let mut ignore: BTreeMap<SymptomId, (usize, usize)> = BTreeMap::new();
    for row in &report.ignore_ratio {
        same_fraction(&format!("ignore ratio of {}", row.symptom), row.ratio, row.f2, row.f1)?;
        ignore.insert(row.symptom.clone(), (row.f1, row.f2));
    }
    if ignore != exact.ignore {
        return Err("ignore-ratio counts differ".into());
    }
    let ascending = report.ignore_ratio.windows(2).all(|w| {
        let (a, b) = (ratio(w[0].f2, w[0].f1), ratio(w[1].f2, w[1].f1));
        a < b || (a == b && w[0].symptom < w[1].symptom)
    });
    if !ascending {
        return Err("ignore ratios not ascending".into());
    }
    Ok(())
}
