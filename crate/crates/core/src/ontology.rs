//! Diseases, symptoms, per-disease symptom sets and patient cases.
//!
//! Ontology files are JSON:
//!
//! ```json
//! {
//!   "name": "mini",
//!   "diseases": [{ "name": "Rhinitis", "aliases": ["allergic rhinitis"] }],
//!   "symptoms": [{ "name": "Fever", "aliases": ["high temperature"] }],
//!   "disease_symptoms": { "Rhinitis": ["Stuffy nose", "Sneeze"] }
//! }
//! ```
//!
//! Symptoms are the union of the `disease_symptoms` values and the optional
//! `symptoms` list. Entities without an explicit `id` get a slug of their
//! canonical name. Case files are JSON lists of
//! `{case_id?, explicit: [..], implicit: [{symptom, present}], disease}` where
//! every entity may be given by id or by any of its surface forms.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{json_error, Error, Result};
use crate::lexicon::Lexicon;
use crate::seed;
use crate::text::{name_key, slug};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(id: &str) -> Self {
                $name(id.to_string())
            }
        }
    };
}

id_type!(SymptomId);
id_type!(DiseaseId);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symptom {
    pub id: SymptomId,
    pub canonical_name: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disease {
    pub id: DiseaseId,
    pub canonical_name: String,
    pub aliases: Vec<String>,
}

impl Symptom {
    pub fn new(canonical_name: &str) -> Self {
        Symptom {
            id: SymptomId(slug(canonical_name)),
            canonical_name: canonical_name.to_string(),
            aliases: Vec::new(),
        }
    }

    fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

impl Disease {
    pub fn new(canonical_name: &str) -> Self {
        Disease {
            id: DiseaseId(slug(canonical_name)),
            canonical_name: canonical_name.to_string(),
            aliases: Vec::new(),
        }
    }

    fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entity {
    Disease(usize),
    Symptom(usize),
}

/// Validated disease/symptom universe. Immutable once built.
#[derive(Debug, Clone)]
pub struct Ontology {
    name: String,
    diseases: Vec<Disease>,
    symptoms: Vec<Symptom>,
    disease_symptoms: BTreeMap<DiseaseId, BTreeSet<SymptomId>>,
    disease_index: HashMap<DiseaseId, usize>,
    symptom_index: HashMap<SymptomId, usize>,
    names: HashMap<String, Entity>,
    disease_lexicon: Lexicon,
    symptom_lexicon: Lexicon,
}

impl Ontology {
    /// Builds and validates an ontology.
    pub fn new(
        name: impl Into<String>,
        diseases: Vec<Disease>,
        symptoms: Vec<Symptom>,
        disease_symptoms: BTreeMap<DiseaseId, BTreeSet<SymptomId>>,
    ) -> Result<Self> {
        if diseases.is_empty() {
            return Err(Error::Integrity("ontology declares no diseases".into()));
        }

        let mut disease_index = HashMap::new();
        for (i, d) in diseases.iter().enumerate() {
            if name_key(&d.canonical_name).is_empty() {
                return Err(Error::Validation(format!("disease {} has an empty name", d.id)));
            }
            if disease_index.insert(d.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate disease id {}", d.id)));
            }
        }
        let mut symptom_index = HashMap::new();
        for (i, s) in symptoms.iter().enumerate() {
            if name_key(&s.canonical_name).is_empty() {
                return Err(Error::Validation(format!("symptom {} has an empty name", s.id)));
            }
            if symptom_index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate symptom id {}", s.id)));
            }
        }

        let mut names: HashMap<String, Entity> = HashMap::new();
        let mut owners: HashMap<String, String> = HashMap::new();
        let entries = diseases
            .iter()
            .enumerate()
            .flat_map(|(i, d)| {
                d.surface_forms()
                    .map(move |f| (f, Entity::Disease(i), format!("disease {}", d.id)))
            })
            .chain(symptoms.iter().enumerate().flat_map(|(i, s)| {
                s.surface_forms()
                    .map(move |f| (f, Entity::Symptom(i), format!("symptom {}", s.id)))
            }));
        for (form, entity, owner) in entries {
            let key = name_key(form);
            if key.is_empty() {
                return Err(Error::Validation(format!("{owner} has an empty alias")));
            }
            if let Some(first) = owners.get(&key) {
                return Err(Error::Ambiguity {
                    name: key,
                    first: first.clone(),
                    second: owner,
                });
            }
            owners.insert(key.clone(), owner);
            names.insert(key, entity);
        }

        for (disease, set) in &disease_symptoms {
            if !disease_index.contains_key(disease) {
                return Err(Error::Integrity(format!(
                    "symptom set given for unknown disease {disease}"
                )));
            }
            for s in set {
                if !symptom_index.contains_key(s) {
                    return Err(Error::Integrity(format!(
                        "disease {disease} references unknown symptom {s}"
                    )));
                }
            }
        }
        for d in &diseases {
            if disease_symptoms.get(&d.id).is_none_or(BTreeSet::is_empty) {
                return Err(Error::Integrity(format!("disease {} has no symptoms", d.id)));
            }
        }

        let disease_lexicon = Lexicon::new(
            diseases
                .iter()
                .enumerate()
                .flat_map(|(i, d)| d.surface_forms().map(move |f| (f, i))),
        );
        let symptom_lexicon = Lexicon::new(
            symptoms
                .iter()
                .enumerate()
                .flat_map(|(i, s)| s.surface_forms().map(move |f| (f, i))),
        );

        Ok(Ontology {
            name: name.into(),
            diseases,
            symptoms,
            disease_symptoms,
            disease_index,
            symptom_index,
            names,
            disease_lexicon,
            symptom_lexicon,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn diseases(&self) -> &[Disease] {
        &self.diseases
    }

    pub fn symptoms(&self) -> &[Symptom] {
        &self.symptoms
    }

    pub fn disease(&self, id: &DiseaseId) -> Option<&Disease> {
        self.disease_index.get(id).map(|&i| &self.diseases[i])
    }

    pub fn symptom(&self, id: &SymptomId) -> Option<&Symptom> {
        self.symptom_index.get(id).map(|&i| &self.symptoms[i])
    }

    /// S^d for every disease, keyed and ordered by id.
    pub fn disease_symptoms(&self) -> &BTreeMap<DiseaseId, BTreeSet<SymptomId>> {
        &self.disease_symptoms
    }

    pub fn symptoms_of(&self, disease: &DiseaseId) -> Option<&BTreeSet<SymptomId>> {
        self.disease_symptoms.get(disease)
    }

    /// Looks a disease up by id or by any surface form.
    pub fn resolve_disease(&self, reference: &str) -> Option<&DiseaseId> {
        if let Some((id, _)) = self.disease_index.get_key_value(&DiseaseId::from(reference)) {
            return Some(id);
        }
        match self.names.get(&name_key(reference)) {
            Some(Entity::Disease(i)) => Some(&self.diseases[*i].id),
            _ => None,
        }
    }

    /// Looks a symptom up by id or by any surface form.
    pub fn resolve_symptom(&self, reference: &str) -> Option<&SymptomId> {
        if let Some((id, _)) = self.symptom_index.get_key_value(&SymptomId::from(reference)) {
            return Some(id);
        }
        match self.names.get(&name_key(reference)) {
            Some(Entity::Symptom(i)) => Some(&self.symptoms[*i].id),
            _ => None,
        }
    }

    /// Diseases mentioned in `text`, in text order.
    pub fn scan_diseases(&self, text: &str) -> Vec<DiseaseId> {
        self.disease_lexicon
            .scan(text)
            .into_iter()
            .map(|i| self.diseases[i].id.clone())
            .collect()
    }

    /// Symptoms mentioned in `text`, in text order.
    pub fn scan_symptoms(&self, text: &str) -> Vec<SymptomId> {
        self.symptom_lexicon
            .scan(text)
            .into_iter()
            .map(|i| self.symptoms[i].id.clone())
            .collect()
    }

    /// Copy of this ontology with S^d replaced for every disease in `sets`.
    pub fn with_disease_symptoms(
        &self,
        sets: &BTreeMap<DiseaseId, BTreeSet<SymptomId>>,
    ) -> Result<Ontology> {
        let mut merged = self.disease_symptoms.clone();
        for (d, set) in sets {
            merged.insert(d.clone(), set.clone());
        }
        Ontology::new(
            self.name.clone(),
            self.diseases.clone(),
            self.symptoms.clone(),
            merged,
        )
    }

    /// Serializes back into the ontology file format.
    pub fn to_json(&self) -> String {
        let entity = |id: &str, name: &str, aliases: &[String]| {
            let mut v = serde_json::json!({ "name": name, "id": id });
            if !aliases.is_empty() {
                v["aliases"] = serde_json::json!(aliases);
            }
            v
        };
        let doc = serde_json::json!({
            "name": self.name,
            "diseases": self.diseases.iter()
                .map(|d| entity(d.id.as_str(), &d.canonical_name, &d.aliases))
                .collect::<Vec<_>>(),
            "symptoms": self.symptoms.iter()
                .map(|s| entity(s.id.as_str(), &s.canonical_name, &s.aliases))
                .collect::<Vec<_>>(),
            "disease_symptoms": self.disease_symptoms.iter()
                .map(|(d, set)| (d.to_string(), set.iter().map(|s| s.to_string()).collect::<Vec<_>>()))
                .collect::<BTreeMap<_, _>>(),
        });
        serde_json::to_string_pretty(&doc).expect("ontology serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityDoc {
    name: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyDoc {
    #[serde(default)]
    name: Option<String>,
    diseases: Vec<EntityDoc>,
    #[serde(default)]
    symptoms: Vec<EntityDoc>,
    disease_symptoms: BTreeMap<String, Vec<String>>,
}

/// Parses and validates an ontology document.
pub fn load_ontology(document: &str) -> Result<Ontology> {
    let doc: OntologyDoc = serde_json::from_str(document).map_err(|e| json_error("ontology", e))?;

    let diseases: Vec<Disease> = doc
        .diseases
        .into_iter()
        .map(|e| Disease {
            id: DiseaseId(e.id.unwrap_or_else(|| slug(&e.name))),
            canonical_name: e.name,
            aliases: e.aliases,
        })
        .collect();
    let mut symptoms: Vec<Symptom> = doc
        .symptoms
        .into_iter()
        .map(|e| Symptom {
            id: SymptomId(e.id.unwrap_or_else(|| slug(&e.name))),
            canonical_name: e.name,
            aliases: e.aliases,
        })
        .collect();

    // Declared symptoms must be unambiguous before implied ones are merged in.
    let mut symptom_keys: HashMap<String, usize> = HashMap::new();
    for (i, s) in symptoms.iter().enumerate() {
        for form in s.surface_forms() {
            let key = name_key(form);
            if let Some(&j) = symptom_keys.get(&key) {
                return Err(Error::Ambiguity {
                    name: key,
                    first: format!("symptom {}", symptoms[j].id),
                    second: format!("symptom {}", s.id),
                });
            }
            symptom_keys.insert(key, i);
        }
        symptom_keys.entry(s.id.0.clone()).or_insert(i);
    }
    let disease_keys: HashMap<String, usize> = diseases
        .iter()
        .enumerate()
        .flat_map(|(i, d)| {
            d.surface_forms()
                .map(name_key)
                .chain(std::iter::once(d.id.0.clone()))
                .map(move |k| (k, i))
        })
        .collect();

    let mut disease_symptoms: BTreeMap<DiseaseId, BTreeSet<SymptomId>> = BTreeMap::new();
    for (disease_ref, symptom_refs) in doc.disease_symptoms {
        let di = disease_keys
            .get(&disease_ref)
            .or_else(|| disease_keys.get(&name_key(&disease_ref)))
            .copied()
            .ok_or_else(|| {
                Error::Integrity(format!(
                    "disease_symptoms entry {disease_ref:?} is not a declared disease"
                ))
            })?;
        let set = disease_symptoms.entry(diseases[di].id.clone()).or_default();
        for symptom_ref in symptom_refs {
            let key = name_key(&symptom_ref);
            if key.is_empty() {
                return Err(Error::format(
                    format!("disease_symptoms.{disease_ref}"),
                    "empty symptom name",
                ));
            }
            let si = match symptom_keys
                .get(&symptom_ref)
                .or_else(|| symptom_keys.get(&key))
            {
                Some(&si) => si,
                None => {
                    symptoms.push(Symptom::new(symptom_ref.trim()));
                    let si = symptoms.len() - 1;
                    symptom_keys.insert(key, si);
                    si
                }
            };
            set.insert(symptoms[si].id.clone());
        }
    }

    Ontology::new(
        doc.name.unwrap_or_else(|| "ontology".to_string()),
        diseases,
        symptoms,
        disease_symptoms,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitSymptom {
    pub symptom: SymptomId,
    pub present: bool,
}

/// One patient: volunteered symptoms, symptoms a doctor has to ask about, and the diagnosis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    #[serde(rename = "explicit")]
    pub explicit_symptoms: Vec<SymptomId>,
    #[serde(rename = "implicit")]
    pub implicit_symptoms: Vec<ImplicitSymptom>,
    pub disease: DiseaseId,
}

impl CaseRecord {
    /// What the patient would answer when asked about `symptom`, if the case knows.
    pub fn polarity(&self, symptom: &SymptomId) -> Option<bool> {
        if self.explicit_symptoms.contains(symptom) {
            return Some(true);
        }
        self.implicit_symptoms
            .iter()
            .find(|i| &i.symptom == symptom)
            .map(|i| i.present)
    }

    pub fn implicit_ids(&self) -> impl Iterator<Item = &SymptomId> {
        self.implicit_symptoms.iter().map(|i| &i.symptom)
    }

    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        let id = &self.case_id;
        if self.explicit_symptoms.is_empty() {
            return Err(Error::Validation(format!("case {id} has no explicit symptoms")));
        }
        if ontology.disease(&self.disease).is_none() {
            return Err(Error::Integrity(format!(
                "case {id} references unknown disease {}",
                self.disease
            )));
        }
        let mut explicit = HashSet::new();
        for s in &self.explicit_symptoms {
            if ontology.symptom(s).is_none() {
                return Err(Error::Integrity(format!("case {id} references unknown symptom {s}")));
            }
            if !explicit.insert(s) {
                return Err(Error::Validation(format!("case {id} lists explicit symptom {s} twice")));
            }
        }
        let mut implicit = HashSet::new();
        for s in self.implicit_ids() {
            if ontology.symptom(s).is_none() {
                return Err(Error::Integrity(format!("case {id} references unknown symptom {s}")));
            }
            if explicit.contains(s) {
                return Err(Error::Validation(format!(
                    "case {id} lists {s} as both explicit and implicit"
                )));
            }
            if !implicit.insert(s) {
                return Err(Error::Validation(format!("case {id} lists implicit symptom {s} twice")));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImplicitDoc {
    symptom: String,
    present: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    #[serde(default)]
    case_id: Option<String>,
    explicit: Vec<String>,
    #[serde(default)]
    implicit: Vec<ImplicitDoc>,
    disease: String,
}

/// Parses a case file and validates every case against `ontology`, keeping file order.
pub fn load_cases(document: &str, ontology: &Ontology) -> Result<Vec<CaseRecord>> {
    let docs: Vec<CaseDoc> = serde_json::from_str(document).map_err(|e| json_error("cases", e))?;
    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(docs.len());
    for (i, doc) in docs.into_iter().enumerate() {
        let case_id = doc.case_id.unwrap_or_else(|| format!("case-{:04}", i + 1));
        let symptom = |name: &str| {
            ontology.resolve_symptom(name).cloned().ok_or_else(|| {
                Error::Integrity(format!("case {case_id} references unknown symptom {name:?}"))
            })
        };
        let explicit_symptoms = doc
            .explicit
            .iter()
            .map(|s| symptom(s))
            .collect::<Result<Vec<_>>>()?;
        let implicit_symptoms = doc
            .implicit
            .iter()
            .map(|i| {
                Ok(ImplicitSymptom {
                    symptom: symptom(&i.symptom)?,
                    present: i.present,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let disease = ontology.resolve_disease(&doc.disease).cloned().ok_or_else(|| {
            Error::Integrity(format!(
                "case {case_id} references unknown disease {:?}",
                doc.disease
            ))
        })?;
        let case = CaseRecord {
            case_id,
            explicit_symptoms,
            implicit_symptoms,
            disease,
        };
        case.validate(ontology)?;
        if !seen.insert(case.case_id.clone()) {
            return Err(Error::Validation(format!("duplicate case id {}", case.case_id)));
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Serializes cases into the case file format (entities written by id).
pub fn cases_to_json(cases: &[CaseRecord]) -> String {
    serde_json::to_string_pretty(cases).expect("cases serialize")
}

/// Aggregates S^d from labelled cases: explicit and positive implicit symptoms,
/// plus negatively answered ones when `include_asked_negatives` is set.
pub fn derive_disease_symptoms(
    cases: &[CaseRecord],
    include_asked_negatives: bool,
) -> BTreeMap<DiseaseId, BTreeSet<SymptomId>> {
    let mut sets: BTreeMap<DiseaseId, BTreeSet<SymptomId>> = BTreeMap::new();
    for case in cases {
        let set = sets.entry(case.disease.clone()).or_default();
        set.extend(case.explicit_symptoms.iter().cloned());
        set.extend(
            case.implicit_symptoms
                .iter()
                .filter(|i| i.present || include_asked_negatives)
                .map(|i| i.symptom.clone()),
        );
    }
    sets
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCaseConfig {
    pub count: usize,
    /// Inclusive bounds on the number of implicit symptoms per case.
    pub implicit_range: (usize, usize),
    /// Chance that an implicit slot is filled with a symptom the patient denies.
    pub negative_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticCaseConfig {
    fn default() -> Self {
        SyntheticCaseConfig {
            count: 100,
            implicit_range: (1, 4),
            negative_probability: 0.3,
            seed: seed::DEFAULT_SEED,
        }
    }
}

/// Draws random cases consistent with the ontology.
///
/// Each case picks its disease uniformly, volunteers one or two symptoms of
/// S^d, and gets an implicit list mixing further symptoms of S^d (present)
/// with symptoms outside S^d (denied).
pub fn generate_synthetic_cases(
    ontology: &Ontology,
    config: &SyntheticCaseConfig,
) -> Result<Vec<CaseRecord>> {
    let (min, max) = config.implicit_range;
    if min > max {
        return Err(Error::Config(format!("implicit range ({min}, {max}) is empty")));
    }
    if !(0.0..=1.0).contains(&config.negative_probability) {
        return Err(Error::Config(format!(
            "negative probability {} is outside [0, 1]",
            config.negative_probability
        )));
    }
    for (d, set) in ontology.disease_symptoms() {
        if set.len() < min + 1 {
            return Err(Error::Config(format!(
                "disease {d} has {} symptoms but cases need at least {}",
                set.len(),
                min + 1
            )));
        }
    }

    let mut rng = seed::rng(config.seed);
    let diseases: Vec<&DiseaseId> = ontology.disease_symptoms().keys().collect();
    let all_symptoms: Vec<&SymptomId> = {
        let mut v: Vec<_> = ontology.symptoms().iter().map(|s| &s.id).collect();
        v.sort();
        v
    };
    let width = config.count.to_string().len().max(4);

    let mut cases = Vec::with_capacity(config.count);
    for n in 0..config.count {
        let disease = *diseases.choose(&mut rng).expect("ontology has diseases");
        let related = &ontology.disease_symptoms()[disease];
        let mut pool: Vec<&SymptomId> = related.iter().collect();
        pool.shuffle(&mut rng);
        let mut unrelated: Vec<&SymptomId> = all_symptoms
            .iter()
            .copied()
            .filter(|s| !related.contains(*s))
            .collect();
        unrelated.shuffle(&mut rng);

        let n_explicit = rng.gen_range(1..=2usize.min(pool.len() - min));
        let explicit_symptoms: Vec<SymptomId> =
            pool.drain(..n_explicit).cloned().collect();
        let wanted = rng.gen_range(min..=max);
        let mut implicit_symptoms = Vec::with_capacity(wanted);
        for _ in 0..wanted {
            let deny = rng.gen_bool(config.negative_probability);
            let entry = if deny && !unrelated.is_empty() {
                (unrelated.pop(), false)
            } else if !pool.is_empty() {
                (pool.pop(), true)
            } else {
                (unrelated.pop(), false)
            };
            match entry {
                (Some(symptom), present) => implicit_symptoms.push(ImplicitSymptom {
                    symptom: symptom.clone(),
                    present,
                }),
                (None, _) => break,
            }
        }

        cases.push(CaseRecord {
            case_id: format!("synthetic-{:0width$}", n + 1),
            explicit_symptoms,
            implicit_symptoms,
            disease: disease.clone(),
        });
    }
    Ok(cases)
}
