//! Sentence templates for the five dialogue stages.
//!
//! A pack file maps each stage name to a list of template strings. Slots are
//! written `{symptom}`, `{symptom1}`, `{symptom2}` or `{disease}`:
//!
//! ```json
//! { "name": "train",
//!   "BSP":  ["I have {symptom1} and {symptom2}", "Recently, I am experiencing {symptom}"],
//!   "IIQD": ["What about {symptom}?"],
//!   "IPSP": ["Yes, sometimes."],
//!   "INSP": ["No, I don't have that."],
//!   "LDSD": ["I believe you are having {disease}."] }
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{json_error, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Doctor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Patient => "patient",
            Role::Doctor => "doctor",
        })
    }
}

/// The five dialogue stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageCategory {
    /// Patient's opening complaint with the explicit symptoms.
    BSP,
    /// Doctor asks about one symptom.
    IIQD,
    /// Patient confirms the symptom.
    IPSP,
    /// Patient denies the symptom.
    INSP,
    /// Doctor states the diagnosis.
    LDSD,
}

impl StageCategory {
    pub const ALL: [StageCategory; 5] = [
        StageCategory::BSP,
        StageCategory::IIQD,
        StageCategory::IPSP,
        StageCategory::INSP,
        StageCategory::LDSD,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageCategory::BSP => "BSP",
            StageCategory::IIQD => "IIQD",
            StageCategory::IPSP => "IPSP",
            StageCategory::INSP => "INSP",
            StageCategory::LDSD => "LDSD",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == name)
    }

    pub fn role(self) -> Role {
        match self {
            StageCategory::IIQD | StageCategory::LDSD => Role::Doctor,
            _ => Role::Patient,
        }
    }
}

impl fmt::Display for StageCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Symptom,
    Symptom1,
    Symptom2,
    Disease,
}

impl Placeholder {
    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Symptom => "symptom",
            Placeholder::Symptom1 => "symptom1",
            Placeholder::Symptom2 => "symptom2",
            Placeholder::Disease => "disease",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        [
            Placeholder::Symptom,
            Placeholder::Symptom1,
            Placeholder::Symptom2,
            Placeholder::Disease,
        ]
        .into_iter()
        .find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    category: StageCategory,
    text: String,
    segments: Vec<Segment>,
    placeholders: Vec<Placeholder>,
}

impl Template {
    /// Parses `text` and checks its slots against the stage's arity rules.
    pub fn parse(category: StageCategory, text: &str) -> Result<Self> {
        let segments = parse_segments(text).map_err(|m| {
            Error::format(format!("{category} template {text:?}"), m)
        })?;
        let mut placeholders = Vec::new();
        for seg in &segments {
            if let Segment::Slot(p) = seg {
                if !placeholders.contains(p) {
                    placeholders.push(*p);
                }
            }
        }
        let mut sorted = placeholders.clone();
        sorted.sort();
        use Placeholder::*;
        let ok = match category {
            StageCategory::BSP => sorted == [Symptom] || sorted == [Symptom1, Symptom2],
            StageCategory::IIQD => sorted == [Symptom],
            StageCategory::LDSD => sorted == [Disease],
            StageCategory::IPSP | StageCategory::INSP => sorted.is_empty(),
        };
        if !ok {
            let expected = match category {
                StageCategory::BSP => "{symptom} or {symptom1} and {symptom2}",
                StageCategory::IIQD => "exactly {symptom}",
                StageCategory::LDSD => "exactly {disease}",
                _ => "no placeholders",
            };
            return Err(Error::Arity(format!(
                "{category} template {text:?} must use {expected}"
            )));
        }
        Ok(Template {
            category,
            text: text.to_string(),
            segments,
            placeholders,
        })
    }

    pub fn category(&self) -> StageCategory {
        self.category
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> &[Placeholder] {
        &self.placeholders
    }

    pub fn arity(&self) -> usize {
        self.placeholders.len()
    }

    /// Substitutes every slot verbatim. Bindings must name exactly this
    /// template's placeholders.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String> {
        for p in &self.placeholders {
            if !bindings.contains_key(p.name()) {
                return Err(Error::Binding(format!(
                    "missing value for {{{}}} in {:?}",
                    p.name(),
                    self.text
                )));
            }
        }
        if let Some(extra) = bindings
            .keys()
            .find(|k| !self.placeholders.iter().any(|p| p.name() == **k))
        {
            return Err(Error::Binding(format!(
                "unexpected binding {{{extra}}} for {:?}",
                self.text
            )));
        }
        let mut out = String::with_capacity(self.text.len() + 32);
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(p) => out.push_str(bindings[p.name()]),
            }
        }
        Ok(out)
    }

    /// Renders an opening complaint for one or more symptom names.
    ///
    /// A one-slot template receives all names joined with " and ". A two-slot
    /// template receives the first name and the rest joined with " and ".
    pub fn render_symptoms(&self, names: &[&str]) -> Result<String> {
        if names.is_empty() {
            return Err(Error::Binding("no symptom names to render".into()));
        }
        let rest;
        let bindings: BTreeMap<&str, &str> = if self.placeholders == [Placeholder::Symptom] {
            rest = names.join(" and ");
            BTreeMap::from([("symptom", rest.as_str())])
        } else {
            if names.len() < 2 {
                return Err(Error::Binding(format!(
                    "{:?} needs two symptom names, got one",
                    self.text
                )));
            }
            rest = names[1..].join(" and ");
            BTreeMap::from([("symptom1", names[0]), ("symptom2", rest.as_str())])
        };
        self.render(&bindings)
    }

    /// Two-slot complaint rewritten for a single symptom by dropping
    /// " and {symptom2}".
    fn single_slot_variant(&self) -> Option<Template> {
        let at = self
            .segments
            .iter()
            .position(|s| *s == Segment::Slot(Placeholder::Symptom2))?;
        let mut segments = self.segments.clone();
        match segments.get_mut(at.checked_sub(1)?) {
            Some(Segment::Literal(lit)) if lit.ends_with(" and ") => {
                lit.truncate(lit.len() - " and ".len());
            }
            _ => return None,
        }
        segments.remove(at);
        let text: String = segments
            .iter()
            .map(|s| match s {
                Segment::Literal(l) => l.clone(),
                Segment::Slot(Placeholder::Symptom1) => "{symptom}".to_string(),
                Segment::Slot(p) => format!("{{{}}}", p.name()),
            })
            .collect();
        Template::parse(self.category, &text).ok()
    }
}

fn parse_segments(text: &str) -> std::result::Result<Vec<Segment>, String> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = text.char_indices();
    while let Some((at, c)) = chars.next() {
        match c {
            '{' => {
                let mut name = String::new();
                let mut closed = false;
                for (_, c) in chars.by_ref() {
                    if c == '}' {
                        closed = true;
                        break;
                    }
                    name.push(c);
                }
                if !closed {
                    return Err(format!("unclosed placeholder at byte {at}"));
                }
                let p = Placeholder::from_name(&name)
                    .ok_or_else(|| format!("unknown placeholder {{{name}}}"))?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(p));
            }
            '}' => return Err(format!("unmatched '}}' at byte {at}")),
            c => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Named collection of templates, at least one per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePack {
    name: String,
    templates: BTreeMap<StageCategory, Vec<Template>>,
}

impl TemplatePack {
    pub fn new(name: impl Into<String>, templates: BTreeMap<StageCategory, Vec<Template>>) -> Result<Self> {
        let name = name.into();
        for category in StageCategory::ALL {
            let list = templates.get(&category).map(Vec::as_slice).unwrap_or_default();
            if list.is_empty() {
                return Err(Error::format(
                    format!("pack {name}"),
                    format!("no {category} templates"),
                ));
            }
            let mut seen = HashSet::new();
            for t in list {
                if t.category != category {
                    return Err(Error::Validation(format!(
                        "{} template {:?} filed under {category}",
                        t.category, t.text
                    )));
                }
                if !seen.insert(t.text.as_str()) {
                    return Err(Error::Validation(format!(
                        "pack {name} repeats {category} template {:?}",
                        t.text
                    )));
                }
            }
        }
        Ok(TemplatePack { name, templates })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn templates(&self, category: StageCategory) -> &[Template] {
        &self.templates[&category]
    }

    /// Serializes into the pack file format.
    pub fn to_json(&self) -> String {
        let mut doc = serde_json::Map::new();
        doc.insert("name".into(), self.name.clone().into());
        for (c, list) in &self.templates {
            doc.insert(
                c.as_str().into(),
                list.iter().map(|t| t.text.clone()).collect::<Vec<_>>().into(),
            );
        }
        serde_json::to_string_pretty(&doc).expect("pack serializes")
    }
}

/// Parses and validates a pack document.
pub fn load_pack(document: &str) -> Result<TemplatePack> {
    let doc: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(document).map_err(|e| json_error("pack", e))?;
    let mut name = "pack".to_string();
    let mut templates = BTreeMap::new();
    for (key, value) in doc {
        if key == "name" {
            name = value
                .as_str()
                .ok_or_else(|| Error::format("pack.name", "expected a string"))?
                .to_string();
            continue;
        }
        let category = StageCategory::from_name(&key)
            .ok_or_else(|| Error::format(format!("pack.{key}"), format!("unknown category {key:?}")))?;
        let texts: Vec<String> = serde_json::from_value(value)
            .map_err(|e| Error::format(format!("pack.{key}"), e.to_string()))?;
        let parsed = texts
            .iter()
            .map(|t| Template::parse(category, t))
            .collect::<Result<Vec<_>>>()?;
        templates.insert(category, parsed);
    }
    TemplatePack::new(name, templates)
}

/// How [`choose`] bent the arity filter when no template matched it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// Two or more symptoms go into a one-slot complaint, joined with " and ".
    JoinedSlots,
    /// A two-slot complaint was rewritten without its second slot.
    DroppedSecondSlot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Choice {
    pub template: Template,
    pub fallback: Option<Fallback>,
}

/// Uniform choice among the pack's templates for `category`, restricted to
/// `required_arity` when given.
///
/// Opening complaints fall back when nothing matches the arity: a two-symptom
/// request may use a one-slot template (names are joined), and a one-symptom
/// request may use a two-slot template with its second slot dropped.
pub fn choose<R: Rng + ?Sized>(
    pack: &TemplatePack,
    category: StageCategory,
    required_arity: Option<usize>,
    rng: &mut R,
) -> Result<Choice> {
    let all = pack.templates(category);
    let eligible: Vec<&Template> = all
        .iter()
        .filter(|t| required_arity.is_none_or(|a| t.arity() == a))
        .collect();
    if !eligible.is_empty() {
        let template = eligible[rng.gen_range(0..eligible.len())].clone();
        return Ok(Choice {
            template,
            fallback: None,
        });
    }

    let no_match = || {
        Error::Selection(format!(
            "pack {} has no {category} template with {} placeholder(s)",
            pack.name,
            required_arity.unwrap_or_default()
        ))
    };
    match (category, required_arity) {
        (StageCategory::BSP, Some(2)) => {
            let single: Vec<&Template> = all.iter().filter(|t| t.arity() == 1).collect();
            if single.is_empty() {
                return Err(no_match());
            }
            Ok(Choice {
                template: single[rng.gen_range(0..single.len())].clone(),
                fallback: Some(Fallback::JoinedSlots),
            })
        }
        (StageCategory::BSP, Some(1)) => {
            let rewritten: Vec<Template> =
                all.iter().filter_map(Template::single_slot_variant).collect();
            if rewritten.is_empty() {
                return Err(no_match());
            }
            let i = rng.gen_range(0..rewritten.len());
            Ok(Choice {
                template: rewritten.into_iter().nth(i).unwrap(),
                fallback: Some(Fallback::DroppedSecondSlot),
            })
        }
        _ => Err(no_match()),
    }
}

/// Arity to request for an opening complaint naming `count` symptoms.
pub fn complaint_arity(count: usize) -> usize {
    count.clamp(1, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::seed;

    fn t(category: StageCategory, text: &str) -> Template {
        Template::parse(category, text).unwrap()
    }

    #[test]
    fn render_worked_examples() {
        let iiqd = t(StageCategory::IIQD, "What about {symptom}?");
        assert_eq!(
            iiqd.render(&BTreeMap::from([("symptom", "Cough")])).unwrap(),
            "What about Cough?"
        );
        let ldsd = t(StageCategory::LDSD, "I believe you are having {disease}.");
        assert_eq!(
            ldsd.render(&BTreeMap::from([("disease", "Rhinitis")])).unwrap(),
            "I believe you are having Rhinitis."
        );
        let ipsp = t(StageCategory::IPSP, "Yes, sometimes.");
        assert_eq!(ipsp.render(&BTreeMap::new()).unwrap(), "Yes, sometimes.");
    }

    #[test]
    fn render_rejects_missing_and_extra_bindings() {
        let iiqd = t(StageCategory::IIQD, "What about {symptom}?");
        let err = iiqd.render(&BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::Binding(ref m) if m.contains("{symptom}")), "{err}");
        let err = iiqd
            .render(&BTreeMap::from([("symptom", "Cough"), ("disease", "Flu")]))
            .unwrap_err();
        assert!(matches!(err, Error::Binding(ref m) if m.contains("{disease}")), "{err}");
    }

    #[test]
    fn render_does_not_rescan_values() {
        let iiqd = t(StageCategory::IIQD, "What about {symptom}?");
        assert_eq!(
            iiqd.render(&BTreeMap::from([("symptom", "{disease}")])).unwrap(),
            "What about {disease}?"
        );
    }

    #[test]
    fn arity_rules_per_stage() {
        assert_eq!(t(StageCategory::BSP, "I have {symptom1} and {symptom2}").arity(), 2);
        assert_eq!(t(StageCategory::BSP, "I feel {symptom}").arity(), 1);
        assert!(matches!(
            Template::parse(StageCategory::IIQD, "Anything else?"),
            Err(Error::Arity(_))
        ));
        assert!(matches!(
            Template::parse(StageCategory::IPSP, "Yes, {symptom}."),
            Err(Error::Arity(_))
        ));
        assert!(matches!(
            Template::parse(StageCategory::BSP, "I have {symptom1}"),
            Err(Error::Arity(_))
        ));
        assert!(matches!(
            Template::parse(StageCategory::LDSD, "You have {illness}."),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Template::parse(StageCategory::LDSD, "You have {disease."),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn bundled_packs_load() {
        for name in bundled::PACK_NAMES {
            let pack = bundled::pack(name).unwrap();
            assert_eq!(pack.name(), name);
            for c in StageCategory::ALL {
                assert!(!pack.templates(c).is_empty());
            }
        }
        let train = bundled::train_pack();
        assert_eq!(train.templates(StageCategory::LDSD).len(), 3);
        assert_eq!(train.templates(StageCategory::BSP).len(), 4);
    }

    #[test]
    fn pack_errors() {
        let missing_ldsd = r#"{"BSP": ["I feel {symptom}"], "IIQD": ["{symptom}?"],
            "IPSP": ["Yes."], "INSP": ["No."]}"#;
        assert!(matches!(load_pack(missing_ldsd), Err(Error::Format { .. })));

        let unknown = r#"{"BSP": ["I feel {symptom}"], "IIQD": ["{symptom}?"],
            "IPSP": ["Yes."], "INSP": ["No."], "LDSD": ["{disease}."], "SMALLTALK": ["Hi"]}"#;
        let err = load_pack(unknown).unwrap_err();
        assert!(matches!(err, Error::Format { ref message, .. } if message.contains("SMALLTALK")));

        let no_slot = r#"{"BSP": ["I feel {symptom}"], "IIQD": ["Anything else?"],
            "IPSP": ["Yes."], "INSP": ["No."], "LDSD": ["{disease}."]}"#;
        assert!(matches!(load_pack(no_slot), Err(Error::Arity(_))));

        let dup = r#"{"BSP": ["I feel {symptom}"], "IIQD": ["{symptom}?"],
            "IPSP": ["Yes.", "Yes."], "INSP": ["No."], "LDSD": ["{disease}."]}"#;
        assert!(matches!(load_pack(dup), Err(Error::Validation(_))));
    }

    #[test]
    fn pack_json_round_trips() {
        let pack = bundled::robust_human_pack();
        assert_eq!(load_pack(&pack.to_json()).unwrap(), pack);
    }

    #[test]
    fn choose_is_reproducible() {
        let pack = bundled::train_pack();
        let a = choose(&pack, StageCategory::IPSP, None, &mut seed::rng(3)).unwrap();
        let b = choose(&pack, StageCategory::IPSP, None, &mut seed::rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(pack.templates(StageCategory::IPSP).contains(&a.template));
    }

    #[test]
    fn two_symptom_complaints_never_use_the_single_slot_template() {
        let pack = bundled::train_pack();
        let mut rng = seed::rng(17);
        for _ in 0..1000 {
            let c = choose(&pack, StageCategory::BSP, Some(2), &mut rng).unwrap();
            assert_eq!(c.template.arity(), 2);
            assert_ne!(c.template.text(), "Recently, I am experiencing {symptom}");
            assert_eq!(c.fallback, None);
        }
    }

    #[test]
    fn robust_pack_joins_two_symptoms_into_one_slot() {
        let pack = bundled::robust_human_pack();
        let c = choose(&pack, StageCategory::BSP, Some(2), &mut seed::rng(1)).unwrap();
        assert_eq!(c.fallback, Some(Fallback::JoinedSlots));
        assert_eq!(c.template.arity(), 1);
        let text = c.template.render_symptoms(&["Chills", "fever"]).unwrap();
        assert!(text.ends_with("Chills and fever"), "{text}");
    }

    #[test]
    fn two_slot_only_pack_drops_the_second_slot() {
        let doc = r#"{"name": "pairs", "BSP": ["Hi Doctor, I am having {symptom1} and {symptom2}"],
            "IIQD": ["{symptom}?"], "IPSP": ["Yes."], "INSP": ["No."], "LDSD": ["{disease}."]}"#;
        let pack = load_pack(doc).unwrap();
        let c = choose(&pack, StageCategory::BSP, Some(1), &mut seed::rng(1)).unwrap();
        assert_eq!(c.fallback, Some(Fallback::DroppedSecondSlot));
        assert_eq!(c.template.text(), "Hi Doctor, I am having {symptom}");
        assert_eq!(
            c.template.render_symptoms(&["Rash"]).unwrap(),
            "Hi Doctor, I am having Rash"
        );
    }

    #[test]
    fn no_eligible_template_is_a_selection_error() {
        let pack = bundled::train_pack();
        let err = choose(&pack, StageCategory::IIQD, Some(2), &mut seed::rng(1)).unwrap_err();
        assert!(matches!(err, Error::Selection(_)));
    }

    #[test]
    fn render_symptoms_handles_three_names() {
        let two = t(StageCategory::BSP, "I have {symptom1} and {symptom2}");
        assert_eq!(
            two.render_symptoms(&["Rash", "Itching", "Dry skin"]).unwrap(),
            "I have Rash and Itching and Dry skin"
        );
        assert!(matches!(two.render_symptoms(&["Rash"]), Err(Error::Binding(_))));
    }
}
