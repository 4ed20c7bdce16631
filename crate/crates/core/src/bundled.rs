//! Data files shipped with the crate: the two template packs, a small
//! ontology with its example cases, and a twelve-disease clinic ontology.

use crate::ontology::{load_cases, load_ontology, CaseRecord, Ontology};
use crate::templates::{load_pack, TemplatePack};

pub const TRAIN_PACK: &str = include_str!("../data/packs/train.json");
pub const ROBUST_HUMAN_PACK: &str = include_str!("../data/packs/robust-human.json");
pub const MINI_ONTOLOGY: &str = include_str!("../data/ontologies/mini.json");
pub const MINI_CASES: &str = include_str!("../data/cases/mini.json");
pub const CLINIC_ONTOLOGY: &str = include_str!("../data/ontologies/clinic12.json");

pub const PACK_NAMES: [&str; 2] = ["train", "robust-human"];

/// Raw document of a bundled pack.
pub fn pack_source(name: &str) -> Option<&'static str> {
    match name {
        "train" => Some(TRAIN_PACK),
        "robust-human" => Some(ROBUST_HUMAN_PACK),
        _ => None,
    }
}

/// Raw document of a bundled ontology.
pub fn ontology_source(name: &str) -> Option<&'static str> {
    match name {
        "mini" => Some(MINI_ONTOLOGY),
        "clinic12" => Some(CLINIC_ONTOLOGY),
        _ => None,
    }
}

pub fn pack(name: &str) -> Option<TemplatePack> {
    pack_source(name).map(|doc| load_pack(doc).expect("bundled pack is valid"))
}

pub fn train_pack() -> TemplatePack {
    pack("train").unwrap()
}

pub fn robust_human_pack() -> TemplatePack {
    pack("robust-human").unwrap()
}

pub fn mini_ontology() -> Ontology {
    load_ontology(MINI_ONTOLOGY).expect("bundled ontology is valid")
}

/// The worked example cases that go with [`mini_ontology`].
pub fn mini_cases(ontology: &Ontology) -> Vec<CaseRecord> {
    load_cases(MINI_CASES, ontology).expect("bundled cases are valid")
}

/// Twelve diseases, each with at least one symptom no other disease has.
pub fn clinic_ontology() -> Ontology {
    load_ontology(CLINIC_ONTOLOGY).expect("bundled ontology is valid")
}
