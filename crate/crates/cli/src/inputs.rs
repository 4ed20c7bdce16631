use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ddxbench_core::bundled;
use ddxbench_core::metrics::{default_thresholds, DialogueLevelVariant, MetricConfig};
use ddxbench_core::ontology::{load_cases, load_ontology, CaseRecord, Ontology};
use ddxbench_core::templates::{load_pack, TemplatePack};

pub const BUILTIN_PREFIX: &str = "builtin:";

/// A parsed input plus the exact text it was parsed from.
pub struct Loaded<T> {
    pub value: T,
    pub source: String,
}

pub fn read(path: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {path}"))
}

/// `builtin:mini`, `builtin:clinic12`, or a file.
pub fn ontology(spec: &str) -> Result<Loaded<Ontology>> {
    let source = match spec.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => bundled::ontology_source(name)
            .with_context(|| format!("no bundled ontology {name:?} (try mini or clinic12)"))?
            .to_string(),
        None => read(spec)?,
    };
    let value = load_ontology(&source).with_context(|| format!("loading ontology {spec}"))?;
    Ok(Loaded { value, source })
}

/// A bundled pack name, or a pack file.
pub fn pack(spec: &str) -> Result<Loaded<TemplatePack>> {
    let name = spec.strip_prefix(BUILTIN_PREFIX).unwrap_or(spec);
    let source = match bundled::pack_source(name) {
        Some(doc) => doc.to_string(),
        None if Path::new(spec).exists() => read(spec)?,
        None => bail!(
            "pack {spec:?} is neither a bundled pack ({}) nor a readable file",
            bundled::PACK_NAMES.join(", ")
        ),
    };
    let value = load_pack(&source).with_context(|| format!("loading pack {spec}"))?;
    Ok(Loaded { value, source })
}

/// `builtin:mini` for the worked example cases, or a case file.
pub fn cases(spec: &str, ontology: &Ontology) -> Result<Loaded<Vec<CaseRecord>>> {
    let source = match spec.strip_prefix(BUILTIN_PREFIX) {
        Some("mini") => bundled::MINI_CASES.to_string(),
        Some(name) => bail!("no bundled case set {name:?} (try mini)"),
        None => read(spec)?,
    };
    let value = load_cases(&source, ontology).with_context(|| format!("loading cases {spec}"))?;
    Ok(Loaded { value, source })
}

pub fn thresholds(spec: Option<&str>) -> Result<Vec<f64>> {
    match spec {
        None => Ok(default_thresholds()),
        Some(list) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad threshold {t:?}"))
            })
            .collect(),
    }
}

pub fn metric_config(thresholds_spec: Option<&str>, variant: DialogueLevelVariant) -> Result<MetricConfig> {
    Ok(MetricConfig::new(thresholds(thresholds_spec)?, variant)?)
}
