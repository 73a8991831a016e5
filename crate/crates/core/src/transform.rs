//! Package transformation options as dependency-graph rewrites.
//!
//! `--tune[=CPU]` lowers every tunable package of the closure with `MARCH`
//! set, which gives those nodes (and, through their input digests, every
//! dependent) new store paths while leaving the rest of the graph untouched.
//! `--with-input=OLD=NEW` redirects dependency edges. Options apply in the
//! order given.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpu::{lookup_microarch, CpuError, Lineage, Microarchitecture};
use crate::error::ModelError;
use crate::graph::{lower_roots, reachable_packages, BuildGraph, BuildSettings};
use crate::package::PackageCollection;

pub const AUTO: &str = "auto";

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Cpu(#[from] CpuError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("internal error: `--tune` must be resolved to a CPU name before it is recorded")]
    UnresolvedAuto,
    #[error("malformed transformation record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Transformation {
    /// `None` is the `auto` sentinel.
    Tune(Option<String>),
    WithInput {
        old: String,
        new: String,
    },
}

impl Transformation {
    pub fn kind(&self) -> &'static str {
        match self {
            Transformation::Tune(_) => "tune",
            Transformation::WithInput { .. } => "with-input",
        }
    }

    pub fn argument(&self) -> String {
        match self {
            Transformation::Tune(None) => AUTO.to_owned(),
            Transformation::Tune(Some(name)) => name.clone(),
            Transformation::WithInput { old, new } => format!("{old}={new}"),
        }
    }
}

impl fmt::Display for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transformation::Tune(None) => f.write_str("--tune"),
            other => write!(f, "--{}={}", other.kind(), other.argument()),
        }
    }
}

/// Ordered list of transformations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TransformationSpec {
    pub entries: Vec<Transformation>,
}

impl TransformationSpec {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_auto(&self) -> bool {
        self.entries
            .iter()
            .any(|t| matches!(t, Transformation::Tune(None)))
    }

    /// The march of the last `--tune` option, if any.
    pub fn tune_target(&self) -> Option<&Transformation> {
        self.entries
            .iter()
            .rev()
            .find(|t| matches!(t, Transformation::Tune(_)))
    }

    /// Replaces every `auto` with `march`.
    pub fn resolve_auto(&self, march: &Microarchitecture) -> TransformationSpec {
        TransformationSpec {
            entries: self
                .entries
                .iter()
                .map(|t| match t {
                    Transformation::Tune(None) => Transformation::Tune(Some(march.name.to_owned())),
                    other => other.clone(),
                })
                .collect(),
        }
    }

    pub fn to_options(&self) -> Vec<String> {
        self.entries.iter().map(|t| t.to_string()).collect()
    }
}

/// Parses command-line transformation options, in order.
pub fn parse_transformations<S: AsRef<str>>(
    options: &[S],
    lineage: &Lineage,
) -> Result<TransformationSpec, TransformError> {
    let mut entries = Vec::with_capacity(options.len());
    for opt in options {
        let opt = opt.as_ref();
        if opt == "--tune" {
            entries.push(Transformation::Tune(None));
        } else if let Some(name) = opt.strip_prefix("--tune=") {
            entries.push(parse_tune_argument(name, lineage)?);
        } else if let Some(arg) = opt.strip_prefix("--with-input=") {
            entries.push(parse_with_input(arg)?);
        } else {
            return Err(TransformError::Usage(format!(
                "unknown transformation option `{opt}`"
            )));
        }
    }
    Ok(TransformationSpec { entries })
}

fn parse_tune_argument(name: &str, lineage: &Lineage) -> Result<Transformation, TransformError> {
    if name == AUTO {
        return Ok(Transformation::Tune(None));
    }
    let m = lookup_microarch(name, lineage)?;
    Ok(Transformation::Tune(Some(m.name.to_owned())))
}

fn parse_with_input(arg: &str) -> Result<Transformation, TransformError> {
    match arg.split_once('=') {
        Some((old, new)) if !old.is_empty() && !new.is_empty() => Ok(Transformation::WithInput {
            old: old.to_owned(),
            new: new.to_owned(),
        }),
        _ => Err(TransformError::Usage(format!(
            "--with-input expects OLD=NEW, got `{arg}`"
        ))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    argument: String,
    kind: String,
}

pub(crate) fn to_records(spec: &TransformationSpec) -> Result<serde_json::Value, TransformError> {
    let mut out = Vec::with_capacity(spec.entries.len());
    for t in &spec.entries {
        if matches!(t, Transformation::Tune(None)) {
            return Err(TransformError::UnresolvedAuto);
        }
        out.push(serde_json::json!({ "argument": t.argument(), "kind": t.kind() }));
    }
    Ok(serde_json::Value::Array(out))
}

pub(crate) fn from_records(
    value: serde_json::Value,
    lineage: &Lineage,
) -> Result<TransformationSpec, TransformError> {
    let records: Vec<Record> =
        serde_json::from_value(value).map_err(|e| TransformError::Record(e.to_string()))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let t = match r.kind.as_str() {
            "tune" if r.argument == AUTO => return Err(TransformError::UnresolvedAuto),
            "tune" => parse_tune_argument(&r.argument, lineage)?,
            "with-input" => parse_with_input(&r.argument)?,
            other => return Err(TransformError::Record(format!("unknown kind `{other}`"))),
        };
        entries.push(t);
    }
    Ok(TransformationSpec { entries })
}

/// Canonical JSON array of `{"argument", "kind"}` records.
pub fn serialize_transformations(spec: &TransformationSpec) -> Result<String, TransformError> {
    let value = to_records(spec)?;
    Ok(serde_json::to_string_pretty(&value).expect("json values always serialize"))
}

pub fn parse_transformation_records(
    text: &str,
    lineage: &Lineage,
) -> Result<TransformationSpec, TransformError> {
    let value = serde_json::from_str(text).map_err(|e| TransformError::Record(e.to_string()))?;
    from_records(value, lineage)
}

/// What a rewrite did to the graph, relative to the untransformed one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteReport {
    /// Packages lowered with `MARCH`.
    pub tuned: Vec<String>,
    /// Packages whose digest changed without being tuned themselves.
    pub rehashed: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RewrittenGraph {
    pub graph: BuildGraph,
    pub settings: BuildSettings,
    pub report: RewriteReport,
}

/// Tunes every tunable package in the closure of `roots`.
pub fn apply_tune(
    collection: &PackageCollection,
    roots: &[String],
    march: &Microarchitecture,
) -> Result<RewrittenGraph, TransformError> {
    let spec = TransformationSpec {
        entries: vec![Transformation::Tune(Some(march.name.to_owned()))],
    };
    apply_transformations(collection, roots, &spec, &Lineage::x86_64())
}

/// Redirects every edge pointing at `old` to `new`.
pub fn apply_with_input(
    collection: &PackageCollection,
    roots: &[String],
    old: &str,
    new: &str,
) -> Result<RewrittenGraph, TransformError> {
    let spec = TransformationSpec {
        entries: vec![Transformation::WithInput {
            old: old.to_owned(),
            new: new.to_owned(),
        }],
    };
    apply_transformations(collection, roots, &spec, &Lineage::x86_64())
}

/// Computes lowering settings for `spec`, applying entries left to right.
pub fn rewrite_settings(
    collection: &PackageCollection,
    roots: &[String],
    spec: &TransformationSpec,
    lineage: &Lineage,
) -> Result<(BuildSettings, Vec<String>), TransformError> {
    let mut settings = BuildSettings::default();
    let mut warnings = Vec::new();
    reachable_packages(collection, roots, &settings)?;
    for t in &spec.entries {
        match t {
            Transformation::Tune(None) => return Err(TransformError::UnresolvedAuto),
            Transformation::Tune(Some(name)) => {
                let march = lookup_microarch(name, lineage)?;
                for pkg in reachable_packages(collection, roots, &settings)? {
                    if collection.get(&pkg).is_some_and(|p| p.tunable) {
                        settings.marches.insert(pkg, march.name.to_owned());
                    }
                }
            }
            Transformation::WithInput { old, new } => {
                collection.resolve(new, "--with-input")?;
                if old == new {
                    continue;
                }
                let before = reachable_packages(collection, roots, &settings)?;
                if !before.contains(old) {
                    warnings.push(format!(
                        "--with-input={old}={new}: `{old}` is not in the closure; ignored"
                    ));
                    continue;
                }
                settings.replacements.push((old.clone(), new.clone()));
                let after = reachable_packages(collection, roots, &settings)?;
                settings.marches.retain(|p, _| after.contains(p));
            }
        }
    }
    Ok((settings, warnings))
}

/// Applies a resolved transformation spec and lowers the result.
pub fn apply_transformations(
    collection: &PackageCollection,
    roots: &[String],
    spec: &TransformationSpec,
    lineage: &Lineage,
) -> Result<RewrittenGraph, TransformError> {
    let (settings, warnings) = rewrite_settings(collection, roots, spec, lineage)?;
    let graph = lower_roots(collection, roots, &settings)?;
    let baseline = if spec.is_empty() {
        graph.clone()
    } else {
        lower_roots(collection, roots, &BuildSettings::default())?
    };
    let report = diff_report(&baseline, &graph, &settings, warnings);
    Ok(RewrittenGraph {
        graph,
        settings,
        report,
    })
}

fn diff_report(
    baseline: &BuildGraph,
    rewritten: &BuildGraph,
    settings: &BuildSettings,
    warnings: Vec<String>,
) -> RewriteReport {
    let before: &BTreeMap<String, _> = baseline.digests_by_name();
    let mut tuned = Vec::new();
    let mut rehashed = Vec::new();
    for (name, digest) in rewritten.digests_by_name() {
        if settings.march_for(name).is_some() {
            tuned.push(name.clone());
        } else if before.get(name).is_some_and(|d| d != digest) {
            rehashed.push(name.clone());
        }
    }
    RewriteReport {
        tuned,
        rehashed,
        warnings,
    }
}
