//! Channel revisions, deployments and manifests.
//!
//! A channel is an archive directory:
//!
//! ```text
//! channel/revisions.json                  [{"commit": "...", "name": "r1"}, ...] oldest first
//! channel/<commit>/packages/*.pkg.json
//! channel/<commit>/blobs/<sha256>
//! ```
//!
//! A commit id is the first 16 hex digits of SHA-256 over the revision tree
//! (every file sorted by relative path, each contributing
//! `<len(path)>:<path><len(bytes)>:<bytes>`), so equal commits always mean
//! byte-identical package files. Loading a revision re-checks this.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpu::Lineage;
use crate::derivation::StorePath;
use crate::error::ModelError;
use crate::graph::BuildGraph;
use crate::hash::Hasher;
use crate::package::PackageCollection;
use crate::store::{Store, StoreError};
use crate::transform::{
    apply_transformations, from_records, to_records, RewriteReport, TransformError,
    TransformationSpec,
};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_SUFFIX: &str = ".manifest.json";
const COMMIT_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("unknown channel revision `{requested}`; available: {}", available.join(", "))]
    UnknownRevision {
        requested: String,
        available: Vec<String>,
    },
    #[error("revision directory {commit} does not match its contents (hashes to {actual})")]
    CommitMismatch { commit: String, actual: String },
    #[error("channel has no revisions")]
    Empty,
    #[error("unsupported manifest format version {found} (supported: {MANIFEST_FORMAT_VERSION})")]
    UnsupportedVersion { found: u64 },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionRef {
    pub commit: String,
    pub name: String,
}

/// An opened channel archive.
#[derive(Debug, Clone)]
pub struct Channel {
    dir: PathBuf,
    revisions: Vec<RevisionRef>,
}

/// An immutable snapshot of the package collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelRevision {
    pub commit: String,
    pub name: Option<String>,
    pub collection: PackageCollection,
}

/// Computes the commit id of a revision directory.
pub fn tree_commit(dir: &Path) -> Result<String, ChannelError> {
    fn collect(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), ChannelError> {
        let rd = fs::read_dir(dir).map_err(|source| ChannelError::Io {
            path: dir.to_owned(),
            source,
        })?;
        for e in rd.filter_map(Result::ok) {
            let p = e.path();
            if p.is_dir() {
                collect(base, &p, out)?;
            } else {
                let rel = p.strip_prefix(base).expect("under base");
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut h = Hasher::new();
    for rel in files {
        let path = dir.join(&rel);
        let bytes = fs::read(&path).map_err(|source| ChannelError::Io { path, source })?;
        h.update(format!("{}:", rel.len()))
            .update(&rel)
            .update(format!("{}:", bytes.len()))
            .update(&bytes);
    }
    let mut hex = h.finish().to_hex();
    hex.truncate(COMMIT_LEN);
    Ok(hex)
}

impl Channel {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ChannelError> {
        let dir = dir.into();
        let index = dir.join("revisions.json");
        let text = fs::read_to_string(&index).map_err(|source| ChannelError::Io {
            path: index.clone(),
            source,
        })?;
        let revisions: Vec<RevisionRef> =
            serde_json::from_str(&text).map_err(|e| ChannelError::Parse {
                path: index.clone(),
                message: e.to_string(),
            })?;
        if revisions.is_empty() {
            return Err(ChannelError::Empty);
        }
        Ok(Channel { dir, revisions })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn revisions(&self) -> &[RevisionRef] {
        &self.revisions
    }

    /// The newest revision.
    pub fn latest(&self) -> &RevisionRef {
        self.revisions.last().expect("channel is non-empty")
    }

    fn find(&self, requested: &str) -> Result<&RevisionRef, ChannelError> {
        let by_name = self.revisions.iter().find(|r| r.name == requested);
        let by_commit = || {
            let hits: Vec<&RevisionRef> = self
                .revisions
                .iter()
                .filter(|r| requested.len() >= 4 && r.commit.starts_with(requested))
                .collect();
            (hits.len() == 1).then(|| hits[0])
        };
        by_name
            .or_else(by_commit)
            .ok_or_else(|| ChannelError::UnknownRevision {
                requested: requested.to_owned(),
                available: self
                    .revisions
                    .iter()
                    .map(|r| format!("{} ({})", r.commit, r.name))
                    .collect(),
            })
    }

    /// Loads a revision by name, full commit or unique commit prefix.
    pub fn load_revision(&self, requested: &str) -> Result<ChannelRevision, ChannelError> {
        let rev = self.find(requested)?;
        let dir = self.dir.join(&rev.commit);
        let actual = tree_commit(&dir)?;
        if actual != rev.commit {
            return Err(ChannelError::CommitMismatch {
                commit: rev.commit.clone(),
                actual,
            });
        }
        let collection = PackageCollection::load_dir(&dir)?;
        Ok(ChannelRevision {
            commit: rev.commit.clone(),
            name: Some(rev.name.clone()),
            collection,
        })
    }
}

/// A replayable record of what was deployed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub format_version: u32,
    pub channel_commit: String,
    pub specs: Vec<String>,
    pub transformations: TransformationSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    channel_commit: String,
    format_version: u64,
    specs: Vec<String>,
    transformations: serde_json::Value,
}

impl Manifest {
    pub fn new(commit: &str, specs: Vec<String>, transformations: TransformationSpec) -> Self {
        Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            channel_commit: commit.to_owned(),
            specs,
            transformations,
        }
    }

    /// Canonical text: sorted keys, two-space indent, LF endings, final newline.
    pub fn to_canonical_string(&self) -> Result<String, ChannelError> {
        let doc = serde_json::json!({
            "channel_commit": self.channel_commit,
            "format_version": self.format_version,
            "specs": self.specs,
            "transformations": to_records(&self.transformations)?,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("json values always serialize");
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str, lineage: &Lineage) -> Result<Self, ChannelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ChannelError::Manifest(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MANIFEST_FORMAT_VERSION) => {}
            Some(found) => return Err(ChannelError::UnsupportedVersion { found }),
            None => return Err(ChannelError::Manifest("missing `format_version`".into())),
        }
        let doc: ManifestDoc =
            serde_json::from_value(value).map_err(|e| ChannelError::Manifest(e.to_string()))?;
        Ok(Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            channel_commit: doc.channel_commit,
            specs: doc.specs,
            transformations: from_records(doc.transformations, lineage)?,
        })
    }
}

/// A built set of packages together with how it was obtained.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub commit: String,
    pub specs: Vec<String>,
    pub transformations: TransformationSpec,
    pub graph: BuildGraph,
    pub roots: Vec<StorePath>,
    pub report: RewriteReport,
}

impl Deployment {
    pub fn manifest(&self) -> Manifest {
        Manifest::new(
            &self.commit,
            self.specs.clone(),
            self.transformations.clone(),
        )
    }

    /// Store paths of the whole closure, in build order.
    pub fn closure_paths(&self) -> Result<Vec<StorePath>, ModelError> {
        Ok(self
            .graph
            .build_order()?
            .iter()
            .filter_map(|d| self.graph.store_path(d))
            .collect())
    }
}

/// Lowers, transforms and (when `store` is given) builds `specs` at `revision`.
pub fn deploy(
    revision: &ChannelRevision,
    specs: &[String],
    transformations: &TransformationSpec,
    store: Option<&Store>,
    jobs: usize,
) -> Result<Deployment, ChannelError> {
    let lineage = Lineage::x86_64();
    let rewritten = apply_transformations(&revision.collection, specs, transformations, &lineage)?;
    let roots = match store {
        Some(store) => store.build_closure(&rewritten.graph, rewritten.graph.roots(), jobs)?,
        None => rewritten.graph.root_store_paths(),
    };
    Ok(Deployment {
        commit: revision.commit.clone(),
        specs: specs.to_vec(),
        transformations: transformations.clone(),
        graph: rewritten.graph,
        roots,
        report: rewritten.report,
    })
}

/// Rebuilds what a manifest records, against its recorded revision.
pub fn replay_manifest(
    manifest: &Manifest,
    channel: &Channel,
    store: &Store,
    jobs: usize,
) -> Result<Deployment, ChannelError> {
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(ChannelError::UnsupportedVersion {
            found: manifest.format_version.into(),
        });
    }
    let revision = channel.load_revision(&manifest.channel_commit)?;
    deploy(
        &revision,
        &manifest.specs,
        &manifest.transformations,
        Some(store),
        jobs,
    )
}
