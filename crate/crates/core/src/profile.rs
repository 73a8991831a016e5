//! Profiles: materialized environments with their provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, Deployment, Manifest};
use crate::cpu::Lineage;
use crate::hash::Digest;
use crate::store::Store;
use crate::transform::{from_records, to_records, TransformationSpec};

pub const PROFILE_FILE: &str = "profile.json";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("profile {} carries no provenance record", .0.display())]
    MissingProvenance(PathBuf),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub channel_commit: String,
    pub specs: Vec<String>,
    pub transformations: TransformationSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileRecord {
    /// Rendered store paths (`store/<digest32>-<label>/`) of the requested packages.
    pub roots: Vec<String>,
    pub provenance: Option<Provenance>,
    /// Search-path style variables for processes run inside the profile.
    pub environment: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceDoc {
    channel_commit: String,
    specs: Vec<String>,
    transformations: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    environment: BTreeMap<String, String>,
    provenance: Option<ProvenanceDoc>,
    roots: Vec<String>,
}

impl ProfileRecord {
    pub fn from_deployment(store: &Store, deployment: &Deployment) -> Self {
        let bins: Vec<String> = deployment
            .roots
            .iter()
            .map(|sp| store.path_of(sp).join("bin"))
            .filter(|p| p.is_dir())
            .map(|p| p.display().to_string())
            .collect();
        let mut environment = BTreeMap::new();
        if !bins.is_empty() {
            environment.insert("PATH".to_owned(), bins.join(":"));
        }
        ProfileRecord {
            roots: deployment.roots.iter().map(|p| p.to_string()).collect(),
            provenance: Some(Provenance {
                channel_commit: deployment.commit.clone(),
                specs: deployment.specs.clone(),
                transformations: deployment.transformations.clone(),
            }),
            environment,
        }
    }

    fn to_doc(&self) -> Result<ProfileDoc, ProfileError> {
        let provenance = match &self.provenance {
            Some(p) => Some(ProvenanceDoc {
                channel_commit: p.channel_commit.clone(),
                specs: p.specs.clone(),
                transformations: to_records(&p.transformations).map_err(ChannelError::from)?,
            }),
            None => None,
        };
        Ok(ProfileDoc {
            environment: self.environment.clone(),
            provenance,
            roots: self.roots.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String, ProfileError> {
        let mut s = serde_json::to_string_pretty(&self.to_doc()?).expect("serializable");
        s.push('\n');
        Ok(s)
    }

    /// Directory name derived from the record's content.
    pub fn default_dir(&self, store: &Store) -> Result<PathBuf, ProfileError> {
        let digest = Digest::of(self.to_json()?.as_bytes());
        Ok(store
            .root()
            .join("var/profiles")
            .join(digest.store_digest()))
    }

    /// Writes `profile.json` into `dir`.
    pub fn materialize(&self, dir: &Path) -> Result<(), ProfileError> {
        fs::create_dir_all(dir).map_err(|source| ProfileError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let path = dir.join(PROFILE_FILE);
        fs::write(&path, self.to_json()?).map_err(|source| ProfileError::Io { path, source })
    }

    pub fn load(dir: &Path, lineage: &Lineage) -> Result<Self, ProfileError> {
        let path = dir.join(PROFILE_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ProfileError::Io {
            path: path.clone(),
            source,
        })?;
        let doc: ProfileDoc = serde_json::from_str(&text).map_err(|e| ProfileError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let provenance = match doc.provenance {
            Some(p) => Some(Provenance {
                channel_commit: p.channel_commit,
                specs: p.specs,
                transformations: from_records(p.transformations, lineage)
                    .map_err(ChannelError::from)?,
            }),
            None => None,
        };
        Ok(ProfileRecord {
            roots: doc.roots,
            provenance,
            environment: doc.environment,
        })
    }
}

/// Canonical manifest text for a profile.
pub fn export_manifest(profile: &ProfileRecord, dir: &Path) -> Result<String, ProfileError> {
    let p = profile
        .provenance
        .as_ref()
        .ok_or_else(|| ProfileError::MissingProvenance(dir.to_owned()))?;
    let manifest = Manifest::new(
        &p.channel_commit,
        p.specs.clone(),
        p.transformations.clone(),
    );
    Ok(manifest.to_canonical_string()?)
}
