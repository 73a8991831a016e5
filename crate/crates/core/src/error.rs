use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::hash::Digest;

/// Errors from package loading, lowering and canonical serialization.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{}: {message}", file.display())]
    Parse { file: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid package name `{0}`: must match [a-z0-9][a-z0-9-]*")]
    InvalidName(String),
    #[error("package `{0}` has an empty version")]
    InvalidVersion(String),
    #[error("package `{package}` lists input `{input}` more than once")]
    DuplicateInput { package: String, input: String },
    #[error("package `{0}` depends on itself")]
    SelfReference(String),
    #[error("source blob {sha256} of package `{package}` is missing")]
    MissingBlob { package: String, sha256: Digest },
    #[error("source of package `{package}` hashes to {actual}, expected {expected}")]
    SourceHashMismatch {
        package: String,
        expected: Digest,
        actual: Digest,
    },
    #[error("unknown package `{missing}` (required by `{wanted_by}`)")]
    Unresolved { missing: String, wanted_by: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("cannot canonicalize derivation `{name}`: {reason}")]
    Canonical { name: String, reason: String },
    #[error("store path collision: {first} and {second} both render to `{digest32}`")]
    StorePathCollision {
        digest32: String,
        first: Digest,
        second: Digest,
    },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        ModelError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Top-level error for operations that span several subsystems.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cpu(#[from] crate::cpu::CpuError),
    #[error(transparent)]
    Transform(#[from] crate::transform::TransformError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Profile(#[from] crate::profile::ProfileError),
    #[error(transparent)]
    Pack(#[from] crate::pack::PackError),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
