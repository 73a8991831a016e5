//! Content-addressed package builds with CPU-tuned variants.
//!
//! Packages from a versioned channel are lowered to derivations, optionally
//! rewritten by transformations such as `--tune`, and built in isolation into
//! a store whose paths are named by the derivation digest.

pub mod channel;
pub mod cli;
pub mod cpu;
pub mod derivation;
pub mod error;
pub mod graph;
pub mod hash;
pub mod kernel;
pub mod pack;
pub mod package;
pub mod profile;
pub mod recipe;
pub mod store;
pub mod transform;

pub use channel::{Channel, ChannelRevision, Deployment, Manifest};
pub use cpu::{FeatureSet, Lineage, Microarchitecture};
pub use derivation::{Derivation, StorePath};
pub use error::{Error, ModelError, Result};
pub use graph::{BuildGraph, BuildSettings};
pub use hash::Digest;
pub use package::{PackageCollection, PackageDef};
pub use store::Store;
pub use transform::{Transformation, TransformationSpec};
