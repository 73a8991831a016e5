//! Rebuild-and-compare reproducibility checks.

use std::collections::BTreeSet;

use super::{OutputTree, Store, StoreError};
use crate::derivation::StorePath;
use crate::graph::BuildGraph;
use crate::hash::Digest;

/// First difference between two builds of the same derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    /// Index of the round that differed from round 0.
    pub round: usize,
    pub file: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReproReport {
    pub store_path: StorePath,
    pub rounds: usize,
    pub identical: bool,
    pub mismatch: Option<Mismatch>,
}

/// Builds `digest` `rounds` times, each in a fresh throwaway store, and
/// compares the outputs byte for byte.
pub fn verify_reproducibility(
    graph: &BuildGraph,
    digest: &Digest,
    rounds: usize,
) -> Result<ReproReport, StoreError> {
    if rounds < 2 {
        return Err(StoreError::Precondition(format!(
            "reproducibility check needs at least 2 rounds, got {rounds}"
        )));
    }
    let store_path = graph
        .store_path(digest)
        .ok_or(StoreError::UnknownDerivation(*digest))?;

    let mut reference: Option<OutputTree> = None;
    let mut mismatch = None;
    for round in 0..rounds {
        let root = tempfile::Builder::new()
            .prefix("multiver-check-")
            .tempdir()
            .map_err(|e| StoreError::Io {
                path: std::env::temp_dir(),
                source: e,
            })?;
        let store = Store::open(root.path())?;
        let sp = store.ensure_built(graph, digest)?;
        let tree = store.read_output(&sp)?;
        match &reference {
            None => reference = Some(tree),
            Some(first) if mismatch.is_none() => {
                mismatch = first_difference(first, &tree).map(|(file, offset)| Mismatch {
                    round,
                    file,
                    offset,
                });
            }
            Some(_) => {}
        }
    }
    Ok(ReproReport {
        store_path,
        rounds,
        identical: mismatch.is_none(),
        mismatch,
    })
}

/// First differing file (in path order) and byte offset; a file missing on
/// one side differs at offset 0, a differing mode at offset 0.
pub fn first_difference(a: &OutputTree, b: &OutputTree) -> Option<(String, usize)> {
    let names: BTreeSet<&String> = a.files.keys().chain(b.files.keys()).collect();
    for name in names {
        match (a.files.get(name), b.files.get(name)) {
            (Some(x), Some(y)) => {
                if x.executable != y.executable {
                    return Some((name.clone(), 0));
                }
                if x.bytes != y.bytes {
                    let offset = x
                        .bytes
                        .iter()
                        .zip(&y.bytes)
                        .position(|(p, q)| p != q)
                        .unwrap_or_else(|| x.bytes.len().min(y.bytes.len()));
                    return Some((name.clone(), offset));
                }
            }
            _ => return Some((name.clone(), 0)),
        }
    }
    None
}
