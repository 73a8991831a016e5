//! Declarative package definitions and package collections.
//!
//! A collection is a directory holding `packages/<name>.pkg.json` files and
//! the source blobs they reference under `blobs/<sha256>`:
//!
//! ```json
//! {
//!   "name": "hello",
//!   "version": "1.0",
//!   "source": { "name": "hello.c", "sha256": "3639…b264" },
//!   "recipe": [ { "step": "fetch-source" }, … ],
//!   "inputs": [],
//!   "tunable": false
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::hash::Digest;
use crate::recipe::RecipeStep;

pub const PACKAGE_SUFFIX: &str = ".pkg.json";

/// A named source blob, identified by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRef {
    pub name: String,
    #[serde(with = "digest_hex")]
    pub sha256: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageDef {
    pub name: String,
    pub version: String,
    pub source: SourceRef,
    pub recipe: Vec<RecipeStep>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub tunable: bool,
}

pub fn is_valid_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() || b.is_ascii_digit() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

impl PackageDef {
    /// `name-version`, as used in store paths.
    pub fn label(&self) -> String {
        format!("{}-{}", self.name, self.version)
    }

    /// Checks the invariants that do not need the rest of the collection.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !is_valid_name(&self.name) {
            return Err(ModelError::InvalidName(self.name.clone()));
        }
        if self.version.is_empty() {
            return Err(ModelError::InvalidVersion(self.name.clone()));
        }
        let mut seen = BTreeSet::new();
        for input in &self.inputs {
            if input == &self.name {
                return Err(ModelError::SelfReference(self.name.clone()));
            }
            if !seen.insert(input) {
                return Err(ModelError::DuplicateInput {
                    package: self.name.clone(),
                    input: input.clone(),
                });
            }
        }
        Ok(())
    }
}

/// One revision's worth of packages plus the source blobs they reference.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PackageCollection {
    packages: BTreeMap<String, PackageDef>,
    blobs: BTreeMap<Digest, Arc<Vec<u8>>>,
}

impl PackageCollection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a package together with its source bytes.
    pub fn insert(&mut self, pkg: PackageDef, source: Vec<u8>) -> Result<(), ModelError> {
        pkg.validate()?;
        let actual = Digest::of(&source);
        if actual != pkg.source.sha256 {
            return Err(ModelError::SourceHashMismatch {
                package: pkg.name.clone(),
                expected: pkg.source.sha256,
                actual,
            });
        }
        self.blobs.insert(actual, Arc::new(source));
        self.packages.insert(pkg.name.clone(), pkg);
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, ModelError> {
        let pkg_dir = dir.join("packages");
        let blob_dir = dir.join("blobs");
        let mut files: Vec<PathBuf> = fs::read_dir(&pkg_dir)
            .map_err(|e| ModelError::io(&pkg_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(PACKAGE_SUFFIX))
            .collect();
        files.sort();

        let mut collection = PackageCollection::new();
        for file in files {
            let text = fs::read_to_string(&file).map_err(|e| ModelError::io(&file, e))?;
            let pkg: PackageDef = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
                file: file.clone(),
                message: e.to_string(),
            })?;
            let stem = file
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(PACKAGE_SUFFIX))
                .unwrap_or_default();
            if stem != pkg.name {
                return Err(ModelError::Parse {
                    file: file.clone(),
                    message: format!("file defines package `{}`, expected `{stem}`", pkg.name),
                });
            }
            let blob_path = blob_dir.join(pkg.source.sha256.to_hex());
            let bytes = fs::read(&blob_path).map_err(|_| ModelError::MissingBlob {
                package: pkg.name.clone(),
                sha256: pkg.source.sha256,
            })?;
            collection
                .insert(pkg, bytes)
                .map_err(|e| ModelError::Parse {
                    file: file.clone(),
                    message: e.to_string(),
                })?;
        }
        Ok(collection)
    }

    pub fn get(&self, name: &str) -> Option<&PackageDef> {
        self.packages.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.packages.contains_key(name)
    }

    pub fn packages(&self) -> impl Iterator<Item = &PackageDef> {
        self.packages.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.packages.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    pub fn blob(&self, sha256: &Digest) -> Option<&Arc<Vec<u8>>> {
        self.blobs.get(sha256)
    }

    pub fn resolve(&self, name: &str, wanted_by: &str) -> Result<&PackageDef, ModelError> {
        self.get(name).ok_or_else(|| ModelError::Unresolved {
            missing: name.to_owned(),
            wanted_by: wanted_by.to_owned(),
        })
    }
}

pub(crate) mod digest_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::hash::Digest;

    pub fn serialize<S: Serializer>(d: &Digest, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.to_hex())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn leaf(name: &str, body: &str) -> (PackageDef, Vec<u8>) {
        let bytes = body.as_bytes().to_vec();
        let pkg = PackageDef {
            name: name.into(),
            version: "1.0".into(),
            source: SourceRef {
                name: format!("{name}.c"),
                sha256: Digest::of(&bytes),
            },
            recipe: vec![RecipeStep::FetchSource],
            inputs: vec![],
            tunable: false,
        };
        (pkg, bytes)
    }

    #[test]
    fn names() {
        assert!(is_valid_name("hello"));
        assert!(is_valid_name("0ad"));
        assert!(is_valid_name("python-numpy"));
        assert!(!is_valid_name("-x"));
        assert!(!is_valid_name("Hello"));
        assert!(!is_valid_name(""));
        assert!(!is_valid_name("a_b"));
    }

    #[test]
    fn rejects_self_reference_and_duplicates() {
        let (mut pkg, _) = leaf("a", "x");
        pkg.inputs = vec!["a".into()];
        assert!(matches!(pkg.validate(), Err(ModelError::SelfReference(_))));
        pkg.inputs = vec!["b".into(), "b".into()];
        assert!(matches!(
            pkg.validate(),
            Err(ModelError::DuplicateInput { .. })
        ));
        pkg.inputs.clear();
        pkg.version.clear();
        assert!(matches!(pkg.validate(), Err(ModelError::InvalidVersion(_))));
    }

    #[test]
    fn source_hash_must_match() {
        let (pkg, _) = leaf("a", "x");
        let mut c = PackageCollection::new();
        assert!(matches!(
            c.insert(pkg, b"y".to_vec()),
            Err(ModelError::SourceHashMismatch { .. })
        ));
    }

    #[test]
    fn loads_fixture_revision() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/channel/dc76980cf3cc8552");
        let c = PackageCollection::load_dir(&dir).unwrap();
        assert_eq!(c.len(), 11);
        let bench = c.get("minikernel-bench").unwrap();
        assert!(bench.tunable);
        assert_eq!(bench.inputs, vec!["eigen-mini", "libc-mini"]);
        assert!(c.blob(&bench.source.sha256).is_some());
    }

    #[test]
    fn malformed_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        fs::create_dir_all(tmp.path().join("packages")).unwrap();
        fs::create_dir_all(tmp.path().join("blobs")).unwrap();
        fs::write(tmp.path().join("packages/broken.pkg.json"), "{ not json").unwrap();
        let err = PackageCollection::load_dir(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("broken.pkg.json"), "{err}");
    }
}
