//! Derivations, their canonical encoding and store paths.
//!
//! # Canonical encoding
//!
//! Every string is written as `<decimal byte length>:<bytes>`; lists and
//! records are wrapped in parentheses; nothing else appears outside string
//! payloads. A derivation is encoded as
//!
//! ```text
//! (13:derivation-v1
//!   (4:name <name>) (7:version <version>) (6:system <system>)
//!   (7:builder <language> (<step>*))
//!   (6:inputs ((<digest hex> <output>)*))
//!   (3:env ((<key> <value>)*))
//!   (6:source <file name> <sha256 hex>))
//! ```
//!
//! (whitespace shown for readability only). Steps are encoded as
//! `(<kind> (<field> <value>)*)` with fields in declaration order. Inputs must
//! already be sorted by digest and environment keys sorted; the encoder
//! refuses anything else instead of reordering.

use std::fmt;
use std::str::FromStr;

use crate::error::ModelError;
use crate::hash::{Digest, STORE_DIGEST_LEN};
use crate::package::{is_valid_name, SourceRef};
use crate::recipe::RecipeStep;

pub const DEFAULT_OUTPUT: &str = "out";
pub const DEFAULT_SYSTEM: &str = "x86_64-generic";
pub const MARCH_VAR: &str = "MARCH";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Builder {
    pub language: String,
    pub steps: Vec<RecipeStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputDrv {
    pub digest: Digest,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Derivation {
    pub name: String,
    pub version: String,
    pub system: String,
    pub builder: Builder,
    pub inputs: Vec<InputDrv>,
    pub env: Vec<(String, String)>,
    pub source: SourceRef,
}

impl Derivation {
    pub fn label(&self) -> String {
        format!("{}-{}", self.name, self.version)
    }

    pub fn env_var(&self, key: &str) -> Option<&str> {
        self.env
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn march(&self) -> Option<&str> {
        self.env_var(MARCH_VAR)
    }

    pub fn digest(&self) -> Result<Digest, ModelError> {
        derivation_hash(self)
    }

    pub fn store_path(&self) -> Result<StorePath, ModelError> {
        Ok(StorePath::new(&self.digest()?, self.label()))
    }
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn str(&mut self, s: &str) {
        self.buf.extend_from_slice(s.len().to_string().as_bytes());
        self.buf.push(b':');
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn open(&mut self) {
        self.buf.push(b'(');
    }

    fn close(&mut self) {
        self.buf.push(b')');
    }

    fn field(&mut self, name: &str, value: impl FnOnce(&mut Self)) {
        self.open();
        self.str(name);
        value(self);
        self.close();
    }

    fn list<T>(&mut self, items: &[T], mut item: impl FnMut(&mut Self, &T)) {
        self.open();
        for i in items {
            item(self, i);
        }
        self.close();
    }

    fn strs(&mut self, items: &[String]) {
        self.list(items, |e, s| e.str(s));
    }

    fn step(&mut self, step: &RecipeStep) {
        self.open();
        self.str(step.kind());
        match step {
            RecipeStep::FetchSource | RecipeStep::EmitMeta => {}
            RecipeStep::Compile { source, flags } => {
                self.field("source", |e| e.str(source));
                self.field("flags", |e| e.strs(flags));
            }
            RecipeStep::Link { objects, artifact } => {
                self.field("objects", |e| e.strs(objects));
                self.field("artifact", |e| e.str(artifact));
            }
            RecipeStep::Install { mappings } => {
                self.field("mappings", |e| {
                    e.list(mappings, |e, m| {
                        e.open();
                        e.str(&m.from);
                        e.str(&m.to);
                        e.close();
                    })
                });
            }
            RecipeStep::WriteText { path, text } => {
                self.field("path", |e| e.str(path));
                self.field("text", |e| e.str(text));
            }
        }
        self.close();
    }
}

/// Encodes a derivation in the canonical form described in the module docs.
pub fn canonical_serialize(drv: &Derivation) -> Result<Vec<u8>, ModelError> {
    let fail = |reason: String| ModelError::Canonical {
        name: drv.label(),
        reason,
    };
    if !is_valid_name(&drv.name) {
        return Err(fail(format!("invalid name `{}`", drv.name)));
    }
    if drv.version.is_empty() {
        return Err(fail("empty version".into()));
    }
    for pair in drv.inputs.windows(2) {
        if pair[0] >= pair[1] {
            return Err(fail(format!(
                "inputs not strictly sorted at {}",
                pair[1].digest
            )));
        }
    }
    for pair in drv.env.windows(2) {
        if pair[0].0 >= pair[1].0 {
            return Err(fail(format!(
                "environment keys not strictly sorted at `{}`",
                pair[1].0
            )));
        }
    }

    let mut e = Encoder {
        buf: Vec::with_capacity(512),
    };
    e.open();
    e.str("derivation-v1");
    e.field("name", |e| e.str(&drv.name));
    e.field("version", |e| e.str(&drv.version));
    e.field("system", |e| e.str(&drv.system));
    e.field("builder", |e| {
        e.str(&drv.builder.language);
        e.list(&drv.builder.steps, |e, s| e.step(s));
    });
    e.field("inputs", |e| {
        e.list(&drv.inputs, |e, i| {
            e.open();
            e.str(&i.digest.to_hex());
            e.str(&i.output);
            e.close();
        })
    });
    e.field("env", |e| {
        e.list(&drv.env, |e, (k, v)| {
            e.open();
            e.str(k);
            e.str(v);
            e.close();
        })
    });
    e.field("source", |e| {
        e.str(&drv.source.name);
        e.str(&drv.source.sha256.to_hex());
    });
    e.close();
    Ok(e.buf)
}

/// SHA-256 of the canonical encoding.
pub fn derivation_hash(drv: &Derivation) -> Result<Digest, ModelError> {
    Ok(Digest::of(&canonical_serialize(drv)?))
}

/// `store/<digest32>-<label>/`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StorePath {
    digest32: String,
    label: String,
}

impl StorePath {
    pub fn new(digest: &Digest, label: impl Into<String>) -> Self {
        StorePath {
            digest32: digest.store_digest(),
            label: label.into(),
        }
    }

    pub fn digest32(&self) -> &str {
        &self.digest32
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Directory name inside `store/`.
    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.digest32, self.label)
    }
}

impl fmt::Display for StorePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "store/{}-{}/", self.digest32, self.label)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("not a store path: `{0}`")]
pub struct ParseStorePathError(pub String);

impl FromStr for StorePath {
    type Err = ParseStorePathError;

    /// Accepts `store/<digest32>-<label>/`, with or without the `store/`
    /// prefix and trailing slash, or any path ending in such a component.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseStorePathError(s.to_owned());
        let trimmed = s.trim_end_matches('/');
        let last = trimmed.rsplit('/').next().ok_or_else(err)?;
        if last.len() < STORE_DIGEST_LEN + 2 || !last.is_char_boundary(STORE_DIGEST_LEN) {
            return Err(err());
        }
        let (digest32, rest) = last.split_at(STORE_DIGEST_LEN);
        let label = rest.strip_prefix('-').ok_or_else(err)?;
        let is_b32 = |b: u8| b.is_ascii_lowercase() || (b'2'..=b'7').contains(&b);
        if !digest32.bytes().all(is_b32) || label.is_empty() {
            return Err(err());
        }
        Ok(StorePath {
            digest32: digest32.to_owned(),
            label: label.to_owned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipe::InstallMapping;

    fn sample() -> Derivation {
        Derivation {
            name: "hello".into(),
            version: "1.0".into(),
            system: DEFAULT_SYSTEM.into(),
            builder: Builder {
                language: "mock-toolchain-v1".into(),
                steps: vec![
                    RecipeStep::FetchSource,
                    RecipeStep::Install {
                        mappings: vec![InstallMapping {
                            from: "src/a".into(),
                            to: "bin/a".into(),
                        }],
                    },
                ],
            },
            inputs: vec![],
            env: vec![],
            source: SourceRef {
                name: "hello.c".into(),
                sha256: Digest::of(b"hi"),
            },
        }
    }

    #[test]
    fn empty_inputs_and_env_keep_markers() {
        let bytes = canonical_serialize(&sample()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("(6:inputs())"));
        assert!(text.contains("(3:env())"));
        assert!(!text.contains(' '));
    }

    #[test]
    fn march_changes_encoding() {
        let plain = sample();
        let mut tuned = plain.clone();
        tuned.env.push((MARCH_VAR.into(), "skylake".into()));
        assert_ne!(
            canonical_serialize(&plain).unwrap(),
            canonical_serialize(&tuned).unwrap()
        );
        assert_eq!(tuned.march(), Some("skylake"));
        assert_eq!(plain.march(), None);
    }

    #[test]
    fn refuses_unsorted_env() {
        let mut d = sample();
        d.env = vec![("Z".into(), "1".into()), ("A".into(), "2".into())];
        assert!(matches!(
            canonical_serialize(&d),
            Err(ModelError::Canonical { .. })
        ));
        d.env = vec![("A".into(), "1".into()), ("A".into(), "2".into())];
        assert!(canonical_serialize(&d).is_err());
    }

    #[test]
    fn refuses_unsorted_or_duplicate_inputs() {
        let mut d = sample();
        let (a, b) = (Digest::of(b"a"), Digest::of(b"b"));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let input = |digest| InputDrv {
            digest,
            output: DEFAULT_OUTPUT.into(),
        };
        d.inputs = vec![input(hi), input(lo)];
        assert!(canonical_serialize(&d).is_err());
        d.inputs = vec![input(lo), input(lo)];
        assert!(canonical_serialize(&d).is_err());
        d.inputs = vec![input(lo), input(hi)];
        assert!(canonical_serialize(&d).is_ok());
    }

    #[test]
    fn store_path_rendering() {
        let d = Digest::of(b"abc");
        let p = StorePath::new(&d, "hello-1.0");
        assert_eq!(
            p.to_string(),
            "store/xj4bnp4pahh6uqkbidpf3lrceoyagynd-hello-1.0/"
        );
        assert_eq!(p.to_string().parse::<StorePath>().unwrap(), p);
        assert_eq!(
            "/tmp/x/store/xj4bnp4pahh6uqkbidpf3lrceoyagynd-hello-1.0"
                .parse::<StorePath>()
                .unwrap(),
            p
        );
        assert!("store/short-hello".parse::<StorePath>().is_err());
    }
}
