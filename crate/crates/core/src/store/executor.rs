//! The deterministic mock toolchain.
//!
//! Recipes run inside a scratch directory that holds only the fetched source
//! and copies of the declared inputs under `inputs/<digest32>/`. Every path a
//! step touches goes through [`Sandbox`], which rejects absolute paths, `..`
//! components and references to inputs the derivation does not declare.
//! Nothing here reads the clock, the process environment or the network.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

use crate::cpu::{lanes_for_bits, lookup_microarch, Lineage};
use crate::derivation::{Derivation, MARCH_VAR};
use crate::hash::{Digest, Hasher};
use crate::recipe::RecipeStep;

pub const OBJECT_HEADER: &[u8] = b"MVOBJ1\n";
pub const LINK_HEADER: &[u8] = b"MVLINK1\n";
pub const META_FILE: &str = "META";
const BASELINE_VECTOR_BITS: u32 = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("hermeticity violation: {0}")]
    Hermeticity(String),
    #[error("{0}")]
    Step(String),
}

/// A built output: relative file path → contents and executable bit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutputTree {
    pub files: BTreeMap<String, OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub bytes: Vec<u8>,
    pub executable: bool,
}

impl OutputTree {
    fn insert(&mut self, path: &str, bytes: Vec<u8>) {
        let executable = path.starts_with("bin/");
        self.files
            .insert(path.to_owned(), OutputFile { bytes, executable });
    }
}

/// An input mounted into the sandbox.
#[derive(Debug, Clone)]
pub struct MountedInput {
    pub name: String,
    pub digest: Digest,
}

/// A scratch directory with its declared inputs.
#[derive(Debug)]
pub struct Sandbox {
    root: PathBuf,
    inputs: BTreeMap<String, MountedInput>,
}

fn check_relative(path: &str) -> Result<(), ExecError> {
    let p = Path::new(path);
    if path.is_empty() {
        return Err(ExecError::Hermeticity("empty path".into()));
    }
    for c in p.components() {
        match c {
            Component::Normal(_) => {}
            _ => {
                return Err(ExecError::Hermeticity(format!(
                    "path `{path}` escapes the sandbox"
                )))
            }
        }
    }
    Ok(())
}

impl Sandbox {
    /// `root` must exist; inputs are expected under `root/inputs/<digest32>/`.
    pub fn new(root: PathBuf, inputs: impl IntoIterator<Item = MountedInput>) -> Self {
        Sandbox {
            root,
            inputs: inputs.into_iter().map(|i| (i.name.clone(), i)).collect(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input_dir(root: &Path, digest: &Digest) -> PathBuf {
        root.join("inputs").join(digest.store_digest())
    }

    /// Maps a selector to a file inside the sandbox.
    pub fn resolve(&self, selector: &str) -> Result<PathBuf, ExecError> {
        if let Some(rest) = selector.strip_prefix("input:") {
            let (name, path) = rest.split_once('/').unwrap_or((rest, ""));
            let input = self.inputs.get(name).ok_or_else(|| {
                ExecError::Hermeticity(format!("`{selector}` refers to undeclared input `{name}`"))
            })?;
            check_relative(path)?;
            return Ok(Self::input_dir(&self.root, &input.digest).join(path));
        }
        check_relative(selector)?;
        if selector.starts_with("inputs/") {
            return Err(ExecError::Hermeticity(format!(
                "`{selector}`: inputs are only reachable through `input:` selectors"
            )));
        }
        Ok(self.root.join(selector))
    }

    pub fn read(&self, selector: &str) -> Result<Vec<u8>, ExecError> {
        let path = self.resolve(selector)?;
        fs::read(&path).map_err(|e| ExecError::Step(format!("cannot read `{selector}`: {e}")))
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), ExecError> {
        check_relative(rel)?;
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| ExecError::Step(format!("cannot create `{rel}`: {e}")))?;
        }
        fs::write(&path, bytes).map_err(|e| ExecError::Step(format!("cannot write `{rel}`: {e}")))
    }
}

fn file_name(selector: &str) -> &str {
    selector.rsplit('/').next().unwrap_or(selector)
}

/// `MVOBJ1\n` followed by the hex SHA-256 of
/// `source ‖ (0x00 flag)* for sorted flags ‖ 0x00 MARCH=<name>|none ‖ 0x00 compile-v1`.
pub fn object_record(source: &[u8], flags: &[String], march: Option<&str>) -> Vec<u8> {
    let mut sorted: Vec<&String> = flags.iter().collect();
    sorted.sort();
    let mut h = Hasher::new();
    h.update(source);
    for f in sorted {
        h.update([0u8]).update(f);
    }
    h.update([0u8]);
    match march {
        Some(m) => h.update(format!("MARCH={m}")),
        None => h.update("none"),
    };
    h.update([0u8]).update("compile-v1");
    let mut out = OBJECT_HEADER.to_vec();
    out.extend_from_slice(h.finish().to_hex().as_bytes());
    out.push(b'\n');
    out
}

/// Parsed `META` file of a built package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub march: Option<String>,
    pub vector_bits: u32,
    pub lanes: usize,
    pub inputs: Vec<Digest>,
}

impl Meta {
    pub fn render(&self) -> String {
        let mut s = format!(
            "march={}\nvector-bits={}\nlanes={}\n",
            self.march.as_deref().unwrap_or("none"),
            self.vector_bits,
            self.lanes
        );
        for i in &self.inputs {
            s.push_str(&format!("input={i}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Option<Meta> {
        let mut march = None;
        let mut bits = None;
        let mut lanes = None;
        let mut inputs = Vec::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=')?;
            match k {
                "march" => march = Some((v != "none").then(|| v.to_owned())),
                "vector-bits" => bits = v.parse().ok(),
                "lanes" => lanes = v.parse().ok(),
                "input" => inputs.push(v.parse().ok()?),
                _ => return None,
            }
        }
        Some(Meta {
            march: march?,
            vector_bits: bits?,
            lanes: lanes?,
            inputs,
        })
    }
}

pub struct ExecOutput {
    pub tree: OutputTree,
    pub log: String,
}

/// Runs the recipe of `drv` inside `sandbox`.
///
/// `source` holds the bytes of the derivation's source blob.
pub fn execute_recipe(
    drv: &Derivation,
    sandbox: &Sandbox,
    source: &[u8],
) -> Result<ExecOutput, (ExecError, String)> {
    let mut log = String::new();
    let mut tree = OutputTree::default();
    let env: BTreeMap<&str, &str> = drv
        .env
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let march = env.get(MARCH_VAR).copied();

    for (i, step) in drv.builder.steps.iter().enumerate() {
        log.push_str(&format!("[{i}] {}\n", step.kind()));
        if let Err(e) = run_step(drv, step, sandbox, source, march, &mut tree, &mut log) {
            log.push_str(&format!("error: {e}\n"));
            return Err((e, log));
        }
    }
    Ok(ExecOutput { tree, log })
}

fn run_step(
    drv: &Derivation,
    step: &RecipeStep,
    sandbox: &Sandbox,
    source: &[u8],
    march: Option<&str>,
    tree: &mut OutputTree,
    log: &mut String,
) -> Result<(), ExecError> {
    match step {
        RecipeStep::FetchSource => {
            if Digest::of(source) != drv.source.sha256 {
                return Err(ExecError::Step(format!(
                    "source `{}` does not match {}",
                    drv.source.name, drv.source.sha256
                )));
            }
            let dest = format!("src/{}", drv.source.name);
            sandbox.write(&dest, source)?;
            log.push_str(&format!("    {dest} ({} bytes)\n", source.len()));
        }
        RecipeStep::Compile { source: sel, flags } => {
            let bytes = sandbox.read(sel)?;
            let dest = format!("obj/{}.o", file_name(sel));
            sandbox.write(&dest, &object_record(&bytes, flags, march))?;
            log.push_str(&format!(
                "    cc {} {sel} -> {dest}\n",
                march.map(|m| format!("-march={m}")).unwrap_or_default()
            ));
        }
        RecipeStep::Link { objects, artifact } => {
            check_relative(artifact)?;
            let mut out = LINK_HEADER.to_vec();
            for obj in objects {
                let bytes = sandbox.read(obj)?;
                out.extend_from_slice(format!("{}\n", bytes.len()).as_bytes());
                out.extend_from_slice(&bytes);
            }
            let dest = format!("build/{artifact}");
            sandbox.write(&dest, &out)?;
            log.push_str(&format!("    ld {} objects -> {dest}\n", objects.len()));
        }
        RecipeStep::Install { mappings } => {
            for m in mappings {
                check_relative(&m.to)?;
                let bytes = sandbox.read(&m.from)?;
                tree.insert(&m.to, bytes);
                log.push_str(&format!("    install {} -> {}\n", m.from, m.to));
            }
        }
        RecipeStep::EmitMeta => {
            let vector_bits = match march {
                None => BASELINE_VECTOR_BITS,
                Some(name) => {
                    lookup_microarch(name, &Lineage::x86_64())
                        .map_err(|e| ExecError::Step(e.to_string()))?
                        .vector_bits
                }
            };
            let meta = Meta {
                march: march.map(str::to_owned),
                vector_bits,
                lanes: lanes_for_bits(vector_bits),
                inputs: drv.inputs.iter().map(|i| i.digest).collect(),
            };
            tree.insert(META_FILE, meta.render().into_bytes());
        }
        RecipeStep::WriteText { path, text } => {
            check_relative(path)?;
            let expanded = text
                .replace("@name@", &drv.name)
                .replace("@version@", &drv.version)
                .replace("@march@", march.unwrap_or("none"))
                .replace("@sandbox@", &sandbox.root().display().to_string());
            tree.insert(path, expanded.into_bytes());
        }
    }
    Ok(())
}
