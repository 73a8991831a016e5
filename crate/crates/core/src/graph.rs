//! Lowering packages to derivations and ordering build closures.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use crate::derivation::{
    Builder, Derivation, InputDrv, StorePath, DEFAULT_OUTPUT, DEFAULT_SYSTEM, MARCH_VAR,
};
use crate::error::ModelError;
use crate::hash::Digest;
use crate::package::{PackageCollection, PackageDef};
use crate::recipe::{InstallMapping, RecipeStep, RECIPE_LANGUAGE};

/// Per-node lowering parameters.
///
/// `marches` assigns a micro-architecture name to individual packages; a
/// package absent from the map is lowered without `MARCH`. `replacements`
/// redirects dependency edges, applied in order (each `(old, new)` rewrites
/// whatever the previous ones produced).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSettings {
    pub system: String,
    pub marches: BTreeMap<String, String>,
    pub replacements: Vec<(String, String)>,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            system: DEFAULT_SYSTEM.to_owned(),
            marches: BTreeMap::new(),
            replacements: Vec::new(),
        }
    }
}

impl BuildSettings {
    pub fn march_for(&self, package: &str) -> Option<&str> {
        self.marches.get(package).map(String::as_str)
    }

    /// Where an edge to `name` ends up after all replacements.
    pub fn redirect<'a>(&'a self, name: &'a str) -> &'a str {
        let mut current = name;
        for (old, new) in &self.replacements {
            if current == old {
                current = new;
            }
        }
        current
    }
}

/// Package names reachable from `roots` once edges are redirected.
pub fn reachable_packages(
    collection: &PackageCollection,
    roots: &[String],
    settings: &BuildSettings,
) -> Result<BTreeSet<String>, ModelError> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<(String, String)> = roots
        .iter()
        .rev()
        .map(|r| (r.clone(), "command line".to_owned()))
        .collect();
    while let Some((name, wanted_by)) = stack.pop() {
        if seen.contains(&name) {
            continue;
        }
        let pkg = collection.resolve(&name, &wanted_by)?;
        seen.insert(name.clone());
        for input in pkg.inputs.iter().rev() {
            stack.push((settings.redirect(input).to_owned(), name.clone()));
        }
    }
    Ok(seen)
}

/// Derivations keyed by digest, plus the source blobs needed to build them.
#[derive(Debug, Clone, Default)]
pub struct BuildGraph {
    derivations: BTreeMap<Digest, Derivation>,
    by_name: BTreeMap<String, Digest>,
    store_names: HashMap<String, Digest>,
    sources: BTreeMap<Digest, Arc<Vec<u8>>>,
    roots: Vec<Digest>,
}

impl BuildGraph {
    pub fn get(&self, digest: &Digest) -> Option<&Derivation> {
        self.derivations.get(digest)
    }

    pub fn digest_of(&self, package: &str) -> Option<Digest> {
        self.by_name.get(package).copied()
    }

    pub fn roots(&self) -> &[Digest] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.derivations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.derivations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &Derivation)> {
        self.derivations.iter()
    }

    /// Package name → digest for every node.
    pub fn digests_by_name(&self) -> &BTreeMap<String, Digest> {
        &self.by_name
    }

    pub fn source(&self, sha256: &Digest) -> Option<&Arc<Vec<u8>>> {
        self.sources.get(sha256)
    }

    pub fn store_path(&self, digest: &Digest) -> Option<StorePath> {
        self.get(digest).map(|d| StorePath::new(digest, d.label()))
    }

    pub fn root_store_paths(&self) -> Vec<StorePath> {
        self.roots
            .iter()
            .filter_map(|d| self.store_path(d))
            .collect()
    }

    /// Closure of the graph's roots in build order.
    pub fn build_order(&self) -> Result<Vec<Digest>, ModelError> {
        closure(self, &self.roots)
    }

    /// Adds a derivation, rejecting store path collisions.
    pub fn insert(&mut self, drv: Derivation) -> Result<Digest, ModelError> {
        let digest = drv.digest()?;
        let d32 = digest.store_digest();
        match self.store_names.get(&d32) {
            Some(other) if *other != digest => {
                return Err(ModelError::StorePathCollision {
                    digest32: d32,
                    first: *other,
                    second: digest,
                })
            }
            _ => {}
        }
        self.store_names.insert(d32, digest);
        self.by_name.insert(drv.name.clone(), digest);
        self.derivations.insert(digest, drv);
        Ok(digest)
    }

    pub fn add_source(&mut self, sha256: Digest, bytes: Arc<Vec<u8>>) {
        self.sources.insert(sha256, bytes);
    }

    pub fn add_root(&mut self, digest: Digest) {
        if !self.roots.contains(&digest) {
            self.roots.push(digest);
        }
    }
}

/// Memoizing lowerer: each package is lowered at most once per instance.
pub struct Lowerer<'a> {
    collection: &'a PackageCollection,
    settings: &'a BuildSettings,
    memo: HashMap<String, Digest>,
    in_progress: Vec<String>,
    graph: BuildGraph,
}

impl<'a> Lowerer<'a> {
    pub fn new(collection: &'a PackageCollection, settings: &'a BuildSettings) -> Self {
        Lowerer {
            collection,
            settings,
            memo: HashMap::new(),
            in_progress: Vec::new(),
            graph: BuildGraph::default(),
        }
    }

    pub fn lower_root(&mut self, name: &str) -> Result<Digest, ModelError> {
        let pkg = self.collection.resolve(name, "command line")?;
        let digest = self.lower(pkg)?;
        self.graph.add_root(digest);
        Ok(digest)
    }

    pub fn lower(&mut self, pkg: &PackageDef) -> Result<Digest, ModelError> {
        if let Some(d) = self.memo.get(&pkg.name) {
            return Ok(*d);
        }
        if let Some(pos) = self.in_progress.iter().position(|n| n == &pkg.name) {
            let mut cycle = self.in_progress[pos..].to_vec();
            cycle.push(pkg.name.clone());
            return Err(ModelError::Cycle(cycle));
        }
        self.in_progress.push(pkg.name.clone());

        let mut inputs = Vec::with_capacity(pkg.inputs.len());
        for declared in &pkg.inputs {
            let target = self.settings.redirect(declared);
            let dep = self.collection.resolve(target, &pkg.name)?;
            let digest = self.lower(dep)?;
            inputs.push(InputDrv {
                digest,
                output: DEFAULT_OUTPUT.to_owned(),
            });
        }
        inputs.sort();
        inputs.dedup();

        let mut env = Vec::new();
        if let Some(march) = self.settings.march_for(&pkg.name) {
            env.push((MARCH_VAR.to_owned(), march.to_owned()));
        }

        let steps = pkg
            .recipe
            .iter()
            .map(|s| redirect_selectors(s, self.settings))
            .collect();

        let drv = Derivation {
            name: pkg.name.clone(),
            version: pkg.version.clone(),
            system: self.settings.system.clone(),
            builder: Builder {
                language: RECIPE_LANGUAGE.to_owned(),
                steps,
            },
            inputs,
            env,
            source: pkg.source.clone(),
        };
        let digest = self.graph.insert(drv)?;
        if let Some(blob) = self.collection.blob(&pkg.source.sha256) {
            self.graph.add_source(pkg.source.sha256, blob.clone());
        }
        self.in_progress.pop();
        self.memo.insert(pkg.name.clone(), digest);
        Ok(digest)
    }

    pub fn finish(self) -> BuildGraph {
        self.graph
    }
}

fn redirect_selector(selector: &str, settings: &BuildSettings) -> String {
    match selector.strip_prefix("input:") {
        Some(rest) => {
            let (name, path) = rest.split_once('/').unwrap_or((rest, ""));
            let target = settings.redirect(name);
            if path.is_empty() {
                format!("input:{target}")
            } else {
                format!("input:{target}/{path}")
            }
        }
        None => selector.to_owned(),
    }
}

fn redirect_selectors(step: &RecipeStep, settings: &BuildSettings) -> RecipeStep {
    if settings.replacements.is_empty() {
        return step.clone();
    }
    let map = |s: &String| redirect_selector(s, settings);
    match step {
        RecipeStep::Compile { source, flags } => RecipeStep::Compile {
            source: map(source),
            flags: flags.clone(),
        },
        RecipeStep::Link { objects, artifact } => RecipeStep::Link {
            objects: objects.iter().map(map).collect(),
            artifact: artifact.clone(),
        },
        RecipeStep::Install { mappings } => RecipeStep::Install {
            mappings: mappings
                .iter()
                .map(|m| InstallMapping {
                    from: map(&m.from),
                    to: m.to.clone(),
                })
                .collect(),
        },
        other => other.clone(),
    }
}

/// Lowers one package (and, recursively, its inputs) to a derivation.
pub fn lower_package(
    pkg: &PackageDef,
    collection: &PackageCollection,
    settings: &BuildSettings,
) -> Result<Derivation, ModelError> {
    let mut lowerer = Lowerer::new(collection, settings);
    let digest = lowerer.lower(pkg)?;
    let graph = lowerer.finish();
    Ok(graph
        .get(&digest)
        .cloned()
        .expect("lowered derivation is in its graph"))
}

/// Lowers every root into one shared graph.
pub fn lower_roots(
    collection: &PackageCollection,
    roots: &[String],
    settings: &BuildSettings,
) -> Result<BuildGraph, ModelError> {
    let mut lowerer = Lowerer::new(collection, settings);
    for root in roots {
        lowerer.lower_root(root)?;
    }
    Ok(lowerer.finish())
}

/// Topological order of the closure of `roots`: inputs first, ties broken
/// by ascending digest.
pub fn closure(graph: &BuildGraph, roots: &[Digest]) -> Result<Vec<Digest>, ModelError> {
    let mut members = BTreeSet::new();
    let mut stack: Vec<Digest> = roots.to_vec();
    while let Some(d) = stack.pop() {
        if !members.insert(d) {
            continue;
        }
        let drv = graph.get(&d).ok_or_else(|| ModelError::Unresolved {
            missing: d.to_hex(),
            wanted_by: "closure".into(),
        })?;
        stack.extend(drv.inputs.iter().map(|i| i.digest));
    }

    let mut pending: BTreeMap<Digest, usize> = BTreeMap::new();
    let mut users: BTreeMap<Digest, Vec<Digest>> = BTreeMap::new();
    for d in &members {
        let deps: BTreeSet<Digest> = graph
            .get(d)
            .unwrap()
            .inputs
            .iter()
            .map(|i| i.digest)
            .collect();
        pending.insert(*d, deps.len());
        for dep in deps {
            users.entry(dep).or_default().push(*d);
        }
    }
    let mut ready: BinaryHeap<Reverse<Digest>> = pending
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(d, _)| Reverse(*d))
        .collect();
    let mut order = Vec::with_capacity(members.len());
    while let Some(Reverse(d)) = ready.pop() {
        order.push(d);
        for u in users.get(&d).into_iter().flatten() {
            let n = pending.get_mut(u).unwrap();
            *n -= 1;
            if *n == 0 {
                ready.push(Reverse(*u));
            }
        }
    }
    if order.len() != members.len() {
        let stuck: Vec<String> = pending
            .iter()
            .filter(|(_, n)| **n > 0)
            .filter_map(|(d, _)| graph.get(d).map(|x| x.name.clone()))
            .collect();
        return Err(ModelError::Cycle(stuck));
    }
    Ok(order)
}
