//! Content-addressed store.
//!
//! Layout under the store root:
//!
//! ```text
//! store/<digest32>-<label>/     build outputs (mtime 0, modes 0644/0755)
//! store/.links/<digest32>.lock  per-path build lock
//! store/.links/<digest32>.drv   canonical derivation that produced the path
//! var/log/<digest32>.log        build logs
//! var/tmp/                      sandboxes and staging directories
//! ```
//!
//! Outputs are staged next to the store and renamed into place, so a failed
//! or interrupted build never leaves an entry behind.

mod executor;
mod scheduler;
mod verify;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant, SystemTime};

use thiserror::Error;

pub use executor::{
    execute_recipe, object_record, ExecError, ExecOutput, Meta, MountedInput, OutputFile,
    OutputTree, Sandbox, LINK_HEADER, META_FILE, OBJECT_HEADER,
};
pub use verify::{verify_reproducibility, Mismatch, ReproReport};

use crate::derivation::{canonical_serialize, Derivation, StorePath};
use crate::error::ModelError;
use crate::graph::BuildGraph;
use crate::hash::Digest;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("build of `{label}` failed: {cause} (log: {})", log_path.display())]
    Build {
        label: String,
        cause: ExecError,
        log_path: PathBuf,
        log: String,
    },
    #[error("store corruption at {}: {message}", path.display())]
    Corruption { path: PathBuf, message: String },
    #[error("derivation {0} is not part of the build graph")]
    UnknownDerivation(Digest),
    #[error("source blob {0} is not available")]
    MissingSource(Digest),
    #[error("{0}")]
    Precondition(String),
    #[error("scheduler: {0}")]
    Scheduler(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Result of one actual build.
#[derive(Debug, Clone)]
pub struct BuildResult {
    pub store_path: StorePath,
    pub tree: OutputTree,
    pub log: String,
    /// Wall time; never stored.
    pub duration: Duration,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    builds: AtomicUsize,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in ["store/.links", "var/log", "var/tmp"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(Store {
            root,
            builds: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute directory of a store path.
    pub fn path_of(&self, sp: &StorePath) -> PathBuf {
        self.root.join("store").join(sp.dir_name())
    }

    pub fn log_path(&self, sp: &StorePath) -> PathBuf {
        self.root
            .join("var/log")
            .join(format!("{}.log", sp.digest32()))
    }

    fn links(&self, sp: &StorePath, ext: &str) -> PathBuf {
        self.root
            .join("store/.links")
            .join(format!("{}.{ext}", sp.digest32()))
    }

    /// Number of recipe executions performed through this handle.
    pub fn builds_executed(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    pub fn contains(&self, sp: &StorePath) -> bool {
        self.path_of(sp).is_dir()
    }

    /// Checks that an existing path was produced by `drv`.
    fn check_existing(&self, sp: &StorePath, canonical: &[u8]) -> Result<(), StoreError> {
        let record = self.links(sp, "drv");
        match fs::read(&record) {
            Ok(bytes) if bytes == canonical => Ok(()),
            Ok(_) => Err(StoreError::Corruption {
                path: self.path_of(sp),
                message: "path was produced by a different derivation (digest collision)".into(),
            }),
            Err(_) => Err(StoreError::Corruption {
                path: self.path_of(sp),
                message: "path has no derivation record".into(),
            }),
        }
    }

    /// Builds `digest` and everything it depends on, one at a time.
    pub fn ensure_built(
        &self,
        graph: &BuildGraph,
        digest: &Digest,
    ) -> Result<StorePath, StoreError> {
        let order = crate::graph::closure(graph, std::slice::from_ref(digest))?;
        let mut last = None;
        for d in order {
            last = Some(self.build_one(graph, &d)?.0);
        }
        last.ok_or(StoreError::UnknownDerivation(*digest))
    }

    /// Builds the closure of `roots` with up to `jobs` parallel builders and
    /// returns the roots' store paths.
    pub fn build_closure(
        &self,
        graph: &BuildGraph,
        roots: &[Digest],
        jobs: usize,
    ) -> Result<Vec<StorePath>, StoreError> {
        let order = crate::graph::closure(graph, roots)?;
        scheduler::run(self, graph, &order, jobs.max(1))?;
        roots
            .iter()
            .map(|d| graph.store_path(d).ok_or(StoreError::UnknownDerivation(*d)))
            .collect()
    }

    /// Builds a single derivation whose inputs must already be present.
    /// Returns the path and whether a build actually ran.
    pub(crate) fn build_one(
        &self,
        graph: &BuildGraph,
        digest: &Digest,
    ) -> Result<(StorePath, Option<BuildResult>), StoreError> {
        let drv = graph
            .get(digest)
            .ok_or(StoreError::UnknownDerivation(*digest))?;
        let sp = StorePath::new(digest, drv.label());
        let canonical = canonical_serialize(drv)?;
        if self.contains(&sp) {
            self.check_existing(&sp, &canonical)?;
            return Ok((sp, None));
        }
        for input in &drv.inputs {
            let ip = graph
                .store_path(&input.digest)
                .ok_or(StoreError::UnknownDerivation(input.digest))?;
            if !self.contains(&ip) {
                return Err(StoreError::Scheduler(format!(
                    "{} started before its input {ip} was built",
                    drv.label()
                )));
            }
        }

        let lock_path = self.links(&sp, "lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        lock.lock().map_err(io_err(&lock_path))?;
        if self.contains(&sp) {
            self.check_existing(&sp, &canonical)?;
            return Ok((sp, None));
        }
        let result = self.run_build(graph, drv, &sp, &canonical);
        drop(lock);
        result.map(|r| (sp, Some(r)))
    }

    fn run_build(
        &self,
        graph: &BuildGraph,
        drv: &Derivation,
        sp: &StorePath,
        canonical: &[u8],
    ) -> Result<BuildResult, StoreError> {
        let started = Instant::now();
        self.builds.fetch_add(1, Ordering::SeqCst);
        let tmp = self.root.join("var/tmp");
        let scratch = tempfile::Builder::new()
            .prefix(&format!("build-{}-", sp.digest32()))
            .tempdir_in(&tmp)
            .map_err(io_err(&tmp))?;

        let mut mounts = Vec::with_capacity(drv.inputs.len());
        for input in &drv.inputs {
            let dep = graph
                .get(&input.digest)
                .ok_or(StoreError::UnknownDerivation(input.digest))?;
            let dep_path = StorePath::new(&input.digest, dep.label());
            let dest = Sandbox::input_dir(scratch.path(), &input.digest);
            copy_tree(&self.path_of(&dep_path), &dest)?;
            mounts.push(MountedInput {
                name: dep.name.clone(),
                digest: input.digest,
            });
        }
        let sandbox = Sandbox::new(scratch.path().to_owned(), mounts);
        let source = graph
            .source(&drv.source.sha256)
            .ok_or(StoreError::MissingSource(drv.source.sha256))?;

        let log_path = self.log_path(sp);
        let outcome = execute_recipe(drv, &sandbox, source);
        let (out, log) = match outcome {
            Ok(out) => {
                let log = out.log.clone();
                (out, log)
            }
            Err((cause, log)) => {
                fs::write(&log_path, &log).map_err(io_err(&log_path))?;
                return Err(StoreError::Build {
                    label: drv.label(),
                    cause,
                    log_path,
                    log,
                });
            }
        };
        fs::write(&log_path, &log).map_err(io_err(&log_path))?;

        let staging = tempfile::Builder::new()
            .prefix(&format!("stage-{}-", sp.digest32()))
            .tempdir_in(&tmp)
            .map_err(io_err(&tmp))?;
        let staged = staging.path().join("out");
        write_tree(&staged, &out.tree)?;

        let record = self.links(sp, "drv");
        fs::write(&record, canonical).map_err(io_err(&record))?;
        let dest = self.path_of(sp);
        if let Err(e) = fs::rename(&staged, &dest) {
            if dest.is_dir() {
                if read_tree(&dest)? != out.tree {
                    return Err(StoreError::Corruption {
                        path: dest,
                        message: "existing path has different contents".into(),
                    });
                }
            } else {
                return Err(StoreError::Io {
                    path: dest,
                    source: e,
                });
            }
        }
        Ok(BuildResult {
            store_path: sp.clone(),
            tree: out.tree,
            log: out.log,
            duration: started.elapsed(),
        })
    }

    /// Reads back the output tree of a store path.
    pub fn read_output(&self, sp: &StorePath) -> Result<OutputTree, StoreError> {
        read_tree(&self.path_of(sp))
    }
}

fn set_mode(path: &Path, executable: bool, is_dir: bool) -> io::Result<()> {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = if executable || is_dir { 0o755 } else { 0o644 };
        fs::set_permissions(path, fs::Permissions::from_mode(mode))?;
    }
    #[cfg(not(unix))]
    {
        let _ = (path, executable, is_dir);
    }
    Ok(())
}

fn zero_mtime(path: &Path) -> io::Result<()> {
    File::open(path)?.set_modified(SystemTime::UNIX_EPOCH)
}

/// Writes `tree` under `dir` with normalized metadata.
fn write_tree(dir: &Path, tree: &OutputTree) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut dirs = vec![dir.to_owned()];
    for (rel, file) in &tree.files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
            let mut p = parent.to_owned();
            while p.starts_with(dir) && p != dir {
                dirs.push(p.clone());
                p.pop();
            }
        }
        fs::write(&path, &file.bytes).map_err(io_err(&path))?;
        set_mode(&path, file.executable, false).map_err(io_err(&path))?;
        zero_mtime(&path).map_err(io_err(&path))?;
    }
    // deepest first so that children do not bump their parent's mtime again
    dirs.sort_by_key(|d| std::cmp::Reverse(d.components().count()));
    dirs.dedup();
    for d in dirs {
        set_mode(&d, false, true).map_err(io_err(&d))?;
        zero_mtime(&d).map_err(io_err(&d))?;
    }
    Ok(())
}

/// Loads a directory into an [`OutputTree`].
pub fn read_tree(dir: &Path) -> Result<OutputTree, StoreError> {
    fn walk(
        base: &Path,
        dir: &Path,
        out: &mut BTreeMap<String, OutputFile>,
    ) -> Result<(), StoreError> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(Result::ok)
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            let ft = e.file_type().map_err(io_err(&path))?;
            if ft.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(base)
                    .expect("walked path is under base")
                    .to_string_lossy()
                    .replace('\\', "/");
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                out.insert(
                    rel,
                    OutputFile {
                        bytes,
                        executable: is_executable(&path),
                    },
                );
            }
        }
        Ok(())
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files)?;
    Ok(OutputTree { files })
}

fn is_executable(path: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::metadata(path)
            .map(|m| m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    }
    #[cfg(not(unix))]
    {
        let _ = path;
        false
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let entry = entry.map_err(io_err(from))?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if entry.file_type().map_err(io_err(&src))?.is_dir() {
            copy_tree(&src, &dst)?;
        } else {
            fs::copy(&src, &dst).map_err(io_err(&src))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{lower_roots, BuildSettings};
    use crate::package::{PackageCollection, PackageDef, SourceRef};
    use crate::recipe::{InstallMapping, RecipeStep};

    fn one_package(recipe: Vec<RecipeStep>) -> BuildGraph {
        let src = b"int main(){}".to_vec();
        let pkg = PackageDef {
            name: "demo".into(),
            version: "1".into(),
            source: SourceRef {
                name: "demo.c".into(),
                sha256: Digest::of(&src),
            },
            recipe,
            inputs: vec![],
            tunable: false,
        };
        let mut c = PackageCollection::new();
        c.insert(pkg, src).unwrap();
        lower_roots(&c, &["demo".into()], &BuildSettings::default()).unwrap()
    }

    fn good_recipe() -> Vec<RecipeStep> {
        vec![
            RecipeStep::FetchSource,
            RecipeStep::Compile {
                source: "src/demo.c".into(),
                flags: vec![],
            },
            RecipeStep::Link {
                objects: vec!["obj/demo.c.o".into()],
                artifact: "demo".into(),
            },
            RecipeStep::Install {
                mappings: vec![InstallMapping {
                    from: "build/demo".into(),
                    to: "bin/demo".into(),
                }],
            },
            RecipeStep::EmitMeta,
        ]
    }

    #[test]
    fn memoizes() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let g = one_package(good_recipe());
        let d = g.roots()[0];
        let a = store.ensure_built(&g, &d).unwrap();
        assert_eq!(store.builds_executed(), 1);
        let b = store.ensure_built(&g, &d).unwrap();
        assert_eq!(a, b);
        assert_eq!(store.builds_executed(), 1);
    }

    #[test]
    fn failed_build_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let mut recipe = good_recipe();
        recipe.insert(
            1,
            RecipeStep::Compile {
                source: "src/missing.c".into(),
                flags: vec![],
            },
        );
        let g = one_package(recipe);
        let d = g.roots()[0];
        let err = store.ensure_built(&g, &d).unwrap_err();
        match &err {
            StoreError::Build { log, log_path, .. } => {
                assert!(log.contains("missing.c"));
                assert!(log_path.exists());
            }
            other => panic!("{other}"),
        }
        let sp = g.store_path(&d).unwrap();
        assert!(!store.contains(&sp));
        let leftovers: Vec<_> = fs::read_dir(tmp.path().join("store"))
            .unwrap()
            .filter_map(Result::ok)
            .filter(|e| e.file_name() != ".links")
            .collect();
        assert!(leftovers.is_empty());
        assert_eq!(fs::read_dir(tmp.path().join("var/tmp")).unwrap().count(), 0);
    }

    #[test]
    fn normalized_metadata() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let g = one_package(good_recipe());
        let sp = store.ensure_built(&g, &g.roots()[0]).unwrap();
        let dir = store.path_of(&sp);
        for rel in ["bin/demo", "META", "bin", ""] {
            let md = fs::metadata(dir.join(rel)).unwrap();
            assert_eq!(md.modified().unwrap(), SystemTime::UNIX_EPOCH, "{rel}");
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = |p: &str| fs::metadata(dir.join(p)).unwrap().permissions().mode() & 0o777;
            assert_eq!(mode("bin/demo"), 0o755);
            assert_eq!(mode("META"), 0o644);
        }
    }

    #[test]
    fn corrupted_record_is_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let g = one_package(good_recipe());
        let sp = store.ensure_built(&g, &g.roots()[0]).unwrap();
        fs::write(store.links(&sp, "drv"), b"someone else").unwrap();
        assert!(matches!(
            store.ensure_built(&g, &g.roots()[0]),
            Err(StoreError::Corruption { .. })
        ));
    }

    #[test]
    fn undeclared_input_is_a_hermeticity_violation() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let mut recipe = good_recipe();
        recipe[2] = RecipeStep::Link {
            objects: vec!["obj/demo.c.o".into(), "input:libc-mini/lib/libc.a".into()],
            artifact: "demo".into(),
        };
        let g = one_package(recipe);
        match store.ensure_built(&g, &g.roots()[0]) {
            Err(StoreError::Build {
                cause: ExecError::Hermeticity(_),
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reading_outside_sandbox_is_a_hermeticity_violation() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let mut recipe = good_recipe();
        recipe[1] = RecipeStep::Compile {
            source: "../../../../etc/hostname".into(),
            flags: vec![],
        };
        let g = one_package(recipe);
        assert!(matches!(
            store.ensure_built(&g, &g.roots()[0]),
            Err(StoreError::Build {
                cause: ExecError::Hermeticity(_),
                ..
            })
        ));
    }
}
