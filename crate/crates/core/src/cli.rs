//! The `multiver` command line.
//!
//! Machine-readable output (store paths, manifests, archives, program
//! output) goes to stdout; progress, the tuning banner and warnings go to
//! stderr. Exit codes: 0 success, 1 user error, 2 build failure,
//! 3 incompatible instruction set.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::Instant;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

use crate::channel::{self, Channel, ChannelError, ChannelRevision, Deployment, Manifest};
use crate::cpu::{self, FeatureSet, Lineage, Microarchitecture};
use crate::derivation::{StorePath, DEFAULT_SYSTEM};
use crate::kernel::{self, Matrix};
use crate::pack::{self, PackError, PackFormat};
use crate::profile::{self, ProfileRecord};
use crate::store::{self, Meta, Store, StoreError, LINK_HEADER, META_FILE};
use crate::transform::{parse_transformations, Transformation, TransformationSpec, AUTO};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_BUILD: i32 = 2;
pub const EXIT_ISA: i32 = 3;

const DEFAULT_CPUINFO: &str = "/proc/cpuinfo";
const DEFAULT_DIM: usize = 240;
const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(
    name = "multiver",
    version,
    about = "Reproducible builds with CPU-tuned package variants"
)]
struct Cli {
    /// Store root [default: $XDG_DATA_HOME/multiver or ~/.local/share/multiver]
    #[arg(long, global = true, env = "MULTIVER_STORE", value_name = "DIR")]
    store: Option<PathBuf>,
    /// Channel archive directory [default: the bundled fixture channel]
    #[arg(long, global = true, env = "MULTIVER_CHANNEL", value_name = "DIR")]
    channel: Option<PathBuf>,
    /// File to read CPU flags from
    #[arg(long, global = true, env = "MULTIVER_CPUINFO", value_name = "FILE")]
    cpuinfo: Option<PathBuf>,
    /// Number of parallel builders
    #[arg(long, short = 'j', global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build packages and print their store paths
    Build(BuildArgs),
    /// Build packages into a profile and run a command inside it
    Env(EnvArgs),
    /// Build packages and write their closure as a tar archive
    Pack(PackArgs),
    /// Run another command against a pinned channel revision
    TimeMachine(TimeMachineArgs),
    /// Show channel revisions and the detected CPU, or a profile's manifest
    Describe(DescribeArgs),
    /// Run a built benchmark artifact
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct Transforms {
    /// Tune tunable packages for CPU; without a value the host CPU is detected
    #[arg(
        long,
        num_args = 0..=1,
        require_equals = true,
        default_missing_value = AUTO,
        value_name = "CPU"
    )]
    tune: Vec<String>,
    /// Replace dependency OLD with package NEW
    #[arg(long = "with-input", value_name = "OLD=NEW")]
    with_input: Vec<String>,
    /// Channel revision: name, commit or unique commit prefix [default: latest]
    #[arg(long)]
    commit: Option<String>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    transforms: Transforms,
    /// Rebuild what a manifest records instead of SPECS
    #[arg(long, short = 'm', value_name = "FILE", conflicts_with_all = ["specs", "tune", "with_input", "commit"])]
    manifest: Option<PathBuf>,
    /// Print every store path of the closure, not just the requested ones
    #[arg(long)]
    closure: bool,
    /// Also rebuild ROUNDS times in fresh stores and compare outputs
    #[arg(long, value_name = "ROUNDS", num_args = 0..=1, require_equals = true, default_missing_value = "2")]
    check: Option<usize>,
    #[arg(value_name = "SPEC", required_unless_present = "manifest")]
    specs: Vec<String>,
}

#[derive(Args, Debug)]
struct EnvArgs {
    #[command(flatten)]
    transforms: Transforms,
    /// Rebuild what a manifest records instead of SPECS
    #[arg(long, short = 'm', value_name = "FILE", conflicts_with_all = ["specs", "tune", "with_input", "commit"])]
    manifest: Option<PathBuf>,
    /// Profile directory [default: derived from the profile contents, under the store]
    #[arg(long, value_name = "DIR")]
    profile: Option<PathBuf>,
    #[arg(value_name = "SPEC", required_unless_present = "manifest")]
    specs: Vec<String>,
    /// Command to run inside the environment
    #[arg(last = true, value_name = "COMMAND")]
    command: Vec<String>,
}

#[derive(Args, Debug)]
struct PackArgs {
    #[command(flatten)]
    transforms: Transforms,
    /// Archive format
    #[arg(long, short = 'f', default_value = "tar")]
    format: String,
    /// Write the archive here instead of stdout
    #[arg(long, short = 'o', value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(value_name = "SPEC", required = true)]
    specs: Vec<String>,
}

#[derive(Args, Debug)]
struct TimeMachineArgs {
    /// Channel revision to pin
    #[arg(long, required = true)]
    commit: String,
    /// The command to run, e.g. `-- build hello`
    #[arg(last = true, required = true, value_name = "COMMAND")]
    args: Vec<String>,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    /// Print the manifest of this profile directory
    #[arg(long, value_name = "DIR")]
    profile: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Store path of the artifact (`store/<digest>-<name>-<version>/`, relative or absolute)
    store_path: String,
    /// Matrix dimensions: N, or M N K
    #[arg(value_name = "DIM", num_args = 0..=3)]
    dims: Vec<usize>,
    /// Seed for the input matrices
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Print the result matrix
    #[arg(long)]
    print_result: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    NotReproducible(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Lib(#[from] crate::Error),
}

fn lib<E: Into<crate::Error>>(e: E) -> CliError {
    CliError::Lib(e.into())
}

fn store_failure(e: &StoreError) -> bool {
    !matches!(e, StoreError::Precondition(_) | StoreError::Model(_))
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USER,
            CliError::Incompatible(_) => EXIT_ISA,
            CliError::NotReproducible(_) => EXIT_BUILD,
            CliError::Lib(e) => {
                let build = match e {
                    crate::Error::Store(s)
                    | crate::Error::Channel(ChannelError::Store(s))
                    | crate::Error::Pack(PackError::Store(s)) => store_failure(s),
                    _ => false,
                };
                if build {
                    EXIT_BUILD
                } else {
                    EXIT_USER
                }
            }
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Runs the CLI on the process arguments.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (cli, matches) = match parse(args) {
        Ok(parsed) => parsed,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let ctx = Context::new(&cli, None);
    match dispatch(&ctx, cli.command, &matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("multiver: error: {e}");
            e.exit_code()
        }
    }
}

fn parse<I, T>(args: I) -> Result<(Cli, ArgMatches), clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = Cli::command().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, matches))
}

struct Context {
    store_dir: PathBuf,
    channel_dir: PathBuf,
    cpuinfo: Option<PathBuf>,
    jobs: usize,
    lineage: Lineage,
    /// Revision fixed by `time-machine`.
    pinned: Option<String>,
}

fn default_store_dir() -> PathBuf {
    let data = std::env::var_os("XDG_DATA_HOME")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".local/share")))
        .unwrap_or_else(|| PathBuf::from("."));
    data.join("multiver")
}

impl Context {
    fn new(cli: &Cli, pinned: Option<String>) -> Self {
        Context {
            store_dir: cli.store.clone().unwrap_or_else(default_store_dir),
            channel_dir: cli
                .channel
                .clone()
                .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/channel")),
            cpuinfo: cli.cpuinfo.clone(),
            jobs: cli
                .jobs
                .filter(|&j| j > 0)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            lineage: Lineage::x86_64(),
            pinned,
        }
    }

    fn store(&self) -> CliResult<Store> {
        Store::open(&self.store_dir).map_err(lib)
    }

    fn channel(&self) -> CliResult<Channel> {
        Channel::open(&self.channel_dir).map_err(lib)
    }

    fn revision(&self, requested: Option<&str>) -> CliResult<ChannelRevision> {
        let requested = match (&self.pinned, requested) {
            (Some(p), Some(r)) if p != r => {
                return Err(CliError::Usage(format!(
                    "`--commit={r}` conflicts with the time-machine revision `{p}`"
                )))
            }
            (Some(p), _) => Some(p.as_str()),
            (None, r) => r,
        };
        let channel = self.channel()?;
        let name = requested.unwrap_or(&channel.latest().name).to_owned();
        channel.load_revision(&name).map_err(lib)
    }

    fn host_features(&self) -> CliResult<(FeatureSet, String)> {
        // An explicit flag file describes an x86_64 CPU whatever the build host is.
        let (path, system) = match &self.cpuinfo {
            Some(p) => (p.clone(), DEFAULT_SYSTEM.to_owned()),
            None => (PathBuf::from(DEFAULT_CPUINFO), cpu::host_system()),
        };
        let text = fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let features = cpu::parse_cpu_flags(&text).map_err(lib)?;
        Ok((features, system))
    }

    fn detect(&self) -> CliResult<&Microarchitecture> {
        let (features, system) = self.host_features()?;
        cpu::detect_microarch(&features, &system, &self.lineage).map_err(lib)
    }
}

fn dispatch(ctx: &Context, command: Command, matches: &ArgMatches) -> CliResult<i32> {
    let sub = matches.subcommand().map(|(_, m)| m);
    match command {
        Command::Build(args) => cmd_build(ctx, args, sub.expect("subcommand matches")),
        Command::Env(args) => cmd_env(ctx, args, sub.expect("subcommand matches")),
        Command::Pack(args) => cmd_pack(ctx, args, sub.expect("subcommand matches")),
        Command::TimeMachine(args) => cmd_time_machine(ctx, args),
        Command::Describe(args) => cmd_describe(ctx, args),
        Command::Run(args) => {
            let store = ctx.store()?;
            let sp = parse_store_path(&args.store_path)?;
            let invocation = KernelInvocation::from_dims(&args.dims, args.seed, args.print_result)?;
            run_artifact(ctx, &store, &sp, &invocation)
        }
    }
}

/// `--tune` and `--with-input` occurrences in command-line order.
fn ordered_options(m: &ArgMatches) -> Vec<String> {
    let mut opts: Vec<(usize, String)> = Vec::new();
    if let (Some(idx), Some(vals)) = (m.indices_of("tune"), m.get_many::<String>("tune")) {
        for (i, v) in idx.zip(vals) {
            let opt = if v == AUTO {
                "--tune".to_owned()
            } else {
                format!("--tune={v}")
            };
            opts.push((i, opt));
        }
    }
    if let (Some(idx), Some(vals)) = (
        m.indices_of("with_input"),
        m.get_many::<String>("with_input"),
    ) {
        for (i, v) in idx.zip(vals) {
            opts.push((i, format!("--with-input={v}")));
        }
    }
    opts.sort_by_key(|(i, _)| *i);
    opts.into_iter().map(|(_, o)| o).collect()
}

fn banner(command: &str, spec: &TransformationSpec) {
    if let Some(Transformation::Tune(Some(name))) = spec.tune_target() {
        eprintln!("multiver {command}: tuning for CPU {name}");
    }
}

/// Parses transformations, resolving `auto` against the host exactly once.
fn resolve_transforms(ctx: &Context, m: &ArgMatches) -> CliResult<TransformationSpec> {
    let spec = parse_transformations(&ordered_options(m), &ctx.lineage).map_err(lib)?;
    if spec.has_auto() {
        let march = ctx.detect()?;
        Ok(spec.resolve_auto(march))
    } else {
        Ok(spec)
    }
}

fn report_warnings(command: &str, dep: &Deployment) {
    for w in &dep.report.warnings {
        eprintln!("multiver {command}: warning: {w}");
    }
}

fn deploy_specs(
    ctx: &Context,
    command: &str,
    transforms: &Transforms,
    m: &ArgMatches,
    specs: &[String],
    store: &Store,
) -> CliResult<Deployment> {
    let spec = resolve_transforms(ctx, m)?;
    let revision = ctx.revision(transforms.commit.as_deref())?;
    banner(command, &spec);
    let dep = channel::deploy(&revision, specs, &spec, Some(store), ctx.jobs).map_err(lib)?;
    report_warnings(command, &dep);
    Ok(dep)
}

fn replay(ctx: &Context, command: &str, file: &Path, store: &Store) -> CliResult<Deployment> {
    let text = fs::read_to_string(file).map_err(|source| CliError::Io {
        path: file.to_owned(),
        source,
    })?;
    let manifest = Manifest::parse(&text, &ctx.lineage).map_err(lib)?;
    if let Some(p) = &ctx.pinned {
        return Err(CliError::Usage(format!(
            "manifest {} records its own revision; it cannot be combined with time-machine `{p}`",
            file.display()
        )));
    }
    banner(command, &manifest.transformations);
    let dep = channel::replay_manifest(&manifest, &ctx.channel()?, store, ctx.jobs).map_err(lib)?;
    report_warnings(command, &dep);
    Ok(dep)
}

fn cmd_build(ctx: &Context, args: BuildArgs, m: &ArgMatches) -> CliResult<i32> {
    let store = ctx.store()?;
    let dep = match &args.manifest {
        Some(file) => replay(ctx, "build", file, &store)?,
        None => deploy_specs(ctx, "build", &args.transforms, m, &args.specs, &store)?,
    };
    if let Some(rounds) = args.check {
        for digest in dep.graph.roots() {
            let report = store::verify_reproducibility(&dep.graph, digest, rounds).map_err(lib)?;
            match report.mismatch {
                None => eprintln!(
                    "multiver build: {} is reproducible ({} rounds)",
                    report.store_path, report.rounds
                ),
                Some(mm) => {
                    return Err(CliError::NotReproducible(format!(
                        "{} is not reproducible: round {} differs in `{}` at byte {}",
                        report.store_path, mm.round, mm.file, mm.offset
                    )))
                }
            }
        }
    }
    let paths = if args.closure {
        dep.closure_paths().map_err(lib)?
    } else {
        dep.roots.clone()
    };
    let mut out = io::stdout().lock();
    for p in paths {
        writeln!(out, "{p}").map_err(stdout_err)?;
    }
    Ok(EXIT_OK)
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn cmd_env(ctx: &Context, args: EnvArgs, m: &ArgMatches) -> CliResult<i32> {
    let store = ctx.store()?;
    let dep = match &args.manifest {
        Some(file) => replay(ctx, "env", file, &store)?,
        None => deploy_specs(ctx, "env", &args.transforms, m, &args.specs, &store)?,
    };
    let profile = ProfileRecord::from_deployment(&store, &dep);
    let dir = match args.profile {
        Some(d) => d,
        None => profile.default_dir(&store).map_err(lib)?,
    };
    profile.materialize(&dir).map_err(lib)?;

    let Some((program, rest)) = args.command.split_first() else {
        println!("{}", dir.display());
        return Ok(EXIT_OK);
    };
    for root in &dep.roots {
        let candidate = store.path_of(root).join("bin").join(program);
        if !candidate.is_file() {
            continue;
        }
        let head = fs::read(&candidate).map_err(|source| CliError::Io {
            path: candidate.clone(),
            source,
        })?;
        if head.starts_with(LINK_HEADER) {
            let invocation = KernelInvocation::from_args(rest)?;
            return run_artifact(ctx, &store, root, &invocation);
        }
    }

    let mut search = profile.environment.get("PATH").cloned().unwrap_or_default();
    if let Some(old) = std::env::var_os("PATH") {
        if !search.is_empty() {
            search.push(':');
        }
        search.push_str(&old.to_string_lossy());
    }
    let status = Process::new(program)
        .args(rest)
        .env("PATH", search)
        .env("MULTIVER_PROFILE", &dir)
        .status()
        .map_err(|e| CliError::Usage(format!("cannot run `{program}`: {e}")))?;
    Ok(status.code().unwrap_or(EXIT_USER))
}

fn cmd_pack(ctx: &Context, args: PackArgs, m: &ArgMatches) -> CliResult<i32> {
    let format: PackFormat = args.format.parse().map_err(lib)?;
    let store = ctx.store()?;
    let dep = deploy_specs(ctx, "pack", &args.transforms, m, &args.specs, &store)?;
    if let Some(Transformation::Tune(Some(name))) = dep.transformations.tune_target() {
        if name != ctx.lineage.baseline().name {
            eprintln!(
                "multiver pack: warning: the archive contains code tuned for {name} \
                 and will not run on CPUs that lack its instruction set extensions"
            );
        }
    }
    let paths = dep.closure_paths().map_err(lib)?;
    let bytes = pack::pack(&store, &paths, format).map_err(lib)?;
    match &args.output {
        Some(file) => {
            fs::write(file, &bytes).map_err(|source| CliError::Io {
                path: file.clone(),
                source,
            })?;
            println!("{}", file.display());
        }
        None => io::stdout().lock().write_all(&bytes).map_err(stdout_err)?,
    }
    Ok(EXIT_OK)
}

fn cmd_time_machine(ctx: &Context, args: TimeMachineArgs) -> CliResult<i32> {
    let argv = std::iter::once("multiver".to_owned()).chain(args.args);
    let (inner, matches) = parse(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(inner.command, Command::TimeMachine(_)) {
        return Err(CliError::Usage("time-machine cannot be nested".into()));
    }
    // Validate the revision before delegating, so errors name it directly.
    ctx.channel()?.load_revision(&args.commit).map_err(lib)?;
    let mut inner_ctx = Context::new(&inner, Some(args.commit));
    if inner.store.is_none() {
        inner_ctx.store_dir = ctx.store_dir.clone();
    }
    if inner.channel.is_none() {
        inner_ctx.channel_dir = ctx.channel_dir.clone();
    }
    if inner.cpuinfo.is_none() {
        inner_ctx.cpuinfo = ctx.cpuinfo.clone();
    }
    if inner.jobs.is_none() {
        inner_ctx.jobs = ctx.jobs;
    }
    dispatch(&inner_ctx, inner.command, &matches)
}

fn cmd_describe(ctx: &Context, args: DescribeArgs) -> CliResult<i32> {
    if let Some(dir) = args.profile {
        let record = ProfileRecord::load(&dir, &ctx.lineage).map_err(lib)?;
        let text = profile::export_manifest(&record, &dir).map_err(lib)?;
        io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(stdout_err)?;
        return Ok(EXIT_OK);
    }
    let channel = ctx.channel()?;
    let latest = channel.latest().commit.clone();
    println!("channel: {}", channel.dir().display());
    for r in channel.revisions() {
        let mark = if r.commit == latest { " (latest)" } else { "" };
        println!("revision {} {}{mark}", r.name, r.commit);
    }
    match ctx.detect() {
        Ok(m) => println!("cpu: {}", m.name),
        Err(e) => println!("cpu: unknown ({e})"),
    }
    Ok(EXIT_OK)
}

fn parse_store_path(s: &str) -> CliResult<StorePath> {
    s.parse()
        .map_err(|e: crate::derivation::ParseStorePathError| CliError::Usage(e.to_string()))
}

/// Arguments of one benchmark run.
#[derive(Debug, Clone, PartialEq, Eq)]
struct KernelInvocation {
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
    print_result: bool,
}

impl KernelInvocation {
    fn from_dims(dims: &[usize], seed: u64, print_result: bool) -> CliResult<Self> {
        let (m, n, k) = match *dims {
            [] => (DEFAULT_DIM, DEFAULT_DIM, DEFAULT_DIM),
            [d] => (d, d, d),
            [m, n, k] => (m, n, k),
            _ => {
                return Err(CliError::Usage(
                    "expected one dimension N or three dimensions M N K".into(),
                ))
            }
        };
        Ok(KernelInvocation {
            m,
            n,
            k,
            seed,
            print_result,
        })
    }

    /// Parses the artifact's own argument list: `[N | M N K] [--seed=S] [--print-result]`.
    fn from_args(args: &[String]) -> CliResult<Self> {
        let mut dims = Vec::new();
        let mut seed = DEFAULT_SEED;
        let mut print_result = false;
        for a in args {
            if let Some(s) = a.strip_prefix("--seed=") {
                seed = s
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid seed `{s}`")))?;
            } else if a == "--print-result" {
                print_result = true;
            } else {
                dims.push(
                    a.parse()
                        .map_err(|_| CliError::Usage(format!("invalid dimension `{a}`")))?,
                );
            }
        }
        Self::from_dims(&dims, seed, print_result)
    }
}

/// Runs the benchmark interpreter on a built artifact after checking that
/// the host can execute the instruction set it was tuned for.
fn run_artifact(
    ctx: &Context,
    store: &Store,
    sp: &StorePath,
    inv: &KernelInvocation,
) -> CliResult<i32> {
    let dir = store.path_of(sp);
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|source| CliError::Io {
        path: meta_path.clone(),
        source,
    })?;
    let meta = Meta::parse(&text).ok_or_else(|| {
        CliError::Usage(format!(
            "{}: malformed artifact metadata",
            meta_path.display()
        ))
    })?;
    let march = match &meta.march {
        Some(name) => cpu::lookup_microarch(name, &ctx.lineage).map_err(lib)?,
        None => ctx.lineage.baseline(),
    };
    let (host, _) = ctx.host_features()?;
    if !cpu::is_compatible(march, &host) {
        let required: Vec<&str> = march.required.iter().collect();
        let missing = march.required.missing_from(&host.normalized());
        return Err(CliError::Incompatible(format!(
            "{sp} is tuned for {}, which requires CPU features [{}]; this host lacks [{}]",
            march.name,
            required.join(" "),
            missing.join(" ")
        )));
    }

    let a = Matrix::random(inv.m, inv.k, inv.seed);
    let b = Matrix::random(inv.k, inv.n, inv.seed.wrapping_add(1));
    let start = Instant::now();
    let c = kernel::matmul(&a, &b, meta.lanes).map_err(lib)?;
    let secs = start.elapsed().as_secs_f64();
    let rate = 2.0 * (inv.m * inv.n * inv.k) as f64 / secs.max(1e-9) / 1e9;

    let mut out = io::stdout().lock();
    let w = |out: &mut io::StdoutLock, s: String| writeln!(out, "{s}").map_err(stdout_err);
    w(&mut out, format!("{} x {} x {}", inv.m, inv.n, inv.k))?;
    w(&mut out, format!("march: {}", march.name))?;
    w(&mut out, format!("lanes: {}", meta.lanes))?;
    w(&mut out, format!("time: {secs:.6} s"))?;
    w(&mut out, format!("rate: {rate:.3} Gop/s"))?;
    w(&mut out, format!("checksum: {}", c.checksum()))?;
    if inv.print_result {
        for r in 0..c.rows() {
            let row: Vec<String> = (0..c.cols()).map(|j| c.get(r, j).to_string()).collect();
            w(&mut out, row.join(" "))?;
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub_matches(args: &[&str]) -> ArgMatches {
        let argv = std::iter::once("multiver").chain(args.iter().copied());
        let (_, m) = parse(argv).unwrap();
        m.subcommand().unwrap().1.clone()
    }

    #[test]
    fn options_keep_command_line_order() {
        let m = sub_matches(&[
            "build",
            "--with-input=a=b",
            "--tune=skylake",
            "--with-input=c=d",
            "--tune",
            "x",
        ]);
        assert_eq!(
            ordered_options(&m),
            [
                "--with-input=a=b",
                "--tune=skylake",
                "--with-input=c=d",
                "--tune"
            ]
        );
    }

    #[test]
    fn bare_tune_does_not_swallow_the_spec() {
        let argv = ["multiver", "env", "--tune", "minikernel-bench"];
        let (cli, _) = parse(argv).unwrap();
        let Command::Env(args) = cli.command else {
            panic!("expected env")
        };
        assert_eq!(args.transforms.tune, [AUTO]);
        assert_eq!(args.specs, ["minikernel-bench"]);
    }

    #[test]
    fn kernel_arguments() {
        let inv = KernelInvocation::from_args(&["240".into()]).unwrap();
        assert_eq!(
            (inv.m, inv.n, inv.k, inv.seed),
            (240, 240, 240, DEFAULT_SEED)
        );
        let inv =
            KernelInvocation::from_args(&["2".into(), "3".into(), "4".into(), "--seed=9".into()])
                .unwrap();
        assert_eq!((inv.m, inv.n, inv.k, inv.seed), (2, 3, 4, 9));
        assert!(KernelInvocation::from_args(&["1".into(), "2".into()]).is_err());
        assert!(KernelInvocation::from_args(&["big".into()]).is_err());
    }

    #[test]
    fn missing_commit_is_a_usage_error() {
        let err = parse(["multiver", "time-machine", "--", "build", "hello"]).unwrap_err();
        assert!(err.use_stderr());
    }
}
