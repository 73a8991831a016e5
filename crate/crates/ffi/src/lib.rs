//! C ABI for multiver.
//!
//! Objects are handed out as opaque pointers and released with the matching
//! `*_free` function. Every fallible call returns an `MvStatus`; on failure
//! `mv_last_error` describes what went wrong on the calling thread. Strings
//! returned through out-parameters are owned by the caller and released
//! with `mv_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use multiver::channel::{self, Channel, ChannelError, Deployment, Manifest};
use multiver::cpu::{self, Lineage};
use multiver::derivation::DEFAULT_SYSTEM;
use multiver::store::{Store, StoreError};
use multiver::transform::parse_transformations;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad input: unknown package, revision or CPU name, malformed manifest.
    InvalidInput = 3,
    /// A build failed; the message names the log file.
    BuildFailed = 4,
    /// File system or other I/O failure.
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

pub struct MvChannel(Channel);

pub struct MvStore(Store);

pub struct MvDeployment(Deployment);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(MvStatus, String);

impl From<ChannelError> for Failure {
    fn from(e: ChannelError) -> Self {
        let status = match &e {
            ChannelError::Io { .. } => MvStatus::Io,
            ChannelError::Store(s) => store_status(s),
            _ => MvStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure(store_status(&e), e.to_string())
    }
}

fn store_status(e: &StoreError) -> MvStatus {
    match e {
        StoreError::Io { .. } => MvStatus::Io,
        StoreError::Precondition(_) | StoreError::Model(_) => MvStatus::InvalidInput,
        _ => MvStatus::BuildFailed,
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure(MvStatus::InvalidInput, e.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MvStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic in multiver");
            MvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MvStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MvStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn str_array(
    p: *const *const c_char,
    len: usize,
    what: &str,
) -> Result<Vec<String>, Failure> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Failure(MvStatus::NullArgument, format!("{what} is null")));
    }
    std::slice::from_raw_parts(p, len)
        .iter()
        .map(|&s| str_arg(s, what).map(str::to_owned))
        .collect()
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(MvStatus::NullArgument, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(MvStatus::NullArgument, format!("{what} is null")))
}

fn c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next multiver call on the same thread.
#[no_mangle]
pub extern "C" fn mv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens the channel archive at `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mv_channel_open(
    path: *const c_char,
    out: *mut *mut MvChannel,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let ch = Channel::open(path)?;
        *out = Box::into_raw(Box::new(MvChannel(ch)));
        Ok(())
    })
}

/// # Safety
/// `ch` must come from `mv_channel_open` (or be null).
#[no_mangle]
pub unsafe extern "C" fn mv_channel_free(ch: *mut MvChannel) {
    if !ch.is_null() {
        drop(Box::from_raw(ch));
    }
}

/// Commit of the named revision (name, full commit or unique prefix).
///
/// # Safety
/// Pointer arguments must be valid; `out` receives a string to free with
/// `mv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn mv_channel_resolve(
    ch: *const MvChannel,
    revision: *const c_char,
    out: *mut *mut c_char,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ch = handle(ch, "channel")?;
        let rev = ch.0.load_revision(str_arg(revision, "revision")?)?;
        *out = c_string(&rev.commit);
        Ok(())
    })
}

/// Opens (creating if needed) the store rooted at `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mv_store_open(path: *const c_char, out: *mut *mut MvStore) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let store = Store::open(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MvStore(store)));
        Ok(())
    })
}

/// # Safety
/// `store` must come from `mv_store_open` (or be null).
#[no_mangle]
pub unsafe extern "C" fn mv_store_free(store: *mut MvStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Detects the micro-architecture described by a `/proc/cpuinfo` dump.
///
/// # Safety
/// `cpuinfo` must be a NUL-terminated string; `out` receives a string to
/// free with `mv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn mv_cpu_detect(cpuinfo: *const c_char, out: *mut *mut c_char) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let flags = cpu::parse_cpu_flags(str_arg(cpuinfo, "cpuinfo")?).map_err(invalid)?;
        let lineage = Lineage::x86_64();
        let m = cpu::detect_microarch(&flags, DEFAULT_SYSTEM, &lineage).map_err(invalid)?;
        *out = c_string(m.name);
        Ok(())
    })
}

/// Whether code tuned for `march` can run on the CPU in `cpuinfo`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mv_cpu_is_compatible(
    march: *const c_char,
    cpuinfo: *const c_char,
    out: *mut bool,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let lineage = Lineage::x86_64();
        let m = cpu::lookup_microarch(str_arg(march, "march")?, &lineage).map_err(invalid)?;
        let flags = cpu::parse_cpu_flags(str_arg(cpuinfo, "cpuinfo")?).map_err(invalid)?;
        *out = cpu::is_compatible(m, &flags);
        Ok(())
    })
}

/// Lowers `specs` at `revision` (null for the latest) with command-line
/// style transformation `options` such as `--tune=skylake`, building the
/// closure when `store` is non-null. `--tune` without a CPU name is
/// rejected: detect the CPU first and pass its name.
///
/// # Safety
/// `specs` and `options` must point to `n_specs` / `n_options` valid
/// strings; `out` receives a deployment to free with `mv_deployment_free`.
#[no_mangle]
pub unsafe extern "C" fn mv_deploy(
    ch: *const MvChannel,
    store: *const MvStore,
    revision: *const c_char,
    specs: *const *const c_char,
    n_specs: usize,
    options: *const *const c_char,
    n_options: usize,
    out: *mut *mut MvDeployment,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ch = handle(ch, "channel")?;
        let specs = str_array(specs, n_specs, "specs")?;
        let options = str_array(options, n_options, "options")?;
        let rev = if revision.is_null() {
            ch.0.load_revision(&ch.0.latest().name)?
        } else {
            ch.0.load_revision(str_arg(revision, "revision")?)?
        };
        let spec = parse_transformations(&options, &Lineage::x86_64()).map_err(invalid)?;
        if spec.has_auto() {
            return Err(invalid("`--tune` needs an explicit CPU name here"));
        }
        let store = store.as_ref().map(|s| &s.0);
        let dep = channel::deploy(&rev, &specs, &spec, store, 1)?;
        *out = Box::into_raw(Box::new(MvDeployment(dep)));
        Ok(())
    })
}

/// Rebuilds what a manifest records into `store`.
///
/// # Safety
/// Pointer arguments must be valid; `out` receives a deployment to free
/// with `mv_deployment_free`.
#[no_mangle]
pub unsafe extern "C" fn mv_replay_manifest(
    ch: *const MvChannel,
    store: *const MvStore,
    manifest: *const c_char,
    out: *mut *mut MvDeployment,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ch = handle(ch, "channel")?;
        let store = handle(store, "store")?;
        let m = Manifest::parse(str_arg(manifest, "manifest")?, &Lineage::x86_64())?;
        let dep = channel::replay_manifest(&m, &ch.0, &store.0, 1)?;
        *out = Box::into_raw(Box::new(MvDeployment(dep)));
        Ok(())
    })
}

/// # Safety
/// `dep` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn mv_deployment_free(dep: *mut MvDeployment) {
    if !dep.is_null() {
        drop(Box::from_raw(dep));
    }
}

/// Number of requested store paths (one per spec).
///
/// # Safety
/// `dep` must be a valid deployment or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn mv_deployment_root_count(dep: *const MvDeployment) -> usize {
    dep.as_ref().map_or(0, |d| d.0.roots.len())
}

/// Store path (`store/<digest>-<name>-<version>/`) of root `index`.
///
/// # Safety
/// `dep` must be valid; `out` receives a string to free with `mv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn mv_deployment_root(
    dep: *const MvDeployment,
    index: usize,
    out: *mut *mut c_char,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dep = handle(dep, "deployment")?;
        let root = dep.0.roots.get(index).ok_or_else(|| {
            invalid(format!(
                "root index {index} out of range ({} roots)",
                dep.0.roots.len()
            ))
        })?;
        *out = c_string(&root.to_string());
        Ok(())
    })
}

/// Canonical manifest text recording how the deployment was obtained.
///
/// # Safety
/// `dep` must be valid; `out` receives a string to free with `mv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn mv_deployment_manifest(
    dep: *const MvDeployment,
    out: *mut *mut c_char,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dep = handle(dep, "deployment")?;
        let text = dep.0.manifest().to_canonical_string()?;
        *out = c_string(&text);
        Ok(())
    })
}
