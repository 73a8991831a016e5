//! Deterministic tarballs of store closures.
//!
//! Entries are sorted by path, carry mtime 0, uid/gid 0, no user or group
//! names and only 0644/0755 modes; ustar headers are used so no extended
//! attributes or PAX records are ever emitted.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::derivation::StorePath;
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum PackError {
    #[error("unsupported pack format `{0}`; supported formats: tar")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("writing archive: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackFormat {
    Tar,
}

impl FromStr for PackFormat {
    type Err = PackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tar" => Ok(PackFormat::Tar),
            other => Err(PackError::UnsupportedFormat(other.to_owned())),
        }
    }
}

impl fmt::Display for PackFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("tar")
    }
}

/// Archive entry: a directory (`None`) or file bytes plus executable bit.
type Entry = (String, Option<(Vec<u8>, bool)>);

fn header(
    path: &str,
    kind: tar::EntryType,
    mode: u32,
    size: u64,
) -> Result<tar::Header, PackError> {
    let mut h = tar::Header::new_ustar();
    h.set_path(path)?;
    h.set_entry_type(kind);
    h.set_mode(mode);
    h.set_size(size);
    h.set_mtime(0);
    h.set_uid(0);
    h.set_gid(0);
    h.set_username("")?;
    h.set_groupname("")?;
    h.set_cksum();
    Ok(h)
}

/// Writes the given store paths as a tar archive.
pub fn write_tar<W: Write>(store: &Store, paths: &[StorePath], out: W) -> Result<W, PackError> {
    let mut entries: Vec<Entry> = vec![("store/".into(), None)];
    for sp in paths {
        let base = format!("store/{}/", sp.dir_name());
        entries.push((base.clone(), None));
        let tree = store.read_output(sp)?;
        for (rel, file) in tree.files {
            let mut dir = String::new();
            for part in rel.split('/').collect::<Vec<_>>().split_last().unwrap().1 {
                dir.push_str(part);
                dir.push('/');
                entries.push((format!("{base}{dir}"), None));
            }
            entries.push((format!("{base}{rel}"), Some((file.bytes, file.executable))));
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries.dedup_by(|a, b| a.0 == b.0);

    let mut builder = tar::Builder::new(out);
    for (path, content) in entries {
        match content {
            None => {
                let h = header(&path, tar::EntryType::Directory, 0o755, 0)?;
                builder.append(&h, std::io::empty())?;
            }
            Some((bytes, exec)) => {
                let mode = if exec { 0o755 } else { 0o644 };
                let h = header(&path, tar::EntryType::Regular, mode, bytes.len() as u64)?;
                builder.append(&h, bytes.as_slice())?;
            }
        }
    }
    Ok(builder.into_inner()?)
}

/// Packs `paths` in `format` into an in-memory archive.
pub fn pack(store: &Store, paths: &[StorePath], format: PackFormat) -> Result<Vec<u8>, PackError> {
    match format {
        PackFormat::Tar => write_tar(store, paths, Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_tar_is_supported() {
        assert_eq!("tar".parse::<PackFormat>().unwrap(), PackFormat::Tar);
        let err = "docker".parse::<PackFormat>().unwrap_err();
        assert!(err.to_string().contains("tar"));
    }

    #[test]
    fn empty_pack_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let a = pack(&store, &[], PackFormat::Tar).unwrap();
        let b = pack(&store, &[], PackFormat::Tar).unwrap();
        assert_eq!(a, b);
        let mut ar = tar::Archive::new(a.as_slice());
        let names: Vec<String> = ar
            .entries()
            .unwrap()
            .map(|e| e.unwrap().path().unwrap().display().to_string())
            .collect();
        assert_eq!(names, vec!["store/"]);
    }
}
