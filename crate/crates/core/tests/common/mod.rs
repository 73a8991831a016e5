#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use multiver::channel::Channel;
use multiver::package::PackageCollection;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn channel() -> Channel {
    Channel::open(fixtures().join("channel")).unwrap()
}

pub fn revision(name: &str) -> PackageCollection {
    channel().load_revision(name).unwrap().collection
}

pub fn cpuinfo(file: &str) -> PathBuf {
    fixtures().join("cpuinfo").join(file)
}

pub fn golden() -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/digests.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn all_names(c: &PackageCollection) -> Vec<String> {
    c.names().map(str::to_owned).collect()
}

/// Runs the CLI binary against `store` with the skylake cpuinfo fixture.
pub fn cli(store: &Path, args: &[&str]) -> Output {
    cli_with_cpu(store, "skylake-i7.cpuinfo", args)
}

pub fn cli_with_cpu(store: &Path, cpu: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiver"))
        .env_remove("MULTIVER_STORE")
        .env_remove("MULTIVER_CHANNEL")
        .env_remove("MULTIVER_CPUINFO")
        .arg("--store")
        .arg(store)
        .arg("--cpuinfo")
        .arg(cpuinfo(cpu))
        .args(args)
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Packages that are tunable or (transitively) depend on one, computed
/// straight from the package definitions.
pub fn tunable_and_dependents(c: &PackageCollection) -> BTreeSet<String> {
    let deps: BTreeMap<&str, Vec<&str>> = c
        .packages()
        .map(|p| {
            (
                p.name.as_str(),
                p.inputs.iter().map(String::as_str).collect(),
            )
        })
        .collect();
    let mut set: BTreeSet<String> = c
        .packages()
        .filter(|p| p.tunable)
        .map(|p| p.name.clone())
        .collect();
    loop {
        let before = set.len();
        for (name, inputs) in &deps {
            if inputs.iter().any(|i| set.contains(*i)) {
                set.insert((*name).to_owned());
            }
        }
        if set.len() == before {
            return set;
        }
    }
}
