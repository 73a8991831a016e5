//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

use multiver::channel::Manifest;
use multiver::cpu::{detect_microarch, parse_cpu_flags, Lineage};
use multiver::derivation::DEFAULT_SYSTEM;
use multiver::graph::{lower_roots, BuildSettings};
use multiver::kernel::{matmul, Matrix};
use multiver::store::verify_reproducibility;
use multiver::transform::{apply_transformations, Transformation, TransformationSpec};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run_ok(store: &std::path::Path, args: &[&str]) -> Result<String, String> {
    let o = cli(store, args);
    if o.status.success() {
        Ok(stdout(&o))
    } else {
        Err(format!(
            "`{}` failed: {}",
            args.join(" "),
            stderr(&o).trim()
        ))
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn bit_for_bit() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for rev in ["r1", "r2"] {
        let c = revision(rev);
        let g = lower_roots(&c, &all_names(&c), &BuildSettings::default())
            .map_err(|e| e.to_string())?;
        for name in all_names(&c) {
            let d = g.digest_of(&name).unwrap();
            let report = verify_reproducibility(&g, &d, 2).map_err(|e| e.to_string())?;
            check(
                report.identical,
                format!("{rev}/{name} differs: {:?}", report.mismatch),
            )?;
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    check(checked >= 20, format!("only {checked} packages checked"))?;
    check(
        elapsed < Duration::from_secs(60),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{checked} package builds identical over 2 rounds in {:.2?}",
        elapsed
    ))
}

fn tuning_scope() -> Outcome {
    let mut summary = Vec::new();
    for rev in ["r1", "r2"] {
        let c = revision(rev);
        let names = all_names(&c);
        let tunable = c.packages().filter(|p| p.tunable).count();
        check(
            names.len() >= 10 && tunable >= 3,
            format!("{rev}: fixture too small"),
        )?;
        let lower = |entries: Vec<Transformation>| {
            apply_transformations(
                &c,
                &names,
                &TransformationSpec { entries },
                &Lineage::x86_64(),
            )
            .map(|r| r.graph)
            .map_err(|e| e.to_string())
        };
        let untuned = lower(vec![])?;
        let tuned = lower(vec![Transformation::Tune(Some("skylake".into()))])?;
        let changed: BTreeSet<String> = names
            .iter()
            .filter(|n| untuned.digest_of(n) != tuned.digest_of(n))
            .cloned()
            .collect();
        let expected = tunable_and_dependents(&c);
        check(
            changed == expected,
            format!("{rev}: changed {changed:?}, expected {expected:?}"),
        )?;
        summary.push(format!("{rev}: {}/{} changed", changed.len(), names.len()));
    }
    Ok(summary.join(", "))
}

fn replay_fidelity() -> Outcome {
    let (orig, fresh) = (tmp(), tmp());
    let profile = run_ok(orig.path(), &["env", "--tune=skylake", "minikernel-bench"])?;
    let manifest = run_ok(orig.path(), &["describe", "--profile", profile.trim()])?;
    let file = orig.path().join("export.manifest.json");
    std::fs::write(&file, &manifest).unwrap();
    let original: BTreeSet<String> = run_ok(
        orig.path(),
        &["build", "--closure", "--tune=skylake", "minikernel-bench"],
    )?
    .lines()
    .map(str::to_owned)
    .collect();
    let replayed: BTreeSet<String> = run_ok(
        fresh.path(),
        &["build", "--closure", "-m", file.to_str().unwrap()],
    )?
    .lines()
    .map(str::to_owned)
    .collect();
    check(
        original == replayed,
        format!("{original:?} != {replayed:?}"),
    )?;
    let profile_json =
        std::fs::read_to_string(std::path::Path::new(profile.trim()).join("profile.json")).unwrap();
    for p in &replayed {
        check(
            fresh.path().join(p).is_dir(),
            format!("{p} missing from fresh store"),
        )?;
    }
    check(
        replayed.iter().any(|p| profile_json.contains(p.as_str())),
        "profile root not in replayed set",
    )?;
    Ok(format!(
        "{} store paths identical after replay",
        replayed.len()
    ))
}

fn time_machine() -> Outcome {
    let (a, b) = (tmp(), tmp());
    let first = run_ok(
        a.path(),
        &["time-machine", "--commit=r1", "--", "build", "hello"],
    )?;
    let second = run_ok(
        b.path(),
        &["time-machine", "--commit=r1", "--", "build", "hello"],
    )?;
    check(first == second, format!("{first:?} != {second:?}"))?;

    let names = all_names(&revision("r1"));
    let closure = |commit: &str| -> Result<BTreeMap<String, String>, String> {
        let mut args = vec!["time-machine", commit, "--", "build"];
        args.extend(names.iter().map(String::as_str));
        let out = run_ok(a.path(), &args)?;
        Ok(names
            .iter()
            .cloned()
            .zip(out.lines().map(str::to_owned))
            .collect())
    };
    let r1 = closure("--commit=r1")?;
    let r2 = closure("--commit=r2")?;
    let differs: Vec<&String> = names.iter().filter(|n| r1[*n] != r2[*n]).collect();
    check(differs == ["hello"], format!("r1/r2 differ in {differs:?}"))?;
    Ok(format!(
        "r1 hello -> {}; r2 differs only in hello",
        first.trim()
    ))
}

fn cpu_corpus() -> Outcome {
    let lineage = Lineage::x86_64();
    let exp: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(cpuinfo("expectations.json")).unwrap())
            .unwrap();
    let mut hits = 0;
    let mut misses = Vec::new();
    for (file, want) in &exp {
        let text = std::fs::read_to_string(cpuinfo(file)).unwrap();
        let got = parse_cpu_flags(&text)
            .map_err(|e| e.to_string())
            .and_then(|f| {
                detect_microarch(&f, DEFAULT_SYSTEM, &lineage)
                    .map(|m| m.name)
                    .map_err(|e| e.to_string())
            });
        match got {
            Ok(name) if name == want => hits += 1,
            other => misses.push(format!("{file}: {other:?}")),
        }
    }
    check(
        exp.len() >= 6 && misses.is_empty(),
        format!("{hits}/{} ({misses:?})", exp.len()),
    )?;
    Ok(format!("{hits}/{} fixtures detected", exp.len()))
}

fn scalar(a: &Matrix, b: &Matrix) -> Vec<i64> {
    let mut out = Vec::with_capacity(a.rows() * b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            out.push((0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum());
        }
    }
    out
}

fn kernel_equivalence() -> Outcome {
    let mut cases = 0;
    for n in [1, 4, 16, 64] {
        for seed in 0..10u64 {
            let a = Matrix::random(n, n, seed);
            let b = Matrix::random(n, n, seed + 1000);
            let want = scalar(&a, &b);
            for lanes in [2, 4, 8] {
                let got = matmul(&a, &b, lanes).map_err(|e| e.to_string())?;
                check(
                    got.as_slice() == want.as_slice(),
                    format!("n={n} seed={seed} lanes={lanes}"),
                )?;
                cases += 1;
            }
        }
    }
    let store = tmp();
    for (tune, cpu, lanes) in [
        ("--tune=skylake", "skylake-i7.cpuinfo", 4),
        (
            "--tune=skylake-avx512",
            "skylake-avx512-xeon-gold-6252.cpuinfo",
            8,
        ),
    ] {
        let sp = run_ok(store.path(), &["build", tune, "minikernel-bench"])?;
        let o = cli_with_cpu(store.path(), cpu, &["run", sp.trim(), "4"]);
        check(
            o.status.success() && stdout(&o).contains(&format!("lanes: {lanes}\n")),
            format!("{tune} artifact did not report {lanes} lanes"),
        )?;
    }
    let sp = run_ok(
        store.path(),
        &["build", "--tune=skylake-avx512", "minikernel-bench"],
    )?;
    let o = cli_with_cpu(store.path(), "skylake-i7.cpuinfo", &["run", sp.trim(), "4"]);
    check(
        o.status.code() == Some(3),
        format!("expected refusal, got {:?}", o.status.code()),
    )?;
    Ok(format!(
        "{cases} kernel cases exact; lane widths 4/8 reported; avx512 refused on skylake"
    ))
}

fn pack_determinism() -> Outcome {
    let store = tmp();
    let sha = |args: &[&str]| -> Result<String, String> {
        let o = cli(store.path(), args);
        check(o.status.success(), stderr(&o))?;
        Ok(hex::encode(Sha256::digest(&o.stdout)))
    };
    let a = sha(&["pack", "--tune=skylake", "minikernel-bench"])?;
    let b = sha(&["pack", "--tune=skylake", "minikernel-bench"])?;
    let plain = sha(&["pack", "minikernel-bench"])?;
    check(a == b, format!("{a} != {b}"))?;
    check(a != plain, "tuned and untuned archives are identical")?;
    Ok(format!("sha256 {}…", &a[..16]))
}

fn manifest_canonicality() -> Outcome {
    let lineage = Lineage::x86_64();
    let names = all_names(&revision("r1"));
    let marches = lineage.names();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        let mut specs = names.clone();
        specs.shuffle(&mut rng);
        specs.truncate(rng.random_range(1..=names.len()));
        let entries = (0..rng.random_range(0..=4))
            .map(|_| {
                if rng.random_bool(0.5) {
                    Transformation::Tune(Some(marches[rng.random_range(0..marches.len())].clone()))
                } else {
                    Transformation::WithInput {
                        old: names[rng.random_range(0..names.len())].clone(),
                        new: names[rng.random_range(0..names.len())].clone(),
                    }
                }
            })
            .collect();
        let m = Manifest::new("dc76980cf3cc8552", specs, TransformationSpec { entries });
        let text = m.to_canonical_string().map_err(|e| e.to_string())?;
        let back = Manifest::parse(&text, &lineage).map_err(|e| e.to_string())?;
        let again = back.to_canonical_string().map_err(|e| e.to_string())?;
        check(text == again, format!("combination {i} not byte-stable"))?;
    }
    Ok("100/100 combinations byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 bit-for-bit determinism", bit_for_bit),
        ("2 tuning scope exactness", tuning_scope),
        ("3 replay fidelity", replay_fidelity),
        ("4 time-machine determinism", time_machine),
        ("5 cpu detection corpus", cpu_corpus),
        ("6 kernel equivalence oracle", kernel_equivalence),
        ("7 pack determinism", pack_determinism),
        ("8 manifest canonicality", manifest_canonicality),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
