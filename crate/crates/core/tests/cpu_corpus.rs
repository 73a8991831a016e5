mod common;

use std::collections::BTreeMap;

use multiver::cpu::{detect_microarch, is_compatible, lookup_microarch, parse_cpu_flags, Lineage};
use multiver::derivation::DEFAULT_SYSTEM;

fn expectations() -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(common::cpuinfo("expectations.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn every_fixture_detects_its_class() {
    let lineage = Lineage::x86_64();
    let exp = expectations();
    assert!(exp.len() >= 6);
    for (file, want) in &exp {
        let text = std::fs::read_to_string(common::cpuinfo(file)).unwrap();
        let flags = parse_cpu_flags(&text).unwrap();
        let got = detect_microarch(&flags, DEFAULT_SYSTEM, &lineage).unwrap();
        assert_eq!(got.name, want, "{file}");
        // A host runs code for its own class and every older one.
        for m in lineage.entries() {
            assert_eq!(
                is_compatible(m, &flags),
                m.rank <= got.rank,
                "{file} vs {}",
                m.name
            );
        }
    }
}

#[test]
fn avx512_artifact_refused_on_skylake_client() {
    let lineage = Lineage::x86_64();
    let text = std::fs::read_to_string(common::cpuinfo("skylake-i7.cpuinfo")).unwrap();
    let flags = parse_cpu_flags(&text).unwrap();
    let m = lookup_microarch("skylake-avx512", &lineage).unwrap();
    assert!(!is_compatible(m, &flags));
    assert_eq!(
        m.required.missing_from(&flags.normalized()),
        vec!["avx512cd".to_owned(), "avx512f".to_owned()]
    );
}
