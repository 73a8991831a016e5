//! x86_64 SIMD micro-architecture lineage and host feature detection.
//!
//! The lineage follows the SSE2 → SSE3 → SSSE3 → AVX → AVX2 → AVX-512 chain,
//! with one `-march` name per tier. Required feature sets use the flag names
//! of `/proc/cpuinfo` and follow the GCC `-march` documentation; each entry
//! is a strict superset of the previous one.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CpuError {
    #[error("no `flags` line found in CPU description")]
    NoFlags,
    #[error("unknown CPU name `{name}`; valid names are: {}", valid.join(", "))]
    UnknownName { name: String, valid: Vec<String> },
    #[error("CPU detection is only supported on x86_64 systems, not `{0}`")]
    UnsupportedSystem(String),
}

/// A set of lowercase CPU feature flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FeatureSet(BTreeSet<String>);

/// Kernel spellings that differ from the feature names used in the lineage.
const FLAG_ALIASES: &[(&str, &str)] = &[("pni", "sse3")];

impl FeatureSet {
    pub fn new<I, S>(flags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        FeatureSet(
            flags
                .into_iter()
                .map(|f| f.as_ref().to_ascii_lowercase())
                .collect(),
        )
    }

    pub fn contains(&self, flag: &str) -> bool {
        self.0.contains(flag)
    }

    pub fn insert(&mut self, flag: &str) {
        self.0.insert(flag.to_ascii_lowercase());
    }

    pub fn is_subset(&self, other: &FeatureSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Flags of `self` that `other` lacks.
    pub fn missing_from(&self, other: &FeatureSet) -> Vec<String> {
        self.0.difference(&other.0).cloned().collect()
    }

    /// Adds canonical names for kernel aliases such as `pni` (SSE3).
    pub fn normalized(&self) -> FeatureSet {
        let mut out = self.clone();
        for (alias, canonical) in FLAG_ALIASES {
            if self.contains(alias) {
                out.insert(canonical);
            }
        }
        out
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v: Vec<&str> = self.iter().collect();
        f.write_str(&v.join(" "))
    }
}

/// One named tier of the lineage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Microarchitecture {
    pub name: &'static str,
    pub rank: usize,
    pub required: FeatureSet,
    /// Widest SIMD register in bits.
    pub vector_bits: u32,
}

impl Microarchitecture {
    /// Number of 64-bit lanes in one vector register.
    pub fn lanes(&self) -> usize {
        lanes_for_bits(self.vector_bits)
    }
}

pub fn lanes_for_bits(bits: u32) -> usize {
    (bits / 64) as usize
}

impl fmt::Display for Microarchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

struct Tier {
    name: &'static str,
    vector_bits: u32,
    adds: &'static [&'static str],
}

// Baseline x86-64 guarantees SSE2; the artifact treats it as universally
// present, so the baseline tier requires nothing.
const TIERS: &[Tier] = &[
    Tier {
        name: "x86-64",
        vector_bits: 128,
        adds: &[],
    },
    Tier {
        name: "nehalem",
        vector_bits: 128,
        adds: &[
            "mmx", "fxsr", "sse", "sse2", "sse3", "ssse3", "sse4_1", "sse4_2", "popcnt", "cx16",
            "lahf_lm",
        ],
    },
    Tier {
        name: "sandybridge",
        vector_bits: 256,
        adds: &["avx", "xsave", "pclmulqdq"],
    },
    Tier {
        name: "haswell",
        vector_bits: 256,
        adds: &[
            "movbe", "avx2", "fma", "bmi1", "bmi2", "f16c", "fsgsbase", "rdrand", "abm",
        ],
    },
    Tier {
        name: "skylake",
        vector_bits: 256,
        adds: &[
            "rdseed",
            "adx",
            "3dnowprefetch",
            "aes",
            "clflushopt",
            "xsavec",
            "xsaves",
        ],
    },
    Tier {
        name: "skylake-avx512",
        vector_bits: 512,
        adds: &["avx512f", "avx512cd"],
    },
];

/// The frozen lineage table, ordered by rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lineage(Vec<Microarchitecture>);

impl Lineage {
    pub fn x86_64() -> Self {
        let mut acc = FeatureSet::default();
        let entries = TIERS
            .iter()
            .enumerate()
            .map(|(rank, tier)| {
                for f in tier.adds {
                    acc.insert(f);
                }
                Microarchitecture {
                    name: tier.name,
                    rank,
                    required: acc.clone(),
                    vector_bits: tier.vector_bits,
                }
            })
            .collect();
        Lineage(entries)
    }

    pub fn entries(&self) -> &[Microarchitecture] {
        &self.0
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|m| m.name.to_owned()).collect()
    }

    pub fn baseline(&self) -> &Microarchitecture {
        &self.0[0]
    }
}

/// Extracts feature flags from a `/proc/cpuinfo` dump or a bare flag line.
pub fn parse_cpu_flags(text: &str) -> Result<FeatureSet, CpuError> {
    for line in text.lines() {
        if let Some((key, value)) = line.split_once(':') {
            if key.trim_end() == "flags" {
                return Ok(FeatureSet::new(value.split_whitespace()));
            }
        }
    }
    let bare: Vec<&str> = text.split_whitespace().collect();
    let is_flag = |s: &&str| {
        s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.')
    };
    if bare.is_empty() || text.contains(':') || !bare.iter().all(is_flag) {
        return Err(CpuError::NoFlags);
    }
    Ok(FeatureSet::new(bare))
}

/// Highest-rank lineage entry whose requirements the host satisfies.
pub fn detect_microarch<'a>(
    features: &FeatureSet,
    system: &str,
    lineage: &'a Lineage,
) -> Result<&'a Microarchitecture, CpuError> {
    if !is_x86_64_system(system) {
        return Err(CpuError::UnsupportedSystem(system.to_owned()));
    }
    let host = features.normalized();
    Ok(lineage
        .entries()
        .iter()
        .rev()
        .find(|m| m.required.is_subset(&host))
        .unwrap_or_else(|| lineage.baseline()))
}

pub fn lookup_microarch<'a>(
    name: &str,
    lineage: &'a Lineage,
) -> Result<&'a Microarchitecture, CpuError> {
    lineage
        .entries()
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| CpuError::UnknownName {
            name: name.to_owned(),
            valid: lineage.names(),
        })
}

pub fn is_compatible(march: &Microarchitecture, host: &FeatureSet) -> bool {
    march.required.is_subset(&host.normalized())
}

pub fn is_x86_64_system(system: &str) -> bool {
    system.split('-').next() == Some("x86_64")
}

/// System triple of the running host, in the `<arch>-generic` form.
pub fn host_system() -> String {
    format!("{}-generic", std::env::consts::ARCH)
}
