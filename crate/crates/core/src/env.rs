//! Environment specifications, version mutations, patches, and drift
//! instances.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::universe::{install_order, transitive_closure, PackageIndex, UniverseError};
use crate::validation::ValidationResult;
use crate::version::Version;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("stale mutation: `{package}` is pinned at {found:?}, mutation expects {expected}")]
    StaleMutation { package: String, expected: String, found: Option<String> },
    #[error("mutation of `{package}` from {from} to {to} is not a downgrade")]
    NotADowngrade { package: String, from: String, to: String },
    #[error(transparent)]
    Universe(#[from] UniverseError),
}

/// Language runtime level of an environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Runtime {
    #[serde(rename = "2", alias = "level-2", alias = "py2")]
    Py2,
    #[serde(rename = "3", alias = "level-3", alias = "py3")]
    Py3,
}

impl Runtime {
    pub fn level(self) -> u8 {
        match self {
            Runtime::Py2 => 2,
            Runtime::Py3 => 3,
        }
    }
}

impl fmt::Display for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level())
    }
}

/// A package pinned at one version. Serialized as `["name", "version"]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pin {
    pub package: String,
    pub version: Version,
}

impl Pin {
    pub fn new(package: impl Into<String>, version: Version) -> Self {
        Pin { package: package.into(), version }
    }
}

impl fmt::Display for Pin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}=={}", self.package, self.version)
    }
}

impl Serialize for Pin {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (&self.package, &self.version).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pin {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (package, version) = <(String, Version)>::deserialize(deserializer)?;
        Ok(Pin { package, version })
    }
}

/// A `(runtime, dependencies)` candidate environment. `deps` is kept in
/// install order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub runtime: Runtime,
    pub deps: Vec<Pin>,
    pub origin: String,
}

impl EnvironmentSpec {
    pub fn pinned(&self, package: &str) -> Option<&Version> {
        self.deps.iter().find(|p| p.package == package).map(|p| &p.version)
    }

    pub fn has_package(&self, package: &str) -> bool {
        self.deps.iter().any(|p| p.package == package)
    }

    pub fn key(&self) -> String {
        canonical_key(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MutationOp {
    #[serde(rename = "DecrementSemverMajor")]
    MajorDecrement,
    #[serde(rename = "DecrementSemverMinor")]
    MinorDecrement,
    MatrixJump,
}

impl fmt::Display for MutationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationOp::MajorDecrement => "DecrementSemverMajor",
            MutationOp::MinorDecrement => "DecrementSemverMinor",
            MutationOp::MatrixJump => "MatrixJump",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mutation {
    pub op: MutationOp,
    pub package: String,
    #[serde(rename = "from")]
    pub from_version: Version,
    #[serde(rename = "to")]
    pub to_version: Version,
}

impl Mutation {
    pub fn new(op: MutationOp, package: impl Into<String>, from_version: Version, to_version: Version) -> Self {
        Mutation { op, package: package.into(), from_version, to_version }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}=={}) -> {}", self.op, self.package, self.from_version, self.to_version)
    }
}

/// An ordered list of mutations, each applicable to the state left by the
/// previous one.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Patch {
    pub mutations: Vec<Mutation>,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.mutations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mutations.len()
    }

    /// Applies every mutation in order.
    pub fn apply(&self, env: &EnvironmentSpec, index: &PackageIndex) -> Result<EnvironmentSpec, EnvError> {
        self.mutations.iter().try_fold(env.clone(), |env, m| apply_mutation(&env, m, index))
    }
}

impl From<Vec<Mutation>> for Patch {
    fn from(mutations: Vec<Mutation>) -> Self {
        Patch { mutations }
    }
}

/// A failure certified as configuration drift by the patch that fixed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftInstance {
    pub checkpoint: ValidationResult,
    /// The environment the checkpoint failure was observed in.
    pub environment: EnvironmentSpec,
    pub patch: Patch,
    pub validations_spent: u64,
    pub localized_package: Option<String>,
}

/// Replaces one pin and re-resolves the environment: a different release
/// may bring different dependencies, so the closure and install order are
/// recomputed and newly required packages are pinned at their latest.
pub fn apply_mutation(env: &EnvironmentSpec, m: &Mutation, index: &PackageIndex) -> Result<EnvironmentSpec, EnvError> {
    let found = env.pinned(&m.package);
    if found != Some(&m.from_version) {
        return Err(EnvError::StaleMutation {
            package: m.package.clone(),
            expected: m.from_version.as_str().into(),
            found: found.map(|v| v.as_str().into()),
        });
    }
    if m.to_version >= m.from_version {
        return Err(EnvError::NotADowngrade {
            package: m.package.clone(),
            from: m.from_version.as_str().into(),
            to: m.to_version.as_str().into(),
        });
    }
    let mut pins: BTreeMap<String, Version> = env.deps.iter().map(|p| (p.package.clone(), p.version.clone())).collect();
    pins.insert(m.package.clone(), m.to_version.clone());
    // the target must be a real release with known edges
    index.deps_of(&m.package, &m.to_version)?;
    let roots: BTreeSet<String> = pins.keys().cloned().collect();
    let closure = transitive_closure(&roots, index, &pins)?;
    let order = install_order(&closure, index, &pins)?;
    let deps = order
        .order
        .into_iter()
        .map(|pkg| {
            let version = match pins.get(&pkg) {
                Some(v) => v.clone(),
                None => index.latest(&pkg)?.clone(),
            };
            Ok(Pin { package: pkg, version })
        })
        .collect::<Result<Vec<_>, UniverseError>>()?;
    Ok(EnvironmentSpec { runtime: env.runtime, deps, origin: env.origin.clone() })
}

/// Order-insensitive identity of an environment: runtime plus sorted pins.
pub fn canonical_key(env: &EnvironmentSpec) -> String {
    let mut pins: Vec<&Pin> = env.deps.iter().collect();
    pins.sort_by(|a, b| a.package.cmp(&b.package));
    let body: Vec<String> = pins.iter().map(|p| format!("{}=={}", p.package, p.version)).collect();
    format!("py{}|{}", env.runtime.level(), body.join(","))
}

/// Mutations only ever decrement and are never undone, so the walk length
/// equals the mutation count.
pub fn distance(patch: &Patch) -> usize {
    patch.mutations.len()
}
