//! Package index, import-to-package knowledge base, dependency closure,
//! install ordering, and candidate environment generation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvironmentSpec, Pin, Runtime};
use crate::version::{ReleaseHistory, Version, VersionError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UniverseError {
    #[error("package `{0}` is not in the package index")]
    MissingPackage(String),
    #[error("package `{package}` has no release `{version}`")]
    UnknownRelease { package: String, version: String },
    #[error("`{package}@{version}` depends on `{dependency}`, which is not in the index")]
    DanglingDependency { package: String, version: String, dependency: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Version(#[from] VersionError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageEntry {
    history: ReleaseHistory,
    /// Dependency package ids keyed by raw version string.
    deps: BTreeMap<String, Vec<String>>,
}

impl PackageEntry {
    pub fn history(&self) -> &ReleaseHistory {
        &self.history
    }
}

/// Every known package with its release history and per-release
/// dependency edges (name only, no version constraints).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PackageIndex {
    packages: BTreeMap<String, PackageEntry>,
}

/// One release as it appears in an index source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseRecord {
    pub version: Version,
    pub deps: Vec<String>,
}

impl PackageIndex {
    /// Builds the index and checks that every dependency edge names a
    /// package that is present.
    pub fn new(
        packages: impl IntoIterator<Item = (String, Vec<ReleaseRecord>)>,
        prerelease_targets: bool,
    ) -> Result<Self, UniverseError> {
        let mut out = BTreeMap::new();
        for (name, releases) in packages {
            let mut deps = BTreeMap::new();
            for r in &releases {
                let mut d = r.deps.clone();
                d.dedup();
                deps.insert(r.version.as_str().to_string(), d);
            }
            let history = ReleaseHistory::new(name.clone(), releases.into_iter().map(|r| r.version), prerelease_targets);
            out.insert(name, PackageEntry { history, deps });
        }
        for (name, entry) in &out {
            for (version, deps) in &entry.deps {
                if let Some(missing) = deps.iter().find(|d| !out.contains_key(*d)) {
                    return Err(UniverseError::DanglingDependency {
                        package: name.clone(),
                        version: version.clone(),
                        dependency: missing.clone(),
                    });
                }
            }
        }
        Ok(PackageIndex { packages: out })
    }

    pub fn contains(&self, package: &str) -> bool {
        self.packages.contains_key(package)
    }

    pub fn packages(&self) -> impl Iterator<Item = (&str, &PackageEntry)> {
        self.packages.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn history(&self, package: &str) -> Result<&ReleaseHistory, UniverseError> {
        self.packages
            .get(package)
            .map(|e| &e.history)
            .ok_or_else(|| UniverseError::MissingPackage(package.to_string()))
    }

    pub fn latest(&self, package: &str) -> Result<&Version, UniverseError> {
        Ok(self.history(package)?.latest(false)?)
    }

    /// Dependencies of `package` when pinned at `version`.
    pub fn deps_of(&self, package: &str, version: &Version) -> Result<&[String], UniverseError> {
        let entry = self
            .packages
            .get(package)
            .ok_or_else(|| UniverseError::MissingPackage(package.to_string()))?;
        entry
            .deps
            .get(version.as_str())
            .map(Vec::as_slice)
            .ok_or_else(|| UniverseError::UnknownRelease { package: package.to_string(), version: version.to_string() })
    }

    fn pinned<'a>(&'a self, package: &str, pins: &'a BTreeMap<String, Version>) -> Result<&'a Version, UniverseError> {
        match pins.get(package) {
            Some(v) => Ok(v),
            None => self.latest(package),
        }
    }
}

/// Maps importable module names to the packages that may provide them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    #[serde(rename = "modules")]
    pub module_map: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub stdlib: BTreeSet<String>,
}

/// Yields `a.b.c`, `a.b`, `a`.
fn prefixes(module: &str) -> impl Iterator<Item = &str> {
    let mut end = Some(module.len());
    core::iter::from_fn(move || {
        let cur = end?;
        let prefix = &module[..cur];
        end = prefix.rfind('.');
        Some(prefix)
    })
}

impl KnowledgeBase {
    pub fn is_stdlib(&self, module: &str) -> bool {
        prefixes(module).any(|p| self.stdlib.contains(p))
    }

    /// Longest-prefix lookup of a module in the module map.
    pub fn lookup(&self, module: &str) -> Option<&BTreeSet<String>> {
        prefixes(module).find_map(|p| self.module_map.get(p).filter(|s| !s.is_empty()))
    }

    /// Longest-prefix lookup where only packages satisfying `installed`
    /// count; prefixes whose candidates are all uninstalled are skipped.
    pub fn lookup_installed(&self, module: &str, installed: impl Fn(&str) -> bool) -> BTreeSet<String> {
        for p in prefixes(module) {
            if let Some(set) = self.module_map.get(p) {
                let hits: BTreeSet<String> = set.iter().filter(|pkg| installed(pkg)).cloned().collect();
                if !hits.is_empty() {
                    return hits;
                }
            }
        }
        BTreeSet::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnippetKind {
    Script,
    Notebook,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetManifest {
    pub snippet_id: String,
    pub kind: SnippetKind,
    #[serde(default)]
    pub cell_count: u32,
    #[serde(default)]
    pub imports: Vec<String>,
    pub runtime_candidates: Vec<Runtime>,
    /// Snippet file, relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SnippetManifest {
    pub fn validate(&self) -> Result<(), UniverseError> {
        if self.kind == SnippetKind::Script && self.cell_count != 0 {
            return Err(UniverseError::InvalidManifest(format!(
                "script `{}` declares {} cells",
                self.snippet_id, self.cell_count
            )));
        }
        if self.runtime_candidates.is_empty() {
            return Err(UniverseError::InvalidManifest(format!("`{}` has no runtime candidates", self.snippet_id)));
        }
        Ok(())
    }
}

fn is_dotted_name(s: &str) -> bool {
    !s.is_empty()
        && s.split('.').all(|part| {
            let mut chars = part.chars();
            matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
                && chars.all(|c| c.is_alphanumeric() || c == '_')
        })
}

/// Strips an `as alias` clause.
fn strip_alias(item: &str) -> &str {
    let item = item.trim();
    match item.split_once(char::is_whitespace) {
        Some((name, rest)) if rest.trim_start().starts_with("as") => name,
        Some(_) => "",
        None => item,
    }
}

/// Joins physical lines into logical ones: backslash continuations and
/// open parentheses are folded, comments dropped.
fn logical_lines(source: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut depth: i32 = 0;
    for raw in source.lines() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let (line, continued) = match line.trim_end().strip_suffix('\\') {
            Some(stripped) => (stripped, true),
            None => (line, false),
        };
        depth += line.matches('(').count() as i32 - line.matches(')').count() as i32;
        current.push_str(line);
        current.push(' ');
        if !continued && depth <= 0 {
            depth = 0;
            out.push(core::mem::take(&mut current));
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

/// Extracts fully qualified module names from `import a.b [as x]` and
/// `from a.b import c [as x]` statements, in source order, deduplicated.
/// For `from a.b import c` both `a.b.c` and `a.b` are reported since `c`
/// may be a submodule or a member. Anything else is skipped.
pub fn extract_imports(source: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut emit = |name: String| {
        if seen.insert(name.clone()) {
            out.push(name);
        }
    };
    for line in logical_lines(source) {
        for stmt in line.split(';') {
            let stmt = stmt.trim();
            if let Some(rest) = stmt.strip_prefix("import ") {
                for item in rest.split(',') {
                    let name = strip_alias(item);
                    if is_dotted_name(name) {
                        emit(name.to_string());
                    }
                }
            } else if let Some(rest) = stmt.strip_prefix("from ") {
                let Some((base, names)) = rest.split_once(" import ") else { continue };
                let base = base.trim();
                if !is_dotted_name(base) {
                    // relative imports name no installable package
                    continue;
                }
                let names = names.trim().trim_start_matches('(').trim_end_matches(')');
                for item in names.split(',') {
                    let name = strip_alias(item);
                    if is_dotted_name(name) {
                        emit(format!("{base}.{name}"));
                    }
                }
                emit(base.to_string());
            }
        }
    }
    out
}

/// Direct dependencies resolved from a snippet's imports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DirectDependencies {
    pub packages: BTreeSet<String>,
    /// Non-stdlib modules with no knowledge-base entry.
    pub unmapped: Vec<String>,
}

pub fn resolve_direct_dependencies(imports: &[String], kb: &KnowledgeBase) -> DirectDependencies {
    let mut out = DirectDependencies::default();
    for module in imports {
        if kb.is_stdlib(module) {
            continue;
        }
        match kb.lookup(module) {
            Some(pkgs) => out.packages.extend(pkgs.iter().cloned()),
            None => {
                if !out.unmapped.contains(module) {
                    out.unmapped.push(module.clone());
                }
            }
        }
    }
    out
}

/// Least fixed point of the pinned dependency relation starting at `direct`.
/// Packages without a pin use their latest release.
pub fn transitive_closure(
    direct: &BTreeSet<String>,
    index: &PackageIndex,
    pins: &BTreeMap<String, Version>,
) -> Result<BTreeSet<String>, UniverseError> {
    let mut closed = BTreeSet::new();
    let mut stack: Vec<String> = direct.iter().rev().cloned().collect();
    while let Some(pkg) = stack.pop() {
        if closed.contains(&pkg) {
            continue;
        }
        let version = index.pinned(&pkg, pins)?;
        let deps = index.deps_of(&pkg, version)?;
        for d in deps {
            if !index.contains(d) {
                return Err(UniverseError::MissingPackage(d.clone()));
            }
            if !closed.contains(d) {
                stack.push(d.clone());
            }
        }
        closed.insert(pkg);
    }
    Ok(closed)
}

/// A dependency edge dropped to break a cycle: `dependent` is installed
/// without waiting for `dependency`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BrokenEdge {
    pub dependent: String,
    pub dependency: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InstallOrder {
    pub order: Vec<String>,
    pub broken_edges: Vec<BrokenEdge>,
}

fn reachable(from: &str, edges: &BTreeMap<String, BTreeSet<String>>) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = edges.get(from).into_iter().flatten().map(String::as_str).collect();
    while let Some(n) = stack.pop() {
        if seen.insert(n.to_string()) {
            stack.extend(edges.get(n).into_iter().flatten().map(String::as_str));
        }
    }
    seen
}

/// Orders `deps` so every package follows the packages it depends on.
///
/// Ready packages are taken smallest-id first. When only cycles remain, the
/// smallest package of a cycle with no pending dependencies outside it is
/// installed first and its edges into the cycle are recorded as broken.
pub fn install_order(
    deps: &BTreeSet<String>,
    index: &PackageIndex,
    pins: &BTreeMap<String, Version>,
) -> Result<InstallOrder, UniverseError> {
    let mut unmet: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for pkg in deps {
        let version = index.pinned(pkg, pins)?;
        let edges = index.deps_of(pkg, version)?.iter().filter(|d| deps.contains(*d)).cloned().collect();
        unmet.insert(pkg.clone(), edges);
    }
    let mut out = InstallOrder::default();
    while !unmet.is_empty() {
        let ready = unmet.iter().find(|(_, pending)| pending.is_empty()).map(|(p, _)| p.clone());
        let next = match ready {
            Some(p) => p,
            None => {
                let (pkg, cycle) = unmet
                    .keys()
                    .find_map(|p| {
                        let reach = reachable(p, &unmet);
                        if !reach.contains(p) {
                            return None;
                        }
                        let scc: BTreeSet<String> =
                            reach.iter().filter(|q| reachable(q, &unmet).contains(p)).cloned().collect();
                        let closed = scc.iter().all(|m| unmet[m].iter().all(|d| scc.contains(d)));
                        closed.then(|| (p.clone(), scc))
                    })
                    .expect("a dependency graph with no ready node has a closed cycle");
                let pending = unmet.get_mut(&pkg).expect("cycle member is pending");
                for dependency in pending.iter().filter(|d| cycle.contains(*d)) {
                    out.broken_edges.push(BrokenEdge { dependent: pkg.clone(), dependency: dependency.clone() });
                }
                pending.retain(|d| !cycle.contains(d));
                continue;
            }
        };
        unmet.remove(&next);
        for pending in unmet.values_mut() {
            pending.remove(&next);
        }
        out.order.push(next);
    }
    Ok(out)
}

/// Candidate environments plus the bookkeeping gathered while building them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Candidates {
    pub specs: Vec<EnvironmentSpec>,
    pub unmapped_modules: Vec<String>,
    pub broken_edges: Vec<BrokenEdge>,
}

/// One environment per runtime candidate, every package pinned at its
/// latest release and listed in install order.
pub fn generate_candidates(
    manifest: &SnippetManifest,
    kb: &KnowledgeBase,
    index: &PackageIndex,
) -> Result<Candidates, UniverseError> {
    manifest.validate()?;
    let direct = resolve_direct_dependencies(&manifest.imports, kb);
    for pkg in &direct.packages {
        if !index.contains(pkg) {
            return Err(UniverseError::MissingPackage(pkg.clone()));
        }
    }
    let pins = BTreeMap::new();
    let closure = transitive_closure(&direct.packages, index, &pins)?;
    let order = install_order(&closure, index, &pins)?;
    let deps = order
        .order
        .iter()
        .map(|p| Ok(Pin::new(p.clone(), index.latest(p)?.clone())))
        .collect::<Result<Vec<_>, UniverseError>>()?;
    let mut runtimes = manifest.runtime_candidates.clone();
    runtimes.sort();
    runtimes.dedup();
    let specs = runtimes
        .into_iter()
        .map(|runtime| EnvironmentSpec {
            runtime,
            deps: deps.clone(),
            origin: format!("{}:py{}", manifest.snippet_id, runtime.level()),
        })
        .collect();
    Ok(Candidates { specs, unmapped_modules: direct.unmapped, broken_edges: order.broken_edges })
}
