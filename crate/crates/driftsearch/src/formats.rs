//! On-disk formats: package index, knowledge base, manifest, simulated
//! world, snippet, upgrade events, and compiled matrices.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use driftsearch_core::sim::{ApiTable, CrossImport, Exports, SimSnippet, SimWorld, WorldError};
use driftsearch_core::universe::ReleaseRecord;
use driftsearch_core::{
    BuildStatus, CellStats, KnowledgeBase, PackageIndex, SnippetManifest, UniverseError, UpgradeEvent, UpgradeMatrix,
    Version,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Universe { path: PathBuf, source: UniverseError },
    #[error("{path}: {source}")]
    World { path: PathBuf, source: WorldError },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn read_to_string(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.into(), source })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| FormatError::Io { path: path.into(), source })
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DepRef {
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReleaseRepr {
    version: Version,
    #[serde(default)]
    deps: Vec<DepRef>,
    /// World files only: module path to exported symbol arities.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    modules: BTreeMap<String, Exports>,
    /// World files only: modules loaded when this release is imported.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    imports: Vec<CrossImport>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PackageRepr {
    releases: Vec<ReleaseRepr>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexRepr {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    prerelease_targets: bool,
    packages: BTreeMap<String, PackageRepr>,
}

impl IndexRepr {
    fn index(&self) -> Result<PackageIndex, UniverseError> {
        let packages = self.packages.iter().map(|(name, p)| {
            let releases = p
                .releases
                .iter()
                .map(|r| ReleaseRecord { version: r.version.clone(), deps: r.deps.iter().map(|d| d.name.clone()).collect() })
                .collect();
            (name.clone(), releases)
        });
        PackageIndex::new(packages, self.prerelease_targets)
    }
}

/// `{"packages": {"<id>": {"releases": [{"version": "..", "deps": [{"name": ".."}]}]}}}`
pub fn load_index(path: &Path) -> Result<PackageIndex, FormatError> {
    let repr: IndexRepr = read_json(path)?;
    repr.index().map_err(|source| FormatError::Universe { path: path.into(), source })
}

/// `{"modules": {"<module>": ["<package>", ..]}, "stdlib": [..]}`
pub fn load_kb(path: &Path) -> Result<KnowledgeBase, FormatError> {
    read_json(path)
}

/// Parses a manifest without validating it; runtime candidates may still be
/// filled in by the executor's `detect`.
pub fn load_manifest(path: &Path) -> Result<SnippetManifest, FormatError> {
    read_json(path)
}

/// The snippet file a manifest points at, resolved against the manifest's directory.
pub fn manifest_source(manifest_path: &Path, manifest: &SnippetManifest) -> Option<PathBuf> {
    let source = manifest.source.as_ref()?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    Some(dir.join(source))
}

pub fn load_snippet(path: &Path) -> Result<SimSnippet, FormatError> {
    read_json(path)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WorldRepr {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    stdlib: Vec<String>,
    #[serde(flatten)]
    index: IndexRepr,
}

/// A package index whose releases also carry `modules` and `imports`.
pub fn load_world(path: &Path) -> Result<SimWorld, FormatError> {
    let repr: WorldRepr = read_json(path)?;
    let index = repr.index.index().map_err(|source| FormatError::Universe { path: path.into(), source })?;
    let mut api: BTreeMap<(String, Version), ApiTable> = BTreeMap::new();
    let mut cross: BTreeMap<(String, Version), Vec<CrossImport>> = BTreeMap::new();
    for (name, p) in &repr.index.packages {
        for r in &p.releases {
            let key = (name.clone(), r.version.clone());
            if !r.modules.is_empty() {
                api.insert(key.clone(), r.modules.clone());
            }
            if !r.imports.is_empty() {
                cross.insert(key, r.imports.clone());
            }
        }
    }
    SimWorld::new(index, api, cross, repr.stdlib.into_iter().collect(), repr.seed)
        .map_err(|source| FormatError::World { path: path.into(), source })
}

pub fn save_world(path: &Path, world: &SimWorld) -> Result<(), FormatError> {
    let index = world.index();
    let mut packages = BTreeMap::new();
    for (name, entry) in index.packages() {
        let mut releases = Vec::new();
        for version in entry.history().releases() {
            let key = (name.to_string(), version.clone());
            let deps = index.deps_of(name, version).unwrap_or_default();
            releases.push(ReleaseRepr {
                version: version.clone(),
                deps: deps.iter().map(|d| DepRef { name: d.clone() }).collect(),
                modules: world.api().get(&key).cloned().unwrap_or_default(),
                imports: world.cross_imports().get(&key).cloned().unwrap_or_default(),
            });
        }
        packages.insert(name.to_string(), PackageRepr { releases });
    }
    let repr = WorldRepr {
        seed: world.seed(),
        stdlib: world.stdlib().iter().cloned().collect(),
        index: IndexRepr { prerelease_targets: false, packages },
    };
    write_json(path, &repr)
}

#[derive(Debug, Deserialize, Serialize)]
struct EventRow {
    package: String,
    from_version: String,
    to_version: String,
    status_before: String,
    status_after: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

fn status(text: &str) -> Option<BuildStatus> {
    match text.trim().to_ascii_lowercase().as_str() {
        "passing" | "passed" => Some(BuildStatus::Passing),
        "failing" | "failed" => Some(BuildStatus::Failing),
        "canceled" | "cancelled" => Some(BuildStatus::Canceled),
        "errored" => Some(BuildStatus::Errored),
        _ => None,
    }
}

/// Events parsed from a CSV file plus the number of rows that could not be used.
#[derive(Debug, Default)]
pub struct EventFile {
    pub events: Vec<UpgradeEvent>,
    pub malformed: usize,
}

/// Header `package,from_version,to_version,status_before,status_after[,source]`.
/// Rows with unparseable versions or statuses, or with equal versions, are
/// counted and skipped.
pub fn read_events(reader: impl Read, path: &Path) -> Result<EventFile, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let mut out = EventFile::default();
    for row in rdr.deserialize::<EventRow>() {
        let row = match row {
            Ok(row) => row,
            Err(e) if e.is_io_error() => return Err(FormatError::Csv { path: path.into(), source: e }),
            Err(e) => {
                log::warn!("{}: skipping row: {e}", path.display());
                out.malformed += 1;
                continue;
            }
        };
        let parsed = (|| {
            let event = UpgradeEvent {
                from_version: Version::parse(&row.from_version).ok()?,
                to_version: Version::parse(&row.to_version).ok()?,
                status_before: status(&row.status_before)?,
                status_after: status(&row.status_after)?,
                package: row.package.clone(),
                source: row.source.clone().filter(|s| !s.is_empty()),
            };
            (event.from_version != event.to_version && !event.package.is_empty()).then_some(event)
        })();
        match parsed {
            Some(event) => out.events.push(event),
            None => {
                log::warn!("{}: skipping malformed row for `{}`", path.display(), row.package);
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

pub fn load_events(path: &Path) -> Result<EventFile, FormatError> {
    let file = fs::File::open(path).map_err(|source| FormatError::Io { path: path.into(), source })?;
    read_events(file, path)
}

pub fn write_events(writer: impl Write, events: &[UpgradeEvent]) -> Result<(), csv::Error> {
    fn name(s: BuildStatus) -> &'static str {
        match s {
            BuildStatus::Passing => "passing",
            BuildStatus::Failing => "failing",
            BuildStatus::Canceled => "canceled",
            BuildStatus::Errored => "errored",
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["package", "from_version", "to_version", "status_before", "status_after", "source"])?;
    for e in events {
        w.write_record([
            e.package.as_str(),
            e.from_version.as_str(),
            e.to_version.as_str(),
            name(e.status_before),
            name(e.status_after),
            e.source.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRepr {
    from: Version,
    to: Version,
    total: u64,
    broken: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRepr {
    cells: Vec<CellRepr>,
}

pub fn matrices_to_json(matrices: &BTreeMap<String, UpgradeMatrix>) -> serde_json::Value {
    let repr: BTreeMap<&str, MatrixRepr> = matrices
        .iter()
        .map(|(name, m)| {
            let cells = m
                .cells()
                .map(|(from, to, s)| CellRepr { from: from.clone(), to: to.clone(), total: s.total_builds, broken: s.broken_builds })
                .collect();
            (name.as_str(), MatrixRepr { cells })
        })
        .collect();
    serde_json::to_value(repr).expect("matrix cells serialize")
}

pub fn save_matrices(path: &Path, matrices: &BTreeMap<String, UpgradeMatrix>) -> Result<(), FormatError> {
    write_json(path, &matrices_to_json(matrices))
}

/// `{"<package>": {"cells": [{"from": .., "to": .., "total": n, "broken": k}]}}`
pub fn load_matrices(path: &Path) -> Result<BTreeMap<String, UpgradeMatrix>, FormatError> {
    let repr: BTreeMap<String, MatrixRepr> = read_json(path)?;
    let mut out = BTreeMap::new();
    for (name, m) in repr {
        let mut matrix = UpgradeMatrix::new(name.clone());
        for c in m.cells {
            let (from, to) = (c.from.to_string(), c.to.to_string());
            if !matrix.add(c.from, c.to, CellStats { total_builds: c.total, broken_builds: c.broken }) {
                return Err(FormatError::Invalid {
                    path: path.into(),
                    message: format!("{name}: bad cell {from} -> {to} ({} of {})", c.broken, c.total),
                });
            }
        }
        out.insert(name, matrix);
    }
    Ok(out)
}

/// Grid with one row per from-version, one column per to-version,
/// each cell the percentage of builds broken.
pub fn render_matrix(matrix: &UpgradeMatrix) -> String {
    let mut froms: Vec<&Version> = matrix.cells().map(|(f, _, _)| f).collect();
    let mut tos: Vec<&Version> = matrix.cells().map(|(_, t, _)| t).collect();
    froms.sort();
    froms.dedup();
    tos.sort();
    tos.dedup();
    let width = tos.iter().chain(&froms).map(|v| v.as_str().len()).max().unwrap_or(0).max(6);
    let mut out = format!("{}  (rows: from, columns: to, % broken)\n", matrix.package);
    out.push_str(&format!("{:>width$}", ""));
    for t in &tos {
        out.push_str(&format!(" {:>width$}", t.as_str()));
    }
    out.push('\n');
    for f in &froms {
        out.push_str(&format!("{:>width$}", f.as_str()));
        for t in &tos {
            let cell = match matrix.cell(f, t) {
                Some(s) => format!("{:.1}", s.percent()),
                None => "-".to_string(),
            };
            out.push_str(&format!(" {cell:>width$}"));
        }
        out.push('\n');
    }
    out
}
