//! Seeded random worlds with drift planted at chosen version boundaries.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ApiTable, CrossImport, SimSnippet, SimWorld, Statement};
use crate::env::Runtime;
use crate::matrix::{BuildStatus, UpgradeEvent};
use crate::universe::{PackageIndex, ReleaseRecord, SnippetKind, SnippetManifest};
use crate::version::Version;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioKnobs {
    pub packages: usize,
    pub versions: usize,
    pub drifts: usize,
}

/// How a planted drift breaks the snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// A symbol the snippet imports by name disappears.
    RemovedImport,
    /// A function the snippet calls disappears.
    RemovedFunction,
    /// A function the snippet calls changes arity.
    ChangedArity,
    /// A module another package imports at load time disappears.
    RemovedDependencyModule,
}

/// A drift planted in `package`: releases from `boundary` on break the snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededDrift {
    pub package: String,
    pub boundary: Version,
    pub kind: DriftKind,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: SimWorld,
    pub snippet: SimSnippet,
    pub manifest: SnippetManifest,
    pub drifts: Vec<SeededDrift>,
    /// The snippet also raises an error of its own after the imports.
    pub has_local_bug: bool,
}

fn pkg_name(i: usize) -> String {
    format!("pkg{i}")
}

/// Distinct `(major, minor)` levels, one release each, ascending.
fn release_line(rng: &mut ChaCha8Rng, count: usize) -> Vec<Version> {
    let mut major = rng.gen_range(0..2u64);
    let mut minor = rng.gen_range(0..3u64);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            if rng.gen_bool(0.35) {
                major += 1;
                minor = 0;
            } else {
                minor += 1;
            }
        }
        let patch = rng.gen_range(0..4u64);
        out.push(Version::parse(&format!("{major}.{minor}.{patch}")).expect("generated versions parse"));
    }
    out
}

/// Builds a world of `knobs.packages` packages with `knobs.versions`
/// releases each and plants `knobs.drifts` breaking changes. The snippet
/// always touches every drifted API, and every package is installed.
pub fn generate_scenario(seed: u64, knobs: ScenarioKnobs) -> Scenario {
    assert!(knobs.packages > 0 && knobs.versions > 0, "scenario needs packages and versions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = knobs.packages;
    let releases: Vec<Vec<Version>> = (0..n).map(|_| release_line(&mut rng, knobs.versions)).collect();

    // imported[i]: the snippet imports package i directly; the last one always
    let imported: Vec<bool> = (0..n).map(|i| i + 1 == n || rng.gen_bool(0.6)).collect();
    let mut edges: Vec<BTreeSet<usize>> = alloc::vec![BTreeSet::new(); n];
    for i in 1..n {
        if !imported[i - 1] || rng.gen_bool(0.4) {
            edges[i].insert(i - 1);
        }
        for j in 0..i.saturating_sub(1) {
            if rng.gen_bool(0.2) {
                edges[i].insert(j);
            }
        }
    }

    // stable exports every release carries
    let arities: Vec<Vec<u32>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(0..4)).collect()).collect();
    let mut api: BTreeMap<(String, Version), ApiTable> = BTreeMap::new();
    for (i, versions) in releases.iter().enumerate() {
        for v in versions {
            let mut table = ApiTable::new();
            table.insert(pkg_name(i), BTreeMap::new());
            let core: BTreeMap<String, u32> = arities[i].iter().enumerate().map(|(k, a)| (format!("f{k}"), *a)).collect();
            table.insert(format!("{}.core", pkg_name(i)), core);
            api.insert((pkg_name(i), v.clone()), table);
        }
    }

    let importers: Vec<usize> = (0..n).filter(|i| imported[*i]).collect();
    let mut statements: Vec<Statement> = Vec::new();
    for &i in &importers {
        let names = if rng.gen_bool(0.5) { alloc::vec!["f0".to_string()] } else { Vec::new() };
        statements.push(Statement::Import { module: format!("{}.core", pkg_name(i)), names });
    }
    let mut cross_imports: BTreeMap<(String, Version), Vec<CrossImport>> = BTreeMap::new();
    let mut drifts = Vec::new();
    let mut late: Vec<Statement> = Vec::new();
    for d in 0..knobs.drifts {
        let p = rng.gen_range(0..n);
        let versions = &releases[p];
        if versions.len() < 2 {
            continue;
        }
        let b = rng.gen_range(1..versions.len());
        let directly = imported[p];
        let kind = if !directly || rng.gen_bool(0.25) {
            DriftKind::RemovedDependencyModule
        } else {
            *[DriftKind::RemovedImport, DriftKind::RemovedFunction, DriftKind::ChangedArity]
                .choose(&mut rng)
                .expect("non-empty")
        };
        let pkg = pkg_name(p);
        let symbol = format!("d{d}");
        let arity = rng.gen_range(0..3u32);
        for (k, v) in versions.iter().enumerate() {
            let table = api.get_mut(&(pkg.clone(), v.clone())).expect("table exists");
            let broken = k >= b;
            match kind {
                DriftKind::RemovedImport | DriftKind::RemovedFunction => {
                    if !broken {
                        table.get_mut(&format!("{pkg}.core")).expect("core module").insert(symbol.clone(), arity);
                    }
                }
                DriftKind::ChangedArity => {
                    let a = if broken { arity + 1 } else { arity };
                    table.get_mut(&format!("{pkg}.core")).expect("core module").insert(symbol.clone(), a);
                }
                DriftKind::RemovedDependencyModule => {
                    if !broken {
                        table.insert(format!("{pkg}.legacy{d}"), BTreeMap::new());
                    }
                }
            }
        }
        match kind {
            DriftKind::RemovedImport => {
                late.push(Statement::Import { module: format!("{pkg}.core"), names: alloc::vec![symbol] });
            }
            DriftKind::RemovedFunction | DriftKind::ChangedArity => {
                late.push(Statement::Call { module: format!("{pkg}.core"), symbol, args: arity });
            }
            DriftKind::RemovedDependencyModule => {
                // some other directly imported package loads the module
                let choices: Vec<usize> = importers.iter().copied().filter(|&q| q != p).collect();
                let q = choices.choose(&mut rng).copied().unwrap_or(p);
                for v in &releases[q] {
                    let list = cross_imports.entry((pkg_name(q), v.clone())).or_default();
                    let line = list.len() as u32 + 3;
                    list.push(CrossImport { module: format!("{pkg}.legacy{d}"), provider: pkg.clone(), line: Some(line) });
                }
            }
        }
        drifts.push(SeededDrift { package: pkg, boundary: versions[b].clone(), kind });
    }
    late.shuffle(&mut rng);
    statements.extend(late);
    for _ in 0..rng.gen_range(0..3) {
        let i = *importers.choose(&mut rng).expect("at least one importer");
        let k = rng.gen_range(0..3);
        statements.push(Statement::Call { module: format!("{}.core", pkg_name(i)), symbol: format!("f{k}"), args: arities[i][k] });
    }
    let has_local_bug = rng.gen_bool(0.15);
    if has_local_bug {
        statements.push(Statement::RaiseLocal { name: "NameError".into(), message: "name 'result' is not defined".into() });
    }

    let index = PackageIndex::new(
        releases.iter().enumerate().map(|(i, versions)| {
            let deps: Vec<String> = edges[i].iter().map(|&j| pkg_name(j)).collect();
            let records = versions.iter().map(|v| ReleaseRecord { version: v.clone(), deps: deps.clone() }).collect();
            (pkg_name(i), records)
        }),
        false,
    )
    .expect("generated dependencies point at generated packages");
    let world = SimWorld::new(index, api, cross_imports, BTreeSet::from(["os".to_string(), "sys".to_string()]), seed)
        .expect("generated world is consistent");
    let snippet = SimSnippet::new(statements);
    let runtime_candidates = if rng.gen_bool(0.2) { alloc::vec![Runtime::Py2, Runtime::Py3] } else { alloc::vec![Runtime::Py3] };
    let manifest = SnippetManifest {
        snippet_id: format!("scenario-{seed}"),
        kind: SnippetKind::Script,
        cell_count: 0,
        imports: snippet.imported_modules(),
        runtime_candidates,
        source: None,
    };
    Scenario { world, snippet, manifest, drifts, has_local_bug }
}

/// Single-dependency upgrade events consistent with the planted drifts:
/// upgrades that cross a drift boundary fail, others pass. Packages without
/// drift get no events.
pub fn scenario_events(scenario: &Scenario, seed: u64) -> Vec<UpgradeEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut events = Vec::new();
    let drifted: BTreeSet<&str> = scenario.drifts.iter().map(|d| d.package.as_str()).collect();
    for pkg in drifted {
        let Ok(history) = scenario.world.index().history(pkg) else { continue };
        let boundaries: Vec<&Version> = scenario.drifts.iter().filter(|d| d.package == pkg).map(|d| &d.boundary).collect();
        let releases = history.releases();
        for (i, from) in releases.iter().enumerate() {
            for to in &releases[i + 1..] {
                if !rng.gen_bool(0.5) {
                    continue;
                }
                let crosses = boundaries.iter().any(|b| from < *b && *b <= to);
                let status_after = if crosses { BuildStatus::Failing } else { BuildStatus::Passing };
                events.push(UpgradeEvent {
                    package: pkg.to_string(),
                    from_version: from.clone(),
                    to_version: to.clone(),
                    status_before: BuildStatus::Passing,
                    status_after,
                    source: Some("generated".into()),
                });
            }
        }
    }
    events
}
