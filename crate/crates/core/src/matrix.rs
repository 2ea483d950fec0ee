//! Version upgrade matrices mined from single-dependency upgrade events,
//! and the downgrade ordering derived from them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::version::Version;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildStatus {
    Passing,
    Failing,
    Canceled,
    Errored,
}

impl BuildStatus {
    fn is_conclusive(self) -> bool {
        matches!(self, BuildStatus::Passing | BuildStatus::Failing)
    }
}

/// A CI build before and after a commit that upgraded one dependency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpgradeEvent {
    pub package: String,
    pub from_version: Version,
    pub to_version: Version,
    pub status_before: BuildStatus,
    pub status_after: BuildStatus,
    /// Bot or dataset the event came from; audit only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub total_builds: u64,
    pub broken_builds: u64,
}

impl CellStats {
    pub fn percent(&self) -> f64 {
        if self.total_builds == 0 {
            return 0.0;
        }
        self.broken_builds as f64 * 100.0 / self.total_builds as f64
    }

    /// Compares breakage rates exactly.
    fn cmp_rate(&self, other: &CellStats) -> Ordering {
        let lhs = u128::from(self.broken_builds) * u128::from(other.total_builds);
        let rhs = u128::from(other.broken_builds) * u128::from(self.total_builds);
        lhs.cmp(&rhs)
    }

    fn merge(&mut self, other: CellStats) {
        self.total_builds += other.total_builds;
        self.broken_builds += other.broken_builds;
    }
}

/// Per-package upgrade statistics keyed by `(from, to)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpgradeMatrix {
    pub package: String,
    cells: BTreeMap<(Version, Version), CellStats>,
}

impl UpgradeMatrix {
    pub fn new(package: impl Into<String>) -> Self {
        UpgradeMatrix { package: package.into(), cells: BTreeMap::new() }
    }

    /// Adds counts to a cell. Empty or inconsistent counts are ignored so
    /// the matrix never holds a cell with zero builds or more broken builds
    /// than total ones.
    pub fn add(&mut self, from: Version, to: Version, stats: CellStats) -> bool {
        if stats.total_builds == 0 || stats.broken_builds > stats.total_builds || from == to {
            return false;
        }
        self.cells.entry((from, to)).or_default().merge(stats);
        true
    }

    pub fn cell(&self, from: &Version, to: &Version) -> Option<CellStats> {
        self.cells.get(&(from.clone(), to.clone())).copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Version, &Version, CellStats)> {
        self.cells.iter().map(|((f, t), s)| (f, t, *s))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn merge(&mut self, other: &UpgradeMatrix) {
        for (from, to, stats) in other.cells() {
            self.add(from.clone(), to.clone(), stats);
        }
    }
}

/// Matrices per package plus counts of events that were left out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatrixBuild {
    pub matrices: BTreeMap<String, UpgradeMatrix>,
    /// Events with a canceled or errored build on either side.
    pub inconclusive: usize,
    /// Events that cannot be an upgrade (same version on both sides).
    pub malformed: usize,
}

/// Aggregates upgrade events. A build counts as broken by the upgrade when
/// it went from passing to failing.
pub fn build_matrix(events: &[UpgradeEvent]) -> MatrixBuild {
    let mut out = MatrixBuild::default();
    for e in events {
        if e.from_version == e.to_version {
            out.malformed += 1;
            continue;
        }
        if !e.status_before.is_conclusive() || !e.status_after.is_conclusive() {
            out.inconclusive += 1;
            continue;
        }
        let broken = e.status_before == BuildStatus::Passing && e.status_after == BuildStatus::Failing;
        out.matrices
            .entry(e.package.clone())
            .or_insert_with(|| UpgradeMatrix::new(e.package.clone()))
            .add(
                e.from_version.clone(),
                e.to_version.clone(),
                CellStats { total_builds: 1, broken_builds: u64::from(broken) },
            );
    }
    out
}

/// Downgrade targets ordered for exploration.
///
/// Breaking upgrades `from -> to` with `to <= current` are grouped by `to`,
/// newest first; each group contributes its `from` versions by descending
/// breakage rate (ties: newer first), skipping versions already placed.
pub fn exploration_order(matrix: &UpgradeMatrix, current: &Version) -> Vec<Version> {
    let mut groups: BTreeMap<&Version, Vec<(&Version, CellStats)>> = BTreeMap::new();
    for (from, to, stats) in matrix.cells() {
        if stats.broken_builds > 0 && to <= current {
            groups.entry(to).or_default().push((from, stats));
        }
    }
    let mut placed = BTreeSet::new();
    let mut order = Vec::new();
    for (_, mut sources) in groups.into_iter().rev() {
        sources.sort_by(|(va, sa), (vb, sb)| sb.cmp_rate(sa).then_with(|| vb.cmp(va)));
        for (from, _) in sources {
            if placed.insert(from) {
                order.push(from.clone());
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn v(s: &str) -> Version {
        Version::parse(s).unwrap()
    }

    fn event(pkg: &str, from: &str, to: &str, before: BuildStatus, after: BuildStatus) -> UpgradeEvent {
        UpgradeEvent {
            package: pkg.to_string(),
            from_version: v(from),
            to_version: v(to),
            status_before: before,
            status_after: after,
            source: None,
        }
    }

    use BuildStatus::*;

    #[test]
    fn counts_breakage() {
        let events = vec![
            event("wheel", "0.29.0", "0.31.0", Passing, Failing),
            event("wheel", "0.29.0", "0.31.0", Passing, Failing),
            event("wheel", "0.29.0", "0.31.0", Passing, Failing),
            event("wheel", "0.29.0", "0.31.0", Passing, Passing),
        ];
        let build = build_matrix(&events);
        let cell = build.matrices["wheel"].cell(&v("0.29.0"), &v("0.31.0")).unwrap();
        assert_eq!(cell, CellStats { total_builds: 4, broken_builds: 3 });
        assert_eq!(cell.percent(), 75.0);
    }

    #[test]
    fn inconclusive_builds_are_excluded() {
        let events = vec![
            event("wheel", "0.29.0", "0.31.0", Errored, Failing),
            event("wheel", "0.29.0", "0.31.0", Passing, Canceled),
            event("wheel", "0.30.0", "0.30.0", Passing, Failing),
        ];
        let build = build_matrix(&events);
        assert!(build.matrices.is_empty());
        assert_eq!((build.inconclusive, build.malformed), (2, 1));
        assert!(build_matrix(&[]).matrices.is_empty());
    }

    #[test]
    fn failing_before_upgrade_is_not_breakage() {
        let build = build_matrix(&[event("p", "1.0", "2.0", Failing, Failing), event("p", "1.0", "2.0", Failing, Passing)]);
        assert_eq!(build.matrices["p"].cell(&v("1.0"), &v("2.0")), Some(CellStats { total_builds: 2, broken_builds: 0 }));
    }

    fn matrix(cells: &[(&str, &str, u64, u64)]) -> UpgradeMatrix {
        let mut m = UpgradeMatrix::new("p");
        for (from, to, total, broken) in cells {
            m.add(v(from), v(to), CellStats { total_builds: *total, broken_builds: *broken });
        }
        m
    }

    /// Literal two-phase construction: sort all admissible pairs by `to`
    /// descending, then walk each `to` group sorted by breakage.
    fn oracle(cells: &[(&str, &str, u64, u64)], current: &str) -> Vec<String> {
        let cur = v(current);
        let mut pairs: Vec<(Version, Version, f64)> = cells
            .iter()
            .filter(|(_, to, _, broken)| *broken > 0 && v(to) <= cur)
            .map(|(from, to, total, broken)| (v(to), v(from), *broken as f64 / *total as f64))
            .collect();
        pairs.sort_by(|a, b| b.0.cmp(&a.0));
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        while i < pairs.len() {
            let mut j = i;
            while j < pairs.len() && pairs[j].0 == pairs[i].0 {
                j += 1;
            }
            let mut group = pairs[i..j].to_vec();
            group.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then_with(|| b.1.cmp(&a.1)));
            for (_, from, _) in group {
                if !out.contains(&from.to_string()) {
                    out.push(from.to_string());
                }
            }
            i = j;
        }
        out
    }

    fn names(vs: &[Version]) -> Vec<String> {
        vs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn sphinx_single_breaking_pair() {
        let m = matrix(&[("1.4.5", "1.7.5", 3, 1), ("1.7.5", "1.8.0", 2, 0)]);
        assert_eq!(names(&exploration_order(&m, &v("2.0.1"))), vec!["1.4.5"]);
    }

    #[test]
    fn nothing_admissible_below_every_target() {
        let m = matrix(&[("1.4.5", "1.7.5", 3, 1)]);
        assert!(exploration_order(&m, &v("1.7.0")).is_empty());
    }

    #[test]
    fn groups_then_breakage_rate() {
        let cells = [("2.0.0", "3.0.0", 10, 5), ("1.0.0", "3.0.0", 10, 8), ("2.0.0", "2.5.0", 10, 1)];
        let m = matrix(&cells);
        let got = names(&exploration_order(&m, &v("3.1.0")));
        assert_eq!(got, oracle(&cells, "3.1.0"));
        assert_eq!(got, vec!["1.0.0", "2.0.0"]);
    }

    #[test]
    fn equal_rates_prefer_newer_source() {
        let cells = [("1.0.0", "3.0.0", 4, 2), ("2.0.0", "3.0.0", 2, 1)];
        assert_eq!(names(&exploration_order(&matrix(&cells), &v("3.0.0"))), vec!["2.0.0", "1.0.0"]);
    }

    #[test]
    fn invalid_cells_are_rejected() {
        let mut m = UpgradeMatrix::new("p");
        assert!(!m.add(v("1.0"), v("2.0"), CellStats { total_builds: 0, broken_builds: 0 }));
        assert!(!m.add(v("1.0"), v("2.0"), CellStats { total_builds: 1, broken_builds: 2 }));
        assert!(m.is_empty());
    }

    fn arb_cells() -> impl Strategy<Value = Vec<(String, String, u64, u64)>> {
        let ver = (0u64..4, 0u64..4).prop_map(|(a, b)| alloc::format!("{a}.{b}.0"));
        proptest::collection::vec((ver.clone(), ver, 1u64..6, 0u64..6), 0..20).prop_map(|cells| {
            let mut seen = BTreeSet::new();
            cells
                .into_iter()
                .filter(|(f, t, _, _)| f != t && seen.insert((f.clone(), t.clone())))
                .map(|(f, t, total, broken)| (f, t, total, broken.min(total)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ordering_matches_literal_oracle(cells in arb_cells(), cur in (0u64..5, 0u64..5)) {
            let current = alloc::format!("{}.{}.0", cur.0, cur.1);
            let refs: Vec<(&str, &str, u64, u64)> = cells.iter().map(|(f, t, a, b)| (f.as_str(), t.as_str(), *a, *b)).collect();
            let m = matrix(&refs);
            let got = exploration_order(&m, &v(&current));
            prop_assert_eq!(names(&got), oracle(&refs, &current));
            let unique: BTreeSet<&Version> = got.iter().collect();
            prop_assert_eq!(unique.len(), got.len());
            for x in &got {
                prop_assert!(m.cells().any(|(f, t, s)| f == x && t <= &v(&current) && s.broken_builds > 0));
            }
        }

        #[test]
        fn percentages_are_bounded(evs in proptest::collection::vec((0u64..3, 0u64..3, 0usize..4, 0usize..4), 0..40)) {
            let statuses = [Passing, Failing, Canceled, Errored];
            let events: Vec<UpgradeEvent> = evs.iter().map(|(a, b, s1, s2)| {
                event("p", &alloc::format!("{a}.0"), &alloc::format!("{b}.0"), statuses[*s1], statuses[*s2])
            }).collect();
            let build = build_matrix(&events);
            let kept: u64 = build.matrices.values().flat_map(|m| m.cells().map(|(_, _, s)| s.total_builds)).sum();
            prop_assert_eq!(kept as usize + build.inconclusive + build.malformed, events.len());
            for m in build.matrices.values() {
                for (_, _, s) in m.cells() {
                    prop_assert!(s.total_builds > 0);
                    prop_assert!((0.0..=100.0).contains(&s.percent()));
                }
            }
        }
    }
}
