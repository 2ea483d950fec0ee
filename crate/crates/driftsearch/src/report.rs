//! Search reports and the summary folded from many of them.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use driftsearch_core::search::{CandidateStats, SearchOutcome, Termination, ValidationLogEntry};
use driftsearch_core::universe::BrokenEdge;
use driftsearch_core::{Patch, ValidationResult};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub snippet: String,
    pub checkpoint: ValidationResult,
    /// Key of the environment the checkpoint failed in.
    pub environment: String,
    pub patch: Patch,
    pub validations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localized: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    /// Seconds since the epoch; the only field that varies between identical runs.
    pub generated_at: u64,
    pub command: String,
    pub snippet: String,
    pub backend: String,
    pub termination: Termination,
    pub validations_total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_env: Option<String>,
    pub drift: Vec<DriftEntry>,
    pub candidates: Vec<CandidateStats>,
    /// Dependency edges ignored to install a cycle.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub broken_edges: Vec<BrokenEdge>,
    pub log: Vec<ValidationLogEntry>,
}

impl Report {
    pub fn new(command: &str, snippet: &str, backend: &str, outcome: &SearchOutcome) -> Self {
        let drift = outcome
            .drift_instances
            .iter()
            .map(|d| DriftEntry {
                snippet: snippet.to_string(),
                checkpoint: d.checkpoint.clone(),
                environment: d.environment.key(),
                patch: d.patch.clone(),
                validations: d.validations_spent,
                localized: d.localized_package.clone(),
            })
            .collect();
        Report {
            generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            command: command.to_string(),
            snippet: snippet.to_string(),
            backend: backend.to_string(),
            termination: outcome.termination,
            validations_total: outcome.validations_total,
            working_env: outcome.working_env.as_ref().map(|e| e.key()),
            drift,
            candidates: outcome.per_candidate_stats.clone(),
            broken_edges: Vec::new(),
            log: outcome.log.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Counts over a set of reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub reports: usize,
    pub by_termination: BTreeMap<String, usize>,
    pub snippets_with_drift: usize,
    pub drift_instances: usize,
    pub validations: u64,
    /// Mutations per drift patch, keyed by patch length.
    pub patch_lengths: BTreeMap<usize, usize>,
    /// Drift instances per localized package, or "(none)".
    pub localized: BTreeMap<String, usize>,
}

impl Summary {
    pub fn add(&mut self, report: &Report) {
        self.reports += 1;
        *self.by_termination.entry(format!("{:?}", report.termination)).or_default() += 1;
        if !report.drift.is_empty() {
            self.snippets_with_drift += 1;
        }
        self.drift_instances += report.drift.len();
        self.validations += report.validations_total;
        for d in &report.drift {
            *self.patch_lengths.entry(d.patch.len()).or_default() += 1;
            *self.localized.entry(d.localized.clone().unwrap_or_else(|| "(none)".into())).or_default() += 1;
        }
    }
}
