//! Search over the version-configuration space: feedback-directed search
//! and the uninformed iterative-deepening baseline. Candidates are served
//! round-robin, one validation per turn.

mod mutator;

pub use mutator::{jump_targets, lanes_for, Iddfs, Lane, MatrixStream, Moves, Mutator, Step};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{DriftInstance, EnvError, EnvironmentSpec, Patch};
use crate::matrix::UpgradeMatrix;
use crate::universe::{KnowledgeBase, PackageIndex};
use crate::validation::{is_fixable, is_fixed, localize_fault, Checkpoint, ContractViolation, Status, ValidationResult};

/// The validator itself broke, as opposed to the snippet failing.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendFailure {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("backend returned an invalid result: {0}")]
    Contract(#[from] ContractViolation),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("no candidate environments")]
    NoCandidates,
    #[error(transparent)]
    Backend(#[from] BackendFailure),
    #[error(transparent)]
    Environment(#[from] EnvError),
}

/// Configures an environment and runs the snippet in it.
pub trait Validator {
    fn validate(&mut self, env: &EnvironmentSpec) -> Result<ValidationResult, BackendFailure>;
}

/// Time elapsed since the search started.
pub trait Clock {
    fn elapsed(&self) -> Duration;
}

/// A clock that never advances, for backends where wall time is irrelevant.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn elapsed(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub wall_clock_limit: Duration,
    pub max_validations: Option<u64>,
}

impl SearchBudget {
    pub fn new(wall_clock_limit: Duration) -> Self {
        assert!(wall_clock_limit > Duration::ZERO, "wall clock limit must be positive");
        SearchBudget { wall_clock_limit, max_validations: None }
    }

    pub fn with_max_validations(mut self, max: u64) -> Self {
        self.max_validations = Some(max);
        self
    }

    fn exceeded(&self, elapsed: Duration, validations: u64) -> bool {
        elapsed >= self.wall_clock_limit || self.max_validations.is_some_and(|m| validations >= m)
    }
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget::new(Duration::from_secs(3600))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Working,
    NotFixable,
    SpaceExhausted,
    Budget,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub origin: String,
    pub validations: u64,
    /// Mutations in the drift patches this candidate certified.
    pub mutations: usize,
    /// How the candidate stopped; absent when the run ended while it was live.
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationLogEntry {
    pub origin: String,
    pub env_key: String,
    pub status: Status,
    pub exception_name: Option<String>,
    pub snippet_line: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub working_env: Option<EnvironmentSpec>,
    pub drift_instances: Vec<DriftInstance>,
    pub termination: Termination,
    pub validations_total: u64,
    pub per_candidate_stats: Vec<CandidateStats>,
    pub log: Vec<ValidationLogEntry>,
}

/// Read-only inputs shared by every candidate of a run.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub index: &'a PackageIndex,
    pub kb: &'a KnowledgeBase,
    pub matrices: &'a BTreeMap<String, UpgradeMatrix>,
}

/// What a strategy decided after one validation.
enum Verdict {
    Continue,
    Halt(Termination),
    Working,
}

/// Per-candidate strategy state.
trait Strategy {
    fn next_env(&mut self, ctx: &SearchContext<'_>, visited: &BTreeSet<String>) -> Result<Option<Step>, SearchError>;
    fn observe(&mut self, ctx: &SearchContext<'_>, step: Step, result: ValidationResult, validations: u64) -> Verdict;
    fn drift(&self) -> &[DriftInstance];
}

struct Run<S> {
    origin: String,
    strategy: S,
    visited: BTreeSet<String>,
    validations: u64,
    halted: Option<Termination>,
}

/// Round-robin driver shared by both strategies.
fn drive<S: Strategy>(
    mut runs: Vec<Run<S>>,
    ctx: &SearchContext<'_>,
    validator: &mut dyn Validator,
    budget: &SearchBudget,
    clock: &dyn Clock,
) -> Result<SearchOutcome, SearchError> {
    if runs.is_empty() {
        return Err(SearchError::NoCandidates);
    }
    let mut log = Vec::new();
    let mut total = 0u64;
    let mut working_env = None;
    let mut over_budget = false;
    'rounds: while runs.iter().any(|r| r.halted.is_none()) {
        for run in runs.iter_mut().filter(|r| r.halted.is_none()) {
            let Some(step) = run.strategy.next_env(ctx, &run.visited)? else {
                run.halted = Some(Termination::SpaceExhausted);
                continue;
            };
            if budget.exceeded(clock.elapsed(), total) {
                over_budget = true;
                break 'rounds;
            }
            let result = validator.validate(&step.env)?;
            result.check().map_err(BackendFailure::from)?;
            total += 1;
            run.validations += 1;
            run.visited.insert(step.env.key());
            log.push(ValidationLogEntry {
                origin: run.origin.clone(),
                env_key: step.env.key(),
                status: result.status,
                exception_name: result.exception_name.clone(),
                snippet_line: result.snippet_line,
            });
            let env = step.env.clone();
            match run.strategy.observe(ctx, step, result, run.validations) {
                Verdict::Continue => {}
                Verdict::Halt(t) => run.halted = Some(t),
                Verdict::Working => {
                    run.halted = Some(Termination::Working);
                    working_env = Some(env);
                    break 'rounds;
                }
            }
        }
    }
    let termination = if working_env.is_some() {
        Termination::Working
    } else if over_budget {
        Termination::Budget
    } else {
        let ended: Vec<Termination> = runs.iter().filter_map(|r| r.halted).collect();
        [Termination::NotFixable, Termination::Inconclusive]
            .into_iter()
            .find(|t| ended.contains(t))
            .unwrap_or(Termination::SpaceExhausted)
    };
    let mut drift_instances: Vec<DriftInstance> = Vec::new();
    for d in runs.iter().flat_map(|r| r.strategy.drift()) {
        // the same patch fixing the same line under another runtime is one instance,
        // even though the runtimes name the exception differently
        if !drift_instances.iter().any(|e| e.checkpoint.snippet_line == d.checkpoint.snippet_line && e.patch == d.patch) {
            drift_instances.push(d.clone());
        }
    }
    let per_candidate_stats = runs
        .iter()
        .map(|r| CandidateStats {
            origin: r.origin.clone(),
            validations: r.validations,
            mutations: r.strategy.drift().iter().map(|d| d.patch.len()).sum(),
            termination: r.halted,
        })
        .collect();
    Ok(SearchOutcome { working_env, drift_instances, termination, validations_total: total, per_candidate_stats, log })
}

struct Feedback {
    candidate: EnvironmentSpec,
    checkpoint: Option<(Checkpoint, EnvironmentSpec)>,
    localized: Option<String>,
    mutator: Option<Mutator>,
    since_checkpoint: u64,
    drift: Vec<DriftInstance>,
}

impl Feedback {
    fn select_mutator(&mut self, ctx: &SearchContext<'_>) {
        let (checkpoint, env) = self.checkpoint.as_ref().expect("mutator follows a checkpoint");
        self.localized = localize_fault(&checkpoint.result, env, ctx.kb);
        self.mutator = Some(match &self.localized {
            Some(pkg) => match ctx.matrices.get(pkg) {
                Some(matrix) => {
                    let current = env.pinned(pkg).expect("localized package is installed");
                    Mutator::Matrix(MatrixStream::new(env.clone(), pkg.clone(), jump_targets(matrix, current, ctx.index)))
                }
                None => Mutator::Iddfs(Iddfs::new(env.clone(), Vec::new(), alloc::vec![Lane::semver(pkg.clone())])),
            },
            None => Mutator::Iddfs(Iddfs::new(env.clone(), Vec::new(), lanes_for(env, ctx.matrices, ctx.index))),
        });
    }

    /// Makes `result` the checkpoint; returns whether the search goes on.
    fn set_checkpoint(&mut self, ctx: &SearchContext<'_>, env: EnvironmentSpec, result: ValidationResult) -> bool {
        let fixable = is_fixable(&result, &env, ctx.kb).unwrap_or(false);
        let key = env.key();
        self.checkpoint = Some((Checkpoint { result, env_at_checkpoint: key, mutations_since: Patch::default() }, env));
        self.since_checkpoint = 0;
        if fixable {
            self.select_mutator(ctx);
        }
        fixable
    }
}

impl Strategy for Feedback {
    fn next_env(&mut self, ctx: &SearchContext<'_>, visited: &BTreeSet<String>) -> Result<Option<Step>, SearchError> {
        match &mut self.mutator {
            None if self.checkpoint.is_none() => Ok(Some(Step { env: self.candidate.clone(), path: Vec::new() })),
            None => Ok(None),
            Some(m) => Ok(m.next_step(ctx.index, visited)?),
        }
    }

    fn observe(&mut self, ctx: &SearchContext<'_>, step: Step, result: ValidationResult, _validations: u64) -> Verdict {
        self.since_checkpoint += 1;
        let Some((checkpoint, checkpoint_env)) = &self.checkpoint else {
            return match result.status {
                Status::Success => Verdict::Working,
                Status::Timeout => Verdict::Halt(Termination::Inconclusive),
                Status::Exception if self.set_checkpoint(ctx, step.env, result) => Verdict::Continue,
                Status::Exception => Verdict::Halt(Termination::NotFixable),
            };
        };
        if is_fixed(checkpoint, &result) {
            self.drift.push(DriftInstance {
                checkpoint: checkpoint.result.clone(),
                environment: checkpoint_env.clone(),
                patch: Patch::from(step.path),
                validations_spent: self.since_checkpoint,
                localized_package: self.localized.clone(),
            });
            if result.is_success() {
                return Verdict::Working;
            }
            self.mutator = None;
            return if self.set_checkpoint(ctx, step.env, result) {
                Verdict::Continue
            } else {
                Verdict::Halt(Termination::NotFixable)
            };
        }
        if result.status == Status::Timeout {
            return Verdict::Halt(Termination::Inconclusive);
        }
        Verdict::Continue
    }

    fn drift(&self) -> &[DriftInstance] {
        &self.drift
    }
}

/// Feedback-directed search over every candidate. The first failure becomes the
/// checkpoint; each validation that gets further into the snippet certifies
/// the mutations since the last checkpoint as a drift instance and becomes
/// the new checkpoint. After each checkpoint update the fault is localized
/// and a mutator chosen: matrix jumps for a localized package with a matrix,
/// semver deepening over that package otherwise, or deepening over all
/// packages when localization fails.
///
/// A candidate stops on success (which ends the whole run), on a failure
/// judged not fixable, on a timeout, or when its mutator runs dry.
pub fn feedback_directed_search(
    candidates: &[EnvironmentSpec],
    validator: &mut dyn Validator,
    ctx: &SearchContext<'_>,
    budget: &SearchBudget,
    clock: &dyn Clock,
) -> Result<SearchOutcome, SearchError> {
    let runs = candidates
        .iter()
        .map(|c| Run {
            origin: c.origin.clone(),
            strategy: Feedback {
                candidate: c.clone(),
                checkpoint: None,
                localized: None,
                mutator: None,
                since_checkpoint: 0,
                drift: Vec::new(),
            },
            visited: BTreeSet::new(),
            validations: 0,
            halted: None,
        })
        .collect();
    drive(runs, ctx, validator, budget, clock)
}

struct Exhaustive {
    walk: Iddfs,
}

impl Strategy for Exhaustive {
    fn next_env(&mut self, ctx: &SearchContext<'_>, visited: &BTreeSet<String>) -> Result<Option<Step>, SearchError> {
        Ok(self.walk.next_step(ctx.index, visited)?)
    }

    fn observe(&mut self, _: &SearchContext<'_>, _: Step, result: ValidationResult, _: u64) -> Verdict {
        if result.is_success() {
            Verdict::Working
        } else {
            Verdict::Continue
        }
    }

    fn drift(&self) -> &[DriftInstance] {
        &[]
    }
}

/// Uninformed iterative deepening from each candidate over all of its
/// packages using only the semver operators, until some configuration
/// succeeds or the operator closure is exhausted.
pub fn iddfs_baseline(
    candidates: &[EnvironmentSpec],
    validator: &mut dyn Validator,
    ctx: &SearchContext<'_>,
    budget: &SearchBudget,
    clock: &dyn Clock,
) -> Result<SearchOutcome, SearchError> {
    let runs = candidates
        .iter()
        .map(|c| {
            let lanes = c.deps.iter().map(|p| Lane::semver(p.package.clone())).collect();
            Run {
                origin: c.origin.clone(),
                strategy: Exhaustive { walk: Iddfs::new(c.clone(), Vec::new(), lanes) },
                visited: BTreeSet::new(),
                validations: 0,
                halted: None,
            }
        })
        .collect();
    drive(runs, ctx, validator, budget, clock)
}

#[cfg(test)]
mod tests;
