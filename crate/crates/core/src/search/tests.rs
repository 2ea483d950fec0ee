use super::*;
use crate::env::{Mutation, MutationOp, Pin, Runtime};
use crate::matrix::CellStats;
use crate::sim::tests::{theano_lasagne, sklearn_keras, sphinx, with_pin, Fixture};
use crate::sim::{operator_closure, simulate_validation, SimValidator};
use crate::validation::{FrameOrigin, StackFrame};
use crate::version::Version;
use alloc::string::ToString;
use alloc::vec;

fn v(s: &str) -> Version {
    Version::parse(s).unwrap()
}

fn no_matrices() -> BTreeMap<String, UpgradeMatrix> {
    BTreeMap::new()
}

fn budget() -> SearchBudget {
    SearchBudget::default()
}

fn fds(f: &Fixture, cands: &[EnvironmentSpec], matrices: &BTreeMap<String, UpgradeMatrix>) -> SearchOutcome {
    let kb = f.kb();
    let ctx = SearchContext { index: f.world.index(), kb: &kb, matrices };
    let mut validator = SimValidator { world: &f.world, snippet: &f.snippet, budget: Duration::from_secs(60) };
    feedback_directed_search(cands, &mut validator, &ctx, &budget(), &FrozenClock).unwrap()
}

fn baseline(f: &Fixture, cands: &[EnvironmentSpec]) -> SearchOutcome {
    let kb = f.kb();
    let matrices = no_matrices();
    let ctx = SearchContext { index: f.world.index(), kb: &kb, matrices: &matrices };
    let mut validator = SimValidator { world: &f.world, snippet: &f.snippet, budget: Duration::from_secs(60) };
    iddfs_baseline(cands, &mut validator, &ctx, &budget(), &FrozenClock).unwrap()
}

fn revalidate(f: &Fixture, env: &EnvironmentSpec) -> ValidationResult {
    simulate_validation(&f.snippet, env, &f.world, Duration::ZERO).unwrap()
}

#[test]
fn theano_lasagne_two_mutations_three_validations() {
    let f = theano_lasagne();
    let out = fds(&f, &f.candidates(), &no_matrices());
    assert_eq!(out.termination, Termination::Working);
    assert_eq!(out.validations_total, 3);
    assert_eq!(out.drift_instances.len(), 1);
    let drift = &out.drift_instances[0];
    assert_eq!(
        drift.patch.mutations,
        vec![
            Mutation::new(MutationOp::MajorDecrement, "Theano", v("1.0.4"), v("0.9.0")),
            Mutation::new(MutationOp::MinorDecrement, "Theano", v("0.9.0"), v("0.8.2")),
        ]
    );
    assert_eq!(drift.localized_package.as_deref(), Some("Theano"));
    assert_eq!(drift.validations_spent, 2);
    let working = out.working_env.unwrap();
    assert_eq!(working.deps, vec![Pin::new("Theano", v("0.8.2")), Pin::new("Lasagne", v("0.1"))]);
    assert!(revalidate(&f, &working).is_success());
    assert_eq!(revalidate(&f, &drift.environment), drift.checkpoint);
}

#[test]
fn immediate_success_needs_no_search() {
    let f = theano_lasagne();
    let cands = vec![with_pin(&f.candidates()[0], "Theano", "0.8.2")];
    let out = fds(&f, &cands, &no_matrices());
    assert_eq!((out.termination, out.validations_total, out.drift_instances.len()), (Termination::Working, 1, 0));
}

#[test]
fn sklearn_keras_two_drifts_then_not_fixable() {
    let f = sklearn_keras();
    let out = fds(&f, &f.candidates(), &no_matrices());
    assert_eq!(out.termination, Termination::NotFixable);
    assert!(out.working_env.is_none());
    let patches: Vec<&[Mutation]> = out.drift_instances.iter().map(|d| d.patch.mutations.as_slice()).collect();
    assert_eq!(
        patches,
        vec![
            &[Mutation::new(MutationOp::MinorDecrement, "scikit-learn", v("0.20.3"), v("0.19.2"))][..],
            &[
                Mutation::new(MutationOp::MajorDecrement, "Keras", v("2.2.4"), v("1.2.2")),
                Mutation::new(MutationOp::MajorDecrement, "Keras", v("1.2.2"), v("0.3.3")),
            ][..],
        ]
    );
    // both runtimes reach the same certificates and stop on the local bug
    for stats in &out.per_candidate_stats {
        assert_eq!((stats.validations, stats.mutations, stats.termination), (4, 3, Some(Termination::NotFixable)));
    }
    assert_eq!(out.validations_total, 8);
    assert_eq!(out.log.last().unwrap().exception_name.as_deref(), Some("NameError"));
}

#[test]
fn round_robin_alternates_candidates() {
    let f = sklearn_keras();
    let out = fds(&f, &f.candidates(), &no_matrices());
    let origins: Vec<&str> = out.log.iter().map(|e| e.origin.as_str()).collect();
    for pair in origins.chunks(2) {
        assert_eq!(pair, ["sklearn-keras:py2", "sklearn-keras:py3"]);
    }
}

#[test]
fn sphinx_baseline_sequence() {
    let f = sphinx();
    let out = baseline(&f, &f.candidates());
    let order: Vec<String> = out.log.iter().map(|e| e.env_key.trim_start_matches("py3|Sphinx==").to_string()).collect();
    assert_eq!(order, ["2.0.1", "1.8.5", "0.6.7", "1.7.9", "0.5.2", "1.6.7", "0.4.3", "1.5.6"]);
    assert_eq!(out.termination, Termination::Working);
    assert_eq!(out.validations_total, 8);
}

fn sphinx_matrix() -> BTreeMap<String, UpgradeMatrix> {
    let mut m = UpgradeMatrix::new("Sphinx");
    m.add(v("1.4.5"), v("1.7.5"), CellStats { total_builds: 3, broken_builds: 1 });
    BTreeMap::from([("Sphinx".to_string(), m)])
}

#[test]
fn sphinx_matrix_jump_fixes_at_once() {
    let f = sphinx();
    let out = fds(&f, &f.candidates(), &sphinx_matrix());
    assert_eq!(out.termination, Termination::Working);
    assert_eq!(out.validations_total, 2);
    assert_eq!(
        out.drift_instances[0].patch.mutations,
        vec![Mutation::new(MutationOp::MatrixJump, "Sphinx", v("2.0.1"), v("1.4.5"))]
    );
}

#[test]
fn sphinx_without_matrix_deepens_over_sphinx() {
    let f = sphinx();
    let out = fds(&f, &f.candidates(), &no_matrices());
    assert_eq!(out.termination, Termination::Working);
    assert!(out.validations_total <= 8);
    assert!(revalidate(&f, out.working_env.as_ref().unwrap()).is_success());
}

#[test]
fn baseline_exhausts_exactly_the_operator_closure() {
    let f = sklearn_keras();
    let cands = vec![f.candidates().remove(1)];
    let out = baseline(&f, &cands);
    assert_eq!(out.termination, Termination::SpaceExhausted);
    let validated: Vec<&str> = out.log.iter().map(|e| e.env_key.as_str()).collect();
    let unique: BTreeSet<&str> = validated.iter().copied().collect();
    assert_eq!(unique.len(), validated.len());
    let closure: BTreeSet<String> = operator_closure(&cands[0], f.world.index()).iter().map(|e| e.key()).collect();
    assert_eq!(unique, closure.iter().map(String::as_str).collect());
}

/// Answers from a fixed table, failing at line 1 for anything unlisted.
struct Scripted {
    answers: BTreeMap<String, ValidationResult>,
    calls: u64,
}

impl Validator for Scripted {
    fn validate(&mut self, env: &EnvironmentSpec) -> Result<ValidationResult, BackendFailure> {
        self.calls += 1;
        if env.origin == "broken" {
            return Err(BackendFailure::Backend("executor crashed".into()));
        }
        Ok(self.answers.get(&env.key()).cloned().unwrap_or_else(|| attribute_error(1)))
    }
}

fn attribute_error(line: u32) -> ValidationResult {
    ValidationResult::exception("AttributeError", "module has no attribute", vec![StackFrame::new(FrameOrigin::Snippet, line)], line)
}

fn env(origin: &str, pins: &[(&str, &str)]) -> EnvironmentSpec {
    EnvironmentSpec { runtime: Runtime::Py3, deps: pins.iter().map(|(p, x)| Pin::new(*p, v(x))).collect(), origin: origin.into() }
}

fn scripted(f: &Fixture, cands: &[EnvironmentSpec], answers: &[(EnvironmentSpec, ValidationResult)], budget: &SearchBudget) -> Result<SearchOutcome, SearchError> {
    let kb = f.kb();
    let matrices = no_matrices();
    let ctx = SearchContext { index: f.world.index(), kb: &kb, matrices: &matrices };
    let mut validator = Scripted { answers: answers.iter().map(|(e, r)| (e.key(), r.clone())).collect(), calls: 0 };
    feedback_directed_search(cands, &mut validator, &ctx, budget, &FrozenClock)
}

#[test]
fn first_timeout_is_inconclusive() {
    let f = theano_lasagne();
    let start = f.candidates().remove(0);
    let out = scripted(&f, core::slice::from_ref(&start), &[(start.clone(), ValidationResult::timeout(Some(2)))], &budget()).unwrap();
    assert_eq!((out.termination, out.validations_total), (Termination::Inconclusive, 1));
}

#[test]
fn timeout_after_progress_keeps_drift() {
    let f = theano_lasagne();
    let start = f.candidates().remove(0);
    let answers = [
        (start.clone(), attribute_error(2)),
        (with_pin(&start, "Theano", "0.9.0"), attribute_error(3)),
        (with_pin(&start, "Lasagne", "0.1"), attribute_error(2)),
    ];
    let out = scripted(&f, core::slice::from_ref(&start), &answers, &budget()).unwrap();
    // after the first fix nothing else is listed, so everything fails at line 1
    assert_eq!(out.drift_instances.len(), 1);
    assert_eq!(out.termination, Termination::SpaceExhausted);

    let answers = [
        (start.clone(), attribute_error(2)),
        (with_pin(&start, "Theano", "0.9.0"), attribute_error(3)),
        (with_pin(&start, "Theano", "0.8.2"), ValidationResult::timeout(None)),
    ];
    let out = scripted(&f, &[start], &answers, &budget()).unwrap();
    assert_eq!(out.drift_instances.len(), 1);
    assert_eq!(out.termination, Termination::Inconclusive);
}

#[test]
fn backend_failure_aborts() {
    let f = theano_lasagne();
    let mut start = f.candidates().remove(0);
    start.origin = "broken".into();
    assert!(matches!(scripted(&f, &[start], &[], &budget()), Err(SearchError::Backend(_))));
}

#[test]
fn invalid_result_is_a_backend_failure() {
    let f = theano_lasagne();
    let start = f.candidates().remove(0);
    let mut bad = attribute_error(1);
    bad.exception_name = None;
    assert!(matches!(scripted(&f, core::slice::from_ref(&start), &[(start.clone(), bad)], &budget()), Err(SearchError::Backend(BackendFailure::Contract(_)))));
}

#[test]
fn validation_cap_ends_with_budget() {
    let f = theano_lasagne();
    let start = f.candidates().remove(0);
    let out = scripted(&f, core::slice::from_ref(&start), &[(start.clone(), attribute_error(2))], &budget().with_max_validations(2)).unwrap();
    assert_eq!((out.termination, out.validations_total), (Termination::Budget, 2));
}

struct Late;

impl Clock for Late {
    fn elapsed(&self) -> Duration {
        Duration::from_secs(7200)
    }
}

#[test]
fn wall_clock_is_checked_before_validating() {
    let f = theano_lasagne();
    let kb = f.kb();
    let matrices = no_matrices();
    let ctx = SearchContext { index: f.world.index(), kb: &kb, matrices: &matrices };
    let mut validator = SimValidator { world: &f.world, snippet: &f.snippet, budget: Duration::from_secs(60) };
    let out = feedback_directed_search(&f.candidates(), &mut validator, &ctx, &budget(), &Late).unwrap();
    assert_eq!((out.termination, out.validations_total), (Termination::Budget, 0));
}

#[test]
fn unfixable_first_failure_halts_only_that_candidate() {
    let f = theano_lasagne();
    let start = f.candidates().remove(0);
    let mut py2 = start.clone();
    py2.runtime = Runtime::Py2;
    py2.origin = "theano-lasagne:py2".into();
    let name_error = ValidationResult::exception("NameError", "x", vec![StackFrame::new(FrameOrigin::Snippet, 1)], 1);
    let answers = [(py2.clone(), name_error), (with_pin(&start, "Theano", "0.9.0"), ValidationResult::success(5))];
    let out = scripted(&f, &[py2, start], &answers, &budget()).unwrap();
    assert_eq!(out.termination, Termination::Working);
    assert_eq!(out.per_candidate_stats[0].termination, Some(Termination::NotFixable));
    assert_eq!(out.per_candidate_stats[0].validations, 1);
    assert_eq!(out.validations_total, 3);
}

#[test]
fn empty_environment_baseline_exhausts_after_one() {
    let f = theano_lasagne();
    let kb = f.kb();
    let matrices = no_matrices();
    let ctx = SearchContext { index: f.world.index(), kb: &kb, matrices: &matrices };
    let mut validator = Scripted { answers: BTreeMap::new(), calls: 0 };
    let out = iddfs_baseline(&[env("bare", &[])], &mut validator, &ctx, &budget(), &FrozenClock).unwrap();
    assert_eq!((out.termination, out.validations_total), (Termination::SpaceExhausted, 1));
}

#[test]
fn no_candidates_is_an_error() {
    let f = theano_lasagne();
    assert!(matches!(scripted(&f, &[], &[], &budget()), Err(SearchError::NoCandidates)));
}

mod scenarios {
    use super::*;
    use crate::matrix::build_matrix;
    use crate::sim::{brute_force_oracle, generate_scenario, scenario_events, Scenario, ScenarioKnobs};
    use crate::universe::generate_candidates;
    use proptest::prelude::*;

    fn run(s: &Scenario, seed: u64, guided: bool) -> (Vec<EnvironmentSpec>, SearchOutcome) {
        let kb = s.world.knowledge_base();
        let cands = generate_candidates(&s.manifest, &kb, s.world.index()).unwrap().specs;
        let matrices = if guided { build_matrix(&scenario_events(s, seed)).matrices } else { BTreeMap::new() };
        let ctx = SearchContext { index: s.world.index(), kb: &kb, matrices: &matrices };
        let mut validator = SimValidator { world: &s.world, snippet: &s.snippet, budget: Duration::from_secs(60) };
        let out = if guided {
            feedback_directed_search(&cands, &mut validator, &ctx, &budget(), &FrozenClock)
        } else {
            iddfs_baseline(&cands, &mut validator, &ctx, &budget(), &FrozenClock)
        };
        (cands, out.unwrap())
    }

    fn no_repeats(out: &SearchOutcome) -> bool {
        let keys: BTreeSet<&str> = out.log.iter().map(|e| e.env_key.as_str()).collect();
        keys.len() == out.log.len()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn outcomes_agree_with_the_world(seed in 0u64..10_000, packages in 1usize..=4, versions in 2usize..=8, drifts in 0usize..=3) {
            let s = generate_scenario(seed, ScenarioKnobs { packages, versions, drifts });
            let (cands, guided) = run(&s, seed, true);
            let (_, plain) = run(&s, seed, false);
            prop_assert!(no_repeats(&guided));
            prop_assert!(no_repeats(&plain));
            for out in [&guided, &plain] {
                if let Some(env) = &out.working_env {
                    prop_assert!(simulate_validation(&s.snippet, env, &s.world, Duration::ZERO).unwrap().is_success());
                }
            }
            for d in &guided.drift_instances {
                let before = simulate_validation(&s.snippet, &d.environment, &s.world, Duration::ZERO).unwrap();
                prop_assert_eq!(&before.exception_name, &d.checkpoint.exception_name);
                let after = d.patch.apply(&d.environment, s.world.index()).unwrap();
                let fresh = simulate_validation(&s.snippet, &after, &s.world, Duration::ZERO).unwrap();
                prop_assert!(fresh.is_success() || fresh.snippet_line > d.checkpoint.snippet_line);
            }
            let reachable = cands.iter().any(|c| !brute_force_oracle(&s.snippet, &s.world, c).unwrap().is_empty());
            if !reachable {
                prop_assert_ne!(guided.termination, Termination::Working);
                prop_assert_eq!(plain.termination, Termination::SpaceExhausted);
            } else {
                prop_assert_eq!(plain.termination, Termination::Working);
            }
        }
    }
}
