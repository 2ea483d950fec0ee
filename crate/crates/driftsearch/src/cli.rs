use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use driftsearch_core::search::{
    feedback_directed_search, iddfs_baseline, Clock, SearchBudget, SearchContext, SearchOutcome, Termination, Validator,
};
use driftsearch_core::sim::{generate_scenario, scenario_events, ScenarioKnobs, SimValidator};
use driftsearch_core::universe::generate_candidates;
use driftsearch_core::validation::timeout_budget;
use driftsearch_core::{build_matrix, KnowledgeBase, PackageIndex, SnippetManifest, UpgradeMatrix};

use crate::exec::{ExecValidator, Executor};
use crate::formats;
use crate::report::{Report, Summary};

#[derive(Debug, Parser)]
#[command(name = "driftsearch", version, about = "Find and certify configuration drift in code snippets")]
pub struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Feedback-directed search for a working environment.
    Search(SearchArgs),
    /// Exhaustive iterative-deepening search over semver operators only.
    Baseline(SearchArgs),
    /// List the candidate environments for a snippet without validating.
    Analyze(InputArgs),
    #[command(subcommand)]
    Matrix(MatrixCommand),
    /// Write a random simulated scenario to a directory.
    Simulate(SimulateArgs),
    /// Fold search reports into summary counts.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MatrixCommand {
    /// Compile an upgrade-event CSV into matrices.
    Build {
        events: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print one package's matrix as a grid of breakage percentages.
    Show {
        package: String,
        #[arg(long)]
        matrix: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Sim,
    Exec,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Package index; defaults to the index inside `--world`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Knowledge base; defaults to the module tables of `--world`.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Simulated world, required by the sim backend.
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub matrix: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "sim")]
    pub backend: Backend,
    /// Snippet file; defaults to the manifest's `source`.
    #[arg(long)]
    pub snippet: Option<PathBuf>,
    #[arg(long, default_value_t = 3600)]
    pub budget_seconds: u64,
    #[arg(long)]
    pub max_validations: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub packages: usize,
    #[arg(long, default_value_t = 5)]
    pub versions: usize,
    #[arg(long, default_value_t = 1)]
    pub drifts: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn elapsed(&self) -> Duration {
        self.0.elapsed()
    }
}

pub fn exit_code(t: Termination) -> i32 {
    match t {
        Termination::Working => 0,
        Termination::NotFixable | Termination::SpaceExhausted => 2,
        Termination::Budget | Termination::Inconclusive => 3,
    }
}

/// Runs one command and returns the process exit code. Errors map to 1 in `main`.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Search(args) => search(args, true),
        Command::Baseline(args) => search(args, false),
        Command::Analyze(args) => analyze(args),
        Command::Matrix(MatrixCommand::Build { events, out }) => matrix_build(&events, &out),
        Command::Matrix(MatrixCommand::Show { package, matrix }) => {
            let matrices = formats::load_matrices(&matrix)?;
            let m = matrices.get(&package).with_context(|| format!("no matrix for `{package}` in {}", matrix.display()))?;
            print!("{}", formats::render_matrix(m));
            Ok(0)
        }
        Command::Simulate(args) => simulate(args),
        Command::Report { reports, out } => summarize(&reports, out.as_deref()),
    }
}

struct Inputs {
    manifest: SnippetManifest,
    index: PackageIndex,
    kb: KnowledgeBase,
    world: Option<driftsearch_core::sim::SimWorld>,
}

fn load_inputs(args: &InputArgs) -> Result<Inputs> {
    let manifest = formats::load_manifest(&args.manifest)?;
    let world = args.world.as_deref().map(formats::load_world).transpose()?;
    let index = match (&args.index, &world) {
        (Some(path), _) => formats::load_index(path)?,
        (None, Some(w)) => w.index().clone(),
        (None, None) => bail!("--index is required without --world"),
    };
    let kb = match (&args.kb, &world) {
        (Some(path), _) => formats::load_kb(path)?,
        (None, Some(w)) => w.knowledge_base(),
        (None, None) => bail!("--kb is required without --world"),
    };
    Ok(Inputs { manifest, index, kb, world })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn analyze(args: InputArgs) -> Result<i32> {
    let inputs = load_inputs(&args)?;
    let cands = generate_candidates(&inputs.manifest, &inputs.kb, &inputs.index)?;
    for m in &cands.unmapped_modules {
        log::warn!("no package provides `{m}`");
    }
    let mut text = serde_json::to_string_pretty(&cands)?;
    text.push('\n');
    write_or_print(args.out.as_deref(), &text)?;
    Ok(0)
}

fn load_all_matrices(paths: &[PathBuf]) -> Result<BTreeMap<String, UpgradeMatrix>> {
    let mut out: BTreeMap<String, UpgradeMatrix> = BTreeMap::new();
    for path in paths {
        for (name, m) in formats::load_matrices(path)? {
            match out.get_mut(&name) {
                Some(existing) => existing.merge(&m),
                None => {
                    out.insert(name, m);
                }
            }
        }
    }
    Ok(out)
}

fn search(args: SearchArgs, guided: bool) -> Result<i32> {
    let mut inputs = load_inputs(&args.input)?;
    let matrices = if guided { load_all_matrices(&args.matrix)? } else { BTreeMap::new() };
    if !guided && !args.matrix.is_empty() {
        log::warn!("baseline ignores upgrade matrices");
    }
    let snippet_path = args.snippet.clone().or_else(|| formats::manifest_source(&args.input.manifest, &inputs.manifest));
    let timeout = timeout_budget(inputs.manifest.kind, inputs.manifest.cell_count);
    let mut validator: Box<dyn Validator + '_> = match args.backend {
        Backend::Sim => {
            let path = snippet_path.context("the sim backend needs --snippet or a manifest `source`")?;
            let snippet = formats::load_snippet(&path)?;
            let world = inputs.world.take().context("the sim backend needs --world")?;
            Box::new(OwnedSim { world, snippet, timeout })
        }
        Backend::Exec => {
            let path = snippet_path.context("the exec backend needs --snippet or a manifest `source`")?;
            let mut executor = Executor::from_env()?;
            if inputs.manifest.runtime_candidates.is_empty() || inputs.manifest.imports.is_empty() {
                let found = executor.detect(&path)?;
                if inputs.manifest.runtime_candidates.is_empty() {
                    inputs.manifest.runtime_candidates = found.runtimes;
                }
                if inputs.manifest.imports.is_empty() {
                    inputs.manifest.imports = found.imports;
                }
            }
            Box::new(ExecValidator { executor, snippet: path, timeout })
        }
    };
    let cands = generate_candidates(&inputs.manifest, &inputs.kb, &inputs.index)?;
    if cands.specs.is_empty() {
        bail!("`{}` has no candidate runtime", inputs.manifest.snippet_id);
    }
    let mut budget = SearchBudget::new(Duration::from_secs(args.budget_seconds.max(1)));
    if let Some(max) = args.max_validations {
        budget = budget.with_max_validations(max);
    }
    let ctx = SearchContext { index: &inputs.index, kb: &inputs.kb, matrices: &matrices };
    let clock = WallClock(Instant::now());
    let outcome: SearchOutcome = if guided {
        feedback_directed_search(&cands.specs, validator.as_mut(), &ctx, &budget, &clock)?
    } else {
        iddfs_baseline(&cands.specs, validator.as_mut(), &ctx, &budget, &clock)?
    };
    log::info!(
        "{}: {:?} after {} validations, {} drift instances",
        inputs.manifest.snippet_id,
        outcome.termination,
        outcome.validations_total,
        outcome.drift_instances.len()
    );
    let backend = match args.backend {
        Backend::Sim => "sim",
        Backend::Exec => "exec",
    };
    let mut report = Report::new(if guided { "search" } else { "baseline" }, &inputs.manifest.snippet_id, backend, &outcome);
    report.broken_edges = cands.broken_edges;
    write_or_print(args.input.out.as_deref(), &report.to_json())?;
    Ok(exit_code(outcome.termination))
}

/// A [`SimValidator`] that owns its world and snippet.
struct OwnedSim {
    world: driftsearch_core::sim::SimWorld,
    snippet: driftsearch_core::sim::SimSnippet,
    timeout: Duration,
}

impl Validator for OwnedSim {
    fn validate(&mut self, env: &driftsearch_core::EnvironmentSpec) -> Result<driftsearch_core::ValidationResult, driftsearch_core::search::BackendFailure> {
        SimValidator { world: &self.world, snippet: &self.snippet, budget: self.timeout }.validate(env)
    }
}

fn matrix_build(events: &[PathBuf], out: &Path) -> Result<i32> {
    let mut all = Vec::new();
    let mut malformed = 0;
    for path in events {
        let file = formats::load_events(path)?;
        malformed += file.malformed;
        all.extend(file.events);
    }
    let built = build_matrix(&all);
    eprintln!(
        "{} events, {} dropped as canceled or errored, {} malformed, {} packages",
        all.len() + malformed,
        built.inconclusive,
        malformed + built.malformed,
        built.matrices.len()
    );
    formats::save_matrices(out, &built.matrices)?;
    Ok(0)
}

fn simulate(args: SimulateArgs) -> Result<i32> {
    if args.packages == 0 || args.versions == 0 {
        bail!("--packages and --versions must be positive");
    }
    let knobs = ScenarioKnobs { packages: args.packages, versions: args.versions, drifts: args.drifts };
    let scenario = generate_scenario(args.seed, knobs);
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let dir = &args.out_dir;
    formats::save_world(&dir.join("world.json"), &scenario.world)?;
    formats::write_json(&dir.join("snippet.json"), &scenario.snippet)?;
    let mut manifest = scenario.manifest.clone();
    manifest.source = Some("snippet.json".into());
    formats::write_json(&dir.join("manifest.json"), &manifest)?;
    let events = scenario_events(&scenario, args.seed);
    let file = fs::File::create(dir.join("events.csv"))?;
    formats::write_events(file, &events)?;
    formats::write_json(&dir.join("drifts.json"), &scenario.drifts)?;
    Ok(0)
}

fn summarize(paths: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    let mut summary = Summary::default();
    for path in paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: Report = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        summary.add(&report);
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_or_print(out, &text)?;
    Ok(0)
}
