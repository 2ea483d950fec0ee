//! A deterministic simulated package world. Each release exports a table of
//! modules and symbols, and loading a package runs its imports of other
//! packages, so failures surface with realistic frame chains.

mod generate;

pub use generate::{generate_scenario, scenario_events, Scenario, ScenarioKnobs, SeededDrift};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{apply_mutation, EnvironmentSpec, Mutation, MutationOp, Runtime};
use crate::search::{BackendFailure, Validator};
use crate::universe::{KnowledgeBase, PackageIndex};
use crate::validation::{FrameOrigin, StackFrame, ValidationResult};
use crate::version::Version;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("{package}@{version} has no export table")]
    MissingApi { package: String, version: String },
    #[error("export table for unknown release {package}@{version}")]
    UnknownRelease { package: String, version: String },
    #[error("{package}@{version} imports {module} from {provider}, which never provides it")]
    UnresolvableImport { package: String, version: String, module: String, provider: String },
    #[error("statement lines must run 1..n without gaps; line {found} found where {expected} was expected")]
    BadLines { expected: u32, found: u32 },
}

/// Symbol name to arity.
pub type Exports = BTreeMap<String, u32>;
/// Module path to its exports.
pub type ApiTable = BTreeMap<String, Exports>;

/// A module that one release imports from another package when loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossImport {
    pub module: String,
    pub provider: String,
    /// Line of the import inside the importing package; defaults to its
    /// position in the list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    index: PackageIndex,
    api: BTreeMap<(String, Version), ApiTable>,
    cross_imports: BTreeMap<(String, Version), Vec<CrossImport>>,
    stdlib: BTreeSet<String>,
    seed: u64,
}

impl SimWorld {
    pub fn new(
        index: PackageIndex,
        api: BTreeMap<(String, Version), ApiTable>,
        cross_imports: BTreeMap<(String, Version), Vec<CrossImport>>,
        stdlib: BTreeSet<String>,
        seed: u64,
    ) -> Result<Self, WorldError> {
        let known = |pkg: &str, v: &Version| index.history(pkg).map(|h| h.contains(v)).unwrap_or(false);
        for (pkg, v) in api.keys().chain(cross_imports.keys()) {
            if !known(pkg, v) {
                return Err(WorldError::UnknownRelease { package: pkg.clone(), version: v.to_string() });
            }
        }
        for ((pkg, v), imports) in &cross_imports {
            for ci in imports {
                let provided = api.iter().any(|((p, _), table)| *p == ci.provider && table.contains_key(&ci.module));
                if !provided {
                    return Err(WorldError::UnresolvableImport {
                        package: pkg.clone(),
                        version: v.to_string(),
                        module: ci.module.clone(),
                        provider: ci.provider.clone(),
                    });
                }
            }
        }
        Ok(SimWorld { index, api, cross_imports, stdlib, seed })
    }

    pub fn index(&self) -> &PackageIndex {
        &self.index
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stdlib(&self) -> &BTreeSet<String> {
        &self.stdlib
    }

    pub fn api(&self) -> &BTreeMap<(String, Version), ApiTable> {
        &self.api
    }

    pub fn cross_imports(&self) -> &BTreeMap<(String, Version), Vec<CrossImport>> {
        &self.cross_imports
    }

    /// Every module any release exports, mapped to the packages exporting it.
    pub fn knowledge_base(&self) -> KnowledgeBase {
        let mut module_map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for ((pkg, _), table) in &self.api {
            for module in table.keys() {
                module_map.entry(module.clone()).or_default().insert(pkg.clone());
            }
        }
        KnowledgeBase { module_map, stdlib: self.stdlib.clone() }
    }

    fn table(&self, pkg: &str, version: &Version) -> Result<&ApiTable, WorldError> {
        self.api
            .get(&(pkg.to_string(), version.clone()))
            .ok_or_else(|| WorldError::MissingApi { package: pkg.into(), version: version.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Statement {
    /// `import module` when `names` is empty, else `from module import names`.
    Import {
        module: String,
        #[serde(default)]
        names: Vec<String>,
    },
    Call { module: String, symbol: String, args: u32 },
    UseFile { path: String },
    RaiseLocal {
        name: String,
        #[serde(default)]
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub line: u32,
    #[serde(flatten)]
    pub statement: Statement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Line>", into = "Vec<Line>")]
pub struct SimSnippet {
    lines: Vec<Line>,
}

impl SimSnippet {
    pub fn new(statements: impl IntoIterator<Item = Statement>) -> Self {
        let lines = statements.into_iter().zip(1..).map(|(statement, line)| Line { line, statement }).collect();
        SimSnippet { lines }
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Top-level modules named by import statements, in order.
    pub fn imported_modules(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.lines {
            if let Statement::Import { module, .. } = &l.statement {
                if !out.contains(module) {
                    out.push(module.clone());
                }
            }
        }
        out
    }
}

impl TryFrom<Vec<Line>> for SimSnippet {
    type Error = WorldError;

    fn try_from(lines: Vec<Line>) -> Result<Self, Self::Error> {
        for (expected, l) in (1..).zip(&lines) {
            if l.line != expected {
                return Err(WorldError::BadLines { expected, found: l.line });
            }
        }
        Ok(SimSnippet { lines })
    }
}

impl From<SimSnippet> for Vec<Line> {
    fn from(s: SimSnippet) -> Self {
        s.lines
    }
}

fn top_level(module: &str) -> &str {
    module.split('.').next().unwrap_or(module)
}

fn split_last(module: &str) -> Option<(&str, &str)> {
    module.rsplit_once('.')
}

struct Failure {
    name: &'static str,
    message: String,
    trace: Vec<StackFrame>,
}

struct Execution<'w> {
    world: &'w SimWorld,
    env: &'w EnvironmentSpec,
    loaded: BTreeSet<String>,
}

impl<'w> Execution<'w> {
    fn missing_module_error(&self) -> &'static str {
        match self.env.runtime {
            Runtime::Py2 => "ImportError",
            Runtime::Py3 => "ModuleNotFoundError",
        }
    }

    fn table(&self, pkg: &str) -> &'w ApiTable {
        let v = self.env.pinned(pkg).expect("only installed packages are consulted");
        // export tables of installed releases are checked before execution
        &self.world.api[&(pkg.to_string(), v.clone())]
    }

    /// The installed package that provides the top-level namespace of `module`.
    fn owner(&self, module: &str) -> Option<&'w str> {
        let top = top_level(module);
        let owns = |pkg: &str| self.table(pkg).keys().any(|m| top_level(m) == top);
        let exact = self.env.deps.iter().find(|p| self.table(&p.package).contains_key(module));
        exact.or_else(|| self.env.deps.iter().find(|p| owns(&p.package))).map(|p| p.package.as_str())
    }

    fn is_stdlib(&self, module: &str) -> bool {
        self.world.stdlib.contains(top_level(module)) || self.world.stdlib.contains(module)
    }

    /// Runs the cross imports of `pkg` the first time it is loaded.
    fn load(&mut self, pkg: &str, trace: &[StackFrame]) -> Result<(), Failure> {
        if !self.loaded.insert(pkg.to_string()) {
            return Ok(());
        }
        let v = self.env.pinned(pkg).expect("loaded packages are installed").clone();
        let Some(imports) = self.world.cross_imports.get(&(pkg.to_string(), v)) else { return Ok(()) };
        for (i, ci) in imports.iter().enumerate() {
            let mut frames = trace.to_vec();
            frames.push(StackFrame::new(FrameOrigin::Dependency(pkg.to_string()), ci.line.unwrap_or(i as u32 + 1)));
            if !self.env.has_package(&ci.provider) {
                return Err(Failure {
                    name: self.missing_module_error(),
                    message: format!("No module named '{}'", ci.module),
                    trace: frames,
                });
            }
            self.import_from(&ci.provider, &ci.module, &[], &frames, true)?;
        }
        Ok(())
    }

    /// Imports `module` (and `names` from it) out of installed package `pkg`.
    /// Packages import modules as `from parent import last`, which reports a
    /// missing module differently from a plain import.
    fn import_from(
        &mut self,
        pkg: &str,
        module: &str,
        names: &[String],
        trace: &[StackFrame],
        from_parent: bool,
    ) -> Result<(), Failure> {
        self.load(pkg, trace)?;
        let table = self.table(pkg);
        let mut frames = trace.to_vec();
        frames.push(StackFrame::new(FrameOrigin::Dependency(pkg.to_string()), 1));
        let Some(exports) = table.get(module) else {
            let (name, message) = match split_last(module) {
                Some((parent, last)) if from_parent && table.contains_key(parent) => {
                    ("ImportError", format!("cannot import name '{last}' from '{parent}'"))
                }
                _ => (self.missing_module_error(), format!("No module named '{module}'")),
            };
            return Err(Failure { name, message, trace: frames });
        };
        for n in names {
            if !exports.contains_key(n) && !table.contains_key(&format!("{module}.{n}")) {
                return Err(Failure {
                    name: "ImportError",
                    message: format!("cannot import name '{n}' from '{module}'"),
                    trace: frames,
                });
            }
        }
        Ok(())
    }

    fn import(&mut self, module: &str, names: &[String], line: u32) -> Result<(), Failure> {
        let trace = [StackFrame::new(FrameOrigin::Snippet, line)];
        match self.owner(module) {
            Some(pkg) => self.import_from(pkg, module, names, &trace, false),
            None if self.is_stdlib(module) => Ok(()),
            None => Err(Failure {
                name: self.missing_module_error(),
                message: format!("No module named '{module}'"),
                trace: trace.to_vec(),
            }),
        }
    }

    fn call(&mut self, module: &str, symbol: &str, args: u32, line: u32) -> Result<(), Failure> {
        let trace = alloc::vec![StackFrame::new(FrameOrigin::Snippet, line)];
        let Some(pkg) = self.owner(module) else {
            if self.is_stdlib(module) {
                return Ok(());
            }
            return Err(Failure { name: "NameError", message: format!("name '{}' is not defined", top_level(module)), trace });
        };
        let snippet_frame = [StackFrame::new(FrameOrigin::Snippet, line)];
        self.load(pkg, &snippet_frame)?;
        match self.table(pkg).get(module).and_then(|e| e.get(symbol)) {
            None => Err(Failure {
                name: "AttributeError",
                message: format!("module '{module}' has no attribute '{symbol}'"),
                trace,
            }),
            Some(&arity) if arity != args => Err(Failure {
                name: "TypeError",
                message: format!("{symbol}() takes {arity} positional arguments but {args} were given"),
                trace,
            }),
            Some(_) => Ok(()),
        }
    }
}

/// Executes `snippet` in `env`. Statements run in order and the first
/// failure stops execution. Execution takes no time, so `budget` is never
/// exhausted.
pub fn simulate_validation(
    snippet: &SimSnippet,
    env: &EnvironmentSpec,
    world: &SimWorld,
    _budget: Duration,
) -> Result<ValidationResult, WorldError> {
    for pin in &env.deps {
        world.table(&pin.package, &pin.version)?;
    }
    let mut exec = Execution { world, env, loaded: BTreeSet::new() };
    for l in &snippet.lines {
        let outcome = match &l.statement {
            Statement::Import { module, names } => exec.import(module, names, l.line),
            Statement::Call { module, symbol, args } => exec.call(module, symbol, *args, l.line),
            Statement::UseFile { path } => Err(Failure {
                name: "FileNotFoundError",
                message: format!("[Errno 2] No such file or directory: '{path}'"),
                trace: alloc::vec![StackFrame::new(FrameOrigin::Snippet, l.line), StackFrame::new(FrameOrigin::Filesystem, 1)],
            }),
            Statement::RaiseLocal { name, message } => {
                return Ok(ValidationResult::exception(name, message, alloc::vec![StackFrame::new(FrameOrigin::Snippet, l.line)], l.line));
            }
        };
        if let Err(f) = outcome {
            return Ok(ValidationResult::exception(f.name, &f.message, f.trace, l.line));
        }
    }
    Ok(ValidationResult::success(snippet.lines.last().map_or(0, |l| l.line)))
}

/// Validator backed by a simulated world.
pub struct SimValidator<'a> {
    pub world: &'a SimWorld,
    pub snippet: &'a SimSnippet,
    pub budget: Duration,
}

impl Validator for SimValidator<'_> {
    fn validate(&mut self, env: &EnvironmentSpec) -> Result<ValidationResult, BackendFailure> {
        simulate_validation(self.snippet, env, self.world, self.budget).map_err(|e| BackendFailure::Backend(e.to_string()))
    }
}

/// Every configuration reachable from `candidate` by applying the semver
/// operators to its packages in any order, breadth first.
pub fn operator_closure(candidate: &EnvironmentSpec, index: &PackageIndex) -> Vec<EnvironmentSpec> {
    let packages: Vec<String> = candidate.deps.iter().map(|p| p.package.clone()).collect();
    let mut seen = BTreeSet::from([candidate.key()]);
    let mut out = alloc::vec![candidate.clone()];
    let mut i = 0;
    while i < out.len() {
        let env = out[i].clone();
        i += 1;
        for pkg in &packages {
            let (Some(current), Ok(history)) = (env.pinned(pkg), index.history(pkg)) else { continue };
            let moves = [
                (MutationOp::MajorDecrement, history.decrement_major(current)),
                (MutationOp::MinorDecrement, history.decrement_minor(current)),
            ];
            for (op, target) in moves {
                let Some(target) = target else { continue };
                let m = Mutation::new(op, pkg.clone(), current.clone(), target.clone());
                if let Ok(next) = apply_mutation(&env, &m, index) {
                    if seen.insert(next.key()) {
                        out.push(next);
                    }
                }
            }
        }
    }
    out
}

/// Keys of every successful configuration in the operator closure of
/// `candidate`.
pub fn brute_force_oracle(snippet: &SimSnippet, world: &SimWorld, candidate: &EnvironmentSpec) -> Result<BTreeSet<String>, WorldError> {
    let mut working = BTreeSet::new();
    for env in operator_closure(candidate, world.index()) {
        if simulate_validation(snippet, &env, world, Duration::ZERO)?.is_success() {
            working.insert(env.key());
        }
    }
    Ok(working)
}
