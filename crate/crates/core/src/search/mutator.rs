//! Mutation streams: the depth-first iterative-deepening walk over semver
//! operators and matrix jumps, and the matrix-guided stream that falls back
//! to it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::env::{apply_mutation, EnvError, EnvironmentSpec, Mutation, MutationOp};
use crate::matrix::{exploration_order, UpgradeMatrix};
use crate::universe::PackageIndex;
use crate::version::Version;

/// A configuration proposed for validation together with the mutations
/// that lead to it from the stream's base environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub env: EnvironmentSpec,
    pub path: Vec<Mutation>,
}

/// How one package may move during the walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Moves {
    Semver,
    /// A single jump to one of these versions, tried in order.
    Jumps(Vec<Version>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lane {
    pub package: String,
    pub moves: Moves,
}

impl Lane {
    pub fn semver(package: impl Into<String>) -> Self {
        Lane { package: package.into(), moves: Moves::Semver }
    }
}

/// Matrix-suggested downgrade targets that are real releases strictly below
/// `current`, in exploration order.
pub fn jump_targets(matrix: &UpgradeMatrix, current: &Version, index: &PackageIndex) -> Vec<Version> {
    let history = index.history(&matrix.package).ok();
    exploration_order(matrix, current)
        .into_iter()
        .filter(|v| v < current && history.is_some_and(|h| h.contains(v)))
        .collect()
}

/// One lane per package of `env`, in install order. Packages with usable
/// matrix targets jump; the rest use the semver operators.
pub fn lanes_for(env: &EnvironmentSpec, matrices: &BTreeMap<String, UpgradeMatrix>, index: &PackageIndex) -> Vec<Lane> {
    env.deps
        .iter()
        .map(|pin| {
            let targets = matrices.get(&pin.package).map(|m| jump_targets(m, &pin.version, index)).unwrap_or_default();
            if targets.is_empty() {
                Lane::semver(pin.package.clone())
            } else {
                Lane { package: pin.package.clone(), moves: Moves::Jumps(targets) }
            }
        })
        .collect()
}

// Jumps come first, then every major decrement, then every minor one;
// within a rank, lanes go in order. Paths are non-decreasing in
// (rank, lane), which gives each reachable configuration exactly one path.
const JUMP: u8 = 0;
const MAJOR: u8 = 1;
const MINOR: u8 = 2;

struct Frame {
    env: EnvironmentSpec,
    path: Vec<Mutation>,
    children: Vec<(Mutation, u8, usize)>,
    next: usize,
}

/// Iterative deepening over canonical mutation paths. Only the current path
/// is held; a configuration is proposed in the pass whose depth limit equals
/// its depth, and never if its key is already in `visited`.
pub struct Iddfs {
    root: EnvironmentSpec,
    prefix: Vec<Mutation>,
    lanes: Vec<Lane>,
    limit: usize,
    stack: Vec<Frame>,
    pass_started: bool,
    pass_reached_limit: bool,
    exhausted: bool,
}

impl Iddfs {
    /// `prefix` is prepended to every proposed path; it records how `root`
    /// was reached from the stream's base.
    pub fn new(root: EnvironmentSpec, prefix: Vec<Mutation>, lanes: Vec<Lane>) -> Self {
        Iddfs {
            root,
            prefix,
            lanes,
            limit: 0,
            stack: Vec::new(),
            pass_started: false,
            pass_reached_limit: false,
            exhausted: false,
        }
    }

    pub fn depth_limit(&self) -> usize {
        self.limit
    }

    pub fn next_step(&mut self, index: &PackageIndex, visited: &BTreeSet<String>) -> Result<Option<Step>, EnvError> {
        loop {
            if self.exhausted {
                return Ok(None);
            }
            let (env, path, last) = match self.stack.last_mut() {
                None => {
                    if self.pass_started {
                        if !self.pass_reached_limit {
                            self.exhausted = true;
                            return Ok(None);
                        }
                        self.limit += 1;
                    }
                    self.pass_started = true;
                    self.pass_reached_limit = false;
                    (self.root.clone(), Vec::new(), None)
                }
                Some(top) if top.next < top.children.len() => {
                    let (m, rank, lane) = top.children[top.next].clone();
                    top.next += 1;
                    let env = apply_mutation(&top.env, &m, index)?;
                    let mut path = top.path.clone();
                    path.push(m);
                    (env, path, Some((rank, lane)))
                }
                Some(_) => {
                    self.stack.pop();
                    continue;
                }
            };
            if path.len() == self.limit {
                self.pass_reached_limit = true;
                if visited.contains(&env.key()) {
                    continue;
                }
                let mut full = self.prefix.clone();
                full.extend(path);
                return Ok(Some(Step { env, path: full }));
            }
            let children = self.children(&env, last, index);
            self.stack.push(Frame { env, path, children, next: 0 });
        }
    }

    fn children(&self, env: &EnvironmentSpec, last: Option<(u8, usize)>, index: &PackageIndex) -> Vec<(Mutation, u8, usize)> {
        let mut out = Vec::new();
        for rank in [JUMP, MAJOR, MINOR] {
            for (i, lane) in self.lanes.iter().enumerate() {
                if let Some(prev) = last {
                    if (rank, i) < prev || ((rank, i) == prev && rank == JUMP) {
                        continue;
                    }
                }
                let Some(current) = env.pinned(&lane.package) else { continue };
                let Ok(history) = index.history(&lane.package) else { continue };
                match (&lane.moves, rank) {
                    (Moves::Jumps(targets), JUMP) => {
                        for t in targets.iter().filter(|t| *t < current) {
                            out.push((Mutation::new(MutationOp::MatrixJump, lane.package.clone(), current.clone(), t.clone()), rank, i));
                        }
                    }
                    (Moves::Semver, MAJOR) => {
                        if let Some(t) = history.decrement_major(current) {
                            out.push((Mutation::new(MutationOp::MajorDecrement, lane.package.clone(), current.clone(), t.clone()), rank, i));
                        }
                    }
                    (Moves::Semver, MINOR) => {
                        if let Some(t) = history.decrement_minor(current) {
                            out.push((Mutation::new(MutationOp::MinorDecrement, lane.package.clone(), current.clone(), t.clone()), rank, i));
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }
}

/// Jumps a single package to each matrix target in turn, each time from the
/// base environment. When the targets run out, continues with semver
/// iterative deepening over that package from the last jumped-to version.
pub struct MatrixStream {
    base: EnvironmentSpec,
    package: String,
    targets: Vec<Version>,
    next: usize,
    last_jump: Option<Step>,
    fallback: Option<Iddfs>,
}

impl MatrixStream {
    pub fn new(base: EnvironmentSpec, package: impl Into<String>, targets: Vec<Version>) -> Self {
        MatrixStream { base, package: package.into(), targets, next: 0, last_jump: None, fallback: None }
    }

    /// True once the matrix targets are used up and the semver walk has taken over.
    pub fn in_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    pub fn next_step(&mut self, index: &PackageIndex, visited: &BTreeSet<String>) -> Result<Option<Step>, EnvError> {
        if self.fallback.is_none() {
            let current = self.base.pinned(&self.package).cloned();
            while let (Some(target), Some(current)) = (self.targets.get(self.next), current.as_ref()) {
                self.next += 1;
                let m = Mutation::new(MutationOp::MatrixJump, self.package.clone(), current.clone(), target.clone());
                let env = apply_mutation(&self.base, &m, index)?;
                if visited.contains(&env.key()) {
                    continue;
                }
                let step = Step { env, path: alloc::vec![m] };
                self.last_jump = Some(step.clone());
                return Ok(Some(step));
            }
            let (root, prefix) = match self.last_jump.take() {
                Some(step) => (step.env, step.path),
                None => (self.base.clone(), Vec::new()),
            };
            self.fallback = Some(Iddfs::new(root, prefix, alloc::vec![Lane::semver(self.package.clone())]));
        }
        self.fallback.as_mut().expect("fallback set above").next_step(index, visited)
    }
}

/// The stream a search candidate draws its next configuration from.
pub enum Mutator {
    Iddfs(Iddfs),
    Matrix(MatrixStream),
}

impl Mutator {
    pub fn next_step(&mut self, index: &PackageIndex, visited: &BTreeSet<String>) -> Result<Option<Step>, EnvError> {
        match self {
            Mutator::Iddfs(m) => m.next_step(index, visited),
            Mutator::Matrix(m) => m.next_step(index, visited),
        }
    }
}
