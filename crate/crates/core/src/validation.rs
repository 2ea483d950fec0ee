//! Validation results and the predicates the search builds on: progress
//! past a checkpoint, the fixability heuristic, fault localization, and
//! execution time budgets.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvironmentSpec, Patch};
use crate::universe::{KnowledgeBase, SnippetKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractViolation {
    #[error("expected an exception result, got {0:?}")]
    NotAnException(Status),
    #[error("exception result without {0}")]
    IncompleteException(&'static str),
    #[error("successful result carries exception details")]
    SuccessWithException,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Success,
    Exception,
    Timeout,
}

/// Where a stack frame's code lives.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FrameOrigin {
    Snippet,
    Stdlib,
    Dependency(String),
    Filesystem,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FrameRepr", into = "FrameRepr")]
pub struct StackFrame {
    pub origin: FrameOrigin,
    pub line: u32,
}

impl StackFrame {
    pub fn new(origin: FrameOrigin, line: u32) -> Self {
        StackFrame { origin, line }
    }

    pub fn package(&self) -> Option<&str> {
        match &self.origin {
            FrameOrigin::Dependency(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OriginTag {
    Snippet,
    Stdlib,
    Dependency,
    Filesystem,
}

/// Wire shape: `{"origin": "dependency", "package": "Lasagne", "line": 6}`.
#[derive(Serialize, Deserialize)]
struct FrameRepr {
    origin: OriginTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    package: Option<String>,
    line: u32,
}

impl TryFrom<FrameRepr> for StackFrame {
    type Error = &'static str;

    fn try_from(r: FrameRepr) -> Result<Self, Self::Error> {
        let origin = match (r.origin, r.package) {
            (OriginTag::Dependency, Some(p)) => FrameOrigin::Dependency(p),
            (OriginTag::Dependency, None) => return Err("dependency frame without a package"),
            (OriginTag::Snippet, _) => FrameOrigin::Snippet,
            (OriginTag::Stdlib, _) => FrameOrigin::Stdlib,
            (OriginTag::Filesystem, _) => FrameOrigin::Filesystem,
        };
        Ok(StackFrame { origin, line: r.line })
    }
}

impl From<StackFrame> for FrameRepr {
    fn from(f: StackFrame) -> Self {
        let (origin, package) = match f.origin {
            FrameOrigin::Snippet => (OriginTag::Snippet, None),
            FrameOrigin::Stdlib => (OriginTag::Stdlib, None),
            FrameOrigin::Dependency(p) => (OriginTag::Dependency, Some(p)),
            FrameOrigin::Filesystem => (OriginTag::Filesystem, None),
        };
        FrameRepr { origin, package, line: f.line }
    }
}

/// Outcome of configuring an environment and running a snippet in it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValidationResult {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_name: Option<String>,
    #[serde(default, rename = "message", skip_serializing_if = "Option::is_none")]
    pub exception_message: Option<String>,
    /// Outermost frame first.
    #[serde(default)]
    pub trace: Vec<StackFrame>,
    /// Deepest snippet line reached.
    #[serde(default)]
    pub snippet_line: Option<u32>,
    #[serde(default)]
    pub install_failures: Vec<(String, String)>,
}

impl ValidationResult {
    pub fn success(snippet_line: u32) -> Self {
        ValidationResult {
            status: Status::Success,
            exception_name: None,
            exception_message: None,
            trace: Vec::new(),
            snippet_line: Some(snippet_line),
            install_failures: Vec::new(),
        }
    }

    pub fn exception(name: &str, message: &str, trace: Vec<StackFrame>, snippet_line: u32) -> Self {
        ValidationResult {
            status: Status::Exception,
            exception_name: Some(name.to_string()),
            exception_message: Some(message.to_string()),
            trace,
            snippet_line: Some(snippet_line),
            install_failures: Vec::new(),
        }
    }

    pub fn timeout(snippet_line: Option<u32>) -> Self {
        ValidationResult {
            status: Status::Timeout,
            exception_name: None,
            exception_message: None,
            trace: Vec::new(),
            snippet_line,
            install_failures: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == Status::Success
    }

    pub fn check(&self) -> Result<(), ContractViolation> {
        match self.status {
            Status::Exception => {
                if self.exception_name.is_none() {
                    return Err(ContractViolation::IncompleteException("exception_name"));
                }
                if self.trace.is_empty() {
                    return Err(ContractViolation::IncompleteException("trace"));
                }
                Ok(())
            }
            Status::Success if self.exception_name.is_some() || self.exception_message.is_some() => {
                Err(ContractViolation::SuccessWithException)
            }
            _ => Ok(()),
        }
    }

    /// Progress measure: a success has covered everything; a missing line
    /// counts as 0.
    fn progress(&self) -> u64 {
        match self.status {
            Status::Success => u64::MAX,
            _ => u64::from(self.snippet_line.unwrap_or(0)),
        }
    }

    fn name(&self) -> &str {
        self.exception_name.as_deref().unwrap_or("")
    }

    pub fn is_import_error(&self) -> bool {
        matches!(self.name(), "ImportError" | "ModuleNotFoundError")
    }

    pub fn is_filesystem_error(&self) -> bool {
        matches!(
            self.name(),
            "FileNotFoundError" | "PermissionError" | "IsADirectoryError" | "NotADirectoryError" | "FileExistsError" | "IOError"
        ) || self.trace.iter().any(|f| f.origin == FrameOrigin::Filesystem)
    }

    /// The module an import error failed on, read from the message.
    /// `cannot import name 'x' from 'a.b'` yields `a.b.x`.
    pub fn missing_module(&self) -> Option<String> {
        if !self.is_import_error() {
            return None;
        }
        let msg = self.exception_message.as_deref()?;
        let unquote = |s: &str| s.trim().trim_matches(|c| c == '\'' || c == '"' || c == '`').to_string();
        if let Some(rest) = msg.split("No module named").nth(1) {
            let name = unquote(rest.split_whitespace().next()?);
            return (!name.is_empty()).then_some(name);
        }
        if let Some(rest) = msg.split("cannot import name").nth(1) {
            let (name, from) = rest.split_once(" from ")?;
            let module = unquote(from.split_whitespace().next()?);
            return Some(alloc::format!("{}.{}", module, unquote(name)));
        }
        None
    }
}

/// The latest unfixed failure of a search run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub result: ValidationResult,
    pub env_at_checkpoint: String,
    /// Mutations applied since the checkpoint was taken.
    pub mutations_since: Patch,
}

/// A fresh validation fixes the checkpoint when it succeeds or gets
/// strictly further into the snippet before failing. Timeouts never do.
pub fn is_fixed(checkpoint: &Checkpoint, fresh: &ValidationResult) -> bool {
    match fresh.status {
        Status::Success => true,
        Status::Timeout => false,
        Status::Exception => fresh.progress() > checkpoint.result.progress(),
    }
}

fn require_exception(result: &ValidationResult) -> Result<(), ContractViolation> {
    if result.status != Status::Exception {
        return Err(ContractViolation::NotAnException(result.status));
    }
    Ok(())
}

/// Heuristic: can mutating installed versions plausibly repair this failure?
pub fn is_fixable(result: &ValidationResult, env: &EnvironmentSpec, kb: &KnowledgeBase) -> Result<bool, ContractViolation> {
    require_exception(result)?;
    if result.is_filesystem_error() {
        return Ok(false);
    }
    let caused_by_dependency = result.trace.iter().filter_map(StackFrame::package).any(|p| env.has_package(p));
    let import_of_dependency = result
        .missing_module()
        .map(|m| !kb.lookup_installed(&m, |p| env.has_package(p)).is_empty())
        .unwrap_or(false);
    let api_break = matches!(result.name(), "TypeError" | "AttributeError");
    Ok(caused_by_dependency || import_of_dependency || api_break)
}

/// Maps a failure to the single installed package most likely at fault.
pub fn localize_fault(result: &ValidationResult, env: &EnvironmentSpec, kb: &KnowledgeBase) -> Option<String> {
    if result.status != Status::Exception {
        return None;
    }
    let raising = result.trace.last()?;
    if !matches!(raising.origin, FrameOrigin::Snippet | FrameOrigin::Stdlib) {
        if let Some(pkg) = result.trace.iter().rev().filter_map(StackFrame::package).find(|p| env.has_package(p)) {
            return Some(pkg.to_string());
        }
    }
    if let Some(module) = result.missing_module() {
        let providers = kb.lookup_installed(&module, |p| env.has_package(p));
        if providers.len() == 1 {
            return providers.into_iter().next();
        }
    }
    None
}

/// Execution time limit: one minute for scripts; two minutes plus one per
/// cell for notebooks.
pub fn timeout_budget(kind: SnippetKind, cell_count: u32) -> Duration {
    let secs = match kind {
        SnippetKind::Script => 60,
        SnippetKind::Notebook => 120 + 60 * u64::from(cell_count),
    };
    Duration::from_secs(secs)
}
