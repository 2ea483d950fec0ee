//! Core engine for detecting configuration drift in code snippets.
//!
//! A snippet is executed in candidate dependency environments; when it
//! crashes, the engine walks the version-configuration space with semver
//! mutation operators and mined upgrade matrices, guided by execution
//! feedback, and certifies every fixed failure as a drift instance
//! (failure, patch).
//!
//! This crate is `no_std` and only needs `alloc`. File formats, process
//! backends, and the command-line front end live in the `driftsearch` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod env;
pub mod matrix;
pub mod search;
pub mod sim;
pub mod universe;
pub mod validation;
pub mod version;

pub use env::{canonical_key, distance, DriftInstance, EnvError, EnvironmentSpec, Mutation, MutationOp, Patch, Pin, Runtime};
pub use matrix::{build_matrix, exploration_order, CellStats, MatrixBuild, UpgradeEvent, UpgradeMatrix, BuildStatus};
pub use universe::{KnowledgeBase, PackageIndex, SnippetKind, SnippetManifest, UniverseError};
pub use validation::{FrameOrigin, StackFrame, Status, ValidationResult};
pub use version::{ReleaseHistory, Version, VersionError};
