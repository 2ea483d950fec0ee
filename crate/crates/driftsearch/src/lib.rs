//! File formats, the out-of-process executor backend, and the command-line
//! front end for `driftsearch-core`.

pub mod cli;
pub mod exec;
pub mod formats;
pub mod report;
