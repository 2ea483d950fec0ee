//! Release versions, per-package release histories, and the two semver
//! mutation operators.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::hash::{Hash, Hasher};
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VersionError {
    #[error("version string `{0}` has no leading numeric component")]
    Parse(String),
    #[error("release history of `{0}` is empty")]
    EmptyHistory(String),
}

/// A leniently parsed release version.
///
/// The numeric dotted prefix fills `major.minor.patch` (missing parts are 0)
/// and whatever follows is kept verbatim as an opaque prerelease tag, so
/// `1.0.4rc1` parses to `(1, 0, 4, "rc1")`.
#[derive(Debug, Clone)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
    pub prerelease: Option<String>,
    raw: String,
}

impl Version {
    pub fn parse(text: &str) -> Result<Version, VersionError> {
        let err = || VersionError::Parse(text.to_string());
        let trimmed = text.trim();
        let bytes = trimmed.as_bytes();
        let mut parts = [0u64; 3];
        let mut pos = 0;
        let mut count = 0;
        loop {
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if pos == start {
                return Err(err());
            }
            parts[count] = trimmed[start..pos].parse().map_err(|_| err())?;
            count += 1;
            // only step over a '.' that starts another numeric component
            if count < 3 && pos + 1 < bytes.len() && bytes[pos] == b'.' && bytes[pos + 1].is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        let suffix = trimmed[pos..].trim_start_matches(['-', '.', '_', '+']);
        Ok(Version {
            major: parts[0],
            minor: parts[1],
            patch: parts[2],
            prerelease: if suffix.is_empty() { None } else { Some(suffix.to_string()) },
            raw: trimmed.to_string(),
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn is_prerelease(&self) -> bool {
        self.prerelease.is_some()
    }

    /// The `(major, minor)` level this release belongs to.
    pub fn level(&self) -> (u64, u64) {
        (self.major, self.minor)
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.major, self.minor, self.patch)
            .cmp(&(other.major, other.minor, other.patch))
            // a prerelease sorts before the release it precedes
            .then_with(|| self.prerelease.is_none().cmp(&other.prerelease.is_none()))
            .then_with(|| self.raw.cmp(&other.raw))
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Version {}

impl Hash for Version {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.raw.hash(state);
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Version {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Version::parse(s)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Version::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// The ordered, duplicate-free release list of one package.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReleaseHistory {
    package: String,
    releases: Vec<Version>,
    /// Whether prereleases may be chosen as mutation targets.
    prerelease_targets: bool,
}

impl ReleaseHistory {
    /// Sorts and deduplicates `releases`. Prereleases are kept in the
    /// history but are only mutation targets when `prerelease_targets` is set.
    pub fn new(package: impl Into<String>, releases: impl IntoIterator<Item = Version>, prerelease_targets: bool) -> Self {
        let mut releases: Vec<Version> = releases.into_iter().collect();
        releases.sort();
        releases.dedup();
        ReleaseHistory { package: package.into(), releases, prerelease_targets }
    }

    /// Parses raw version strings; unparseable entries are returned
    /// separately so the caller can report them.
    pub fn from_raw<'a>(
        package: impl Into<String>,
        raw: impl IntoIterator<Item = &'a str>,
        prerelease_targets: bool,
    ) -> (Self, Vec<String>) {
        let mut dropped = Vec::new();
        let mut parsed = Vec::new();
        for text in raw {
            match Version::parse(text) {
                Ok(v) => parsed.push(v),
                Err(_) => dropped.push(text.to_string()),
            }
        }
        (ReleaseHistory::new(package, parsed, prerelease_targets), dropped)
    }

    pub fn package(&self) -> &str {
        &self.package
    }

    pub fn releases(&self) -> &[Version] {
        &self.releases
    }

    pub fn contains(&self, version: &Version) -> bool {
        self.releases.binary_search(version).is_ok()
    }

    /// Looks a release up by its raw string.
    pub fn find(&self, raw: &str) -> Option<&Version> {
        self.releases.iter().find(|v| v.as_str() == raw)
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    fn targets(&self) -> impl DoubleEndedIterator<Item = &Version> {
        let all = self.prerelease_targets;
        self.releases.iter().filter(move |v| all || !v.is_prerelease())
    }

    /// Latest release of the next lower major level, if any.
    pub fn decrement_major(&self, current: &Version) -> Option<&Version> {
        // releases are ascending, so the last one below the major is the
        // latest release of the largest smaller major
        self.targets().rev().find(|v| v.major < current.major)
    }

    /// Latest release of the next lower minor level within the same major.
    pub fn decrement_minor(&self, current: &Version) -> Option<&Version> {
        self.targets().rev().find(|v| v.major == current.major && v.minor < current.minor)
    }

    /// Maximum release; prereleases only count when `include_prerelease` is
    /// set or nothing else exists.
    pub fn latest(&self, include_prerelease: bool) -> Result<&Version, VersionError> {
        let last = self.releases.last().ok_or_else(|| VersionError::EmptyHistory(self.package.clone()))?;
        if include_prerelease {
            return Ok(last);
        }
        Ok(self.releases.iter().rev().find(|v| !v.is_prerelease()).unwrap_or(last))
    }
}

pub fn parse_version(text: &str) -> Result<Version, VersionError> {
    Version::parse(text)
}

pub fn decrement_semver_major<'h>(history: &'h ReleaseHistory, current: &Version) -> Option<&'h Version> {
    history.decrement_major(current)
}

pub fn decrement_semver_minor<'h>(history: &'h ReleaseHistory, current: &Version) -> Option<&'h Version> {
    history.decrement_minor(current)
}

pub fn latest_version(history: &ReleaseHistory, include_prerelease: bool) -> Result<&Version, VersionError> {
    history.latest(include_prerelease)
}
