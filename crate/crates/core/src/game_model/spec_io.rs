//! Text format for game specifications.
//!
//! A spec file is TOML with two tables, `[game]` and `[behavior]`, whose keys
//! mirror the fields of [`GameSpec`](super::spec::GameSpec) and
//! [`BehaviorPolicyPair`](super::spec::BehaviorPolicyPair). Tables are nested
//! arrays in the index order documented on each field; kernels are indexed
//! `[s][u][v][action][instrument]` and list a full next-state distribution.

use std::path::Path;

use super::fixtures;
use super::spec::SpecBundle;
use crate::error::{Error, Result};

/// Parses a spec bundle from TOML text and checks it.
pub fn parse_spec(text: &str) -> Result<SpecBundle> {
    let bundle: SpecBundle = toml::from_str(text).map_err(|e| Error::MalformedSpec(e.message().to_string()))?;
    bundle.check()?;
    Ok(bundle)
}

/// Serialises a spec bundle to TOML text.
pub fn render_spec(bundle: &SpecBundle) -> Result<String> {
    toml::to_string(bundle).map_err(|e| Error::MalformedSpec(e.to_string()))
}

/// Reads a spec bundle from a file.
pub fn read_spec(path: impl AsRef<Path>) -> Result<SpecBundle> {
    parse_spec(&std::fs::read_to_string(path)?)
}

/// Writes a spec bundle to a file.
pub fn write_spec(bundle: &SpecBundle, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_spec(bundle)?)?;
    Ok(())
}

/// Resolves a built-in fixture name or a spec file path.
pub fn load_spec(name_or_path: &str) -> Result<SpecBundle> {
    if let Some(bundle) = fixtures::builtin(name_or_path) {
        return Ok(bundle);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return read_spec(path);
    }
    Err(Error::MalformedSpec(format!(
        "'{name_or_path}' is neither a spec file nor a built-in fixture ({})",
        fixtures::BUILTIN_NAMES.join(", ")
    )))
}
