//! TOML configuration files layered over built-in defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{CliError, Result};

/// Recursively overwrites `base` with every key present in `over`.
fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `defaults` with the keys of the TOML file at `path` (if any) applied on top.
/// Unknown keys are rejected.
pub fn load_over<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?);
    };
    if !path.exists() {
        return Err(CliError::Usage(format!("{} does not exist", path.display())));
    }
    let text = fs::read_to_string(path)?;
    let user: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut base = toml::Table::try_from(defaults).map_err(|e| CliError::Usage(e.to_string()))?;
    let known: Vec<String> = base.keys().cloned().collect();
    if let Some(bad) = user.keys().find(|k| !known.contains(k) && !is_optional_key(k)) {
        return Err(CliError::Usage(format!("{}: unknown key '{bad}'", path.display())));
    }
    overlay(&mut base, user);
    toml::Value::Table(base)
        .try_into()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Keys whose default is `None` vanish from the serialized defaults.
fn is_optional_key(k: &str) -> bool {
    matches!(k, "pos_weight" | "min_forks")
}
