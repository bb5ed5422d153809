//! Config files and flag precedence.
//!
//! A config file is a JSON object. Top-level `jobs`, `plot` and `out` act as
//! the global flags; an object keyed by a subcommand name (`"extract": {...}`)
//! supplies that subcommand's options, keyed by the long flag name
//! (`"photon-number"`) and, for positional inputs, by the argument name
//! (`"traces"`, `"inputs"`). A flag given on the command line always wins
//! over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

const GLOBAL_KEYS: [&str; 3] = ["jobs", "plot", "out"];
const SECTIONS: [&str; 8] = [
    "fit",
    "power-sweep",
    "extract",
    "sensitivity",
    "predict",
    "plan-sweep",
    "simulate",
    "budget",
];

pub fn load(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let obj = v
        .as_object()
        .ok_or_else(|| CliError::Validation(format!("config {} must be a JSON object", path.display())))?;
    for k in obj.keys() {
        if !GLOBAL_KEYS.contains(&k.as_str()) && !SECTIONS.contains(&k.as_str()) {
            return Err(CliError::Validation(format!("config {}: unknown key '{k}'", path.display())));
        }
    }
    Ok(v)
}

pub fn globals(file: &Value) -> Value {
    let obj = file.as_object().expect("checked in load");
    Value::Object(
        obj.iter()
            .filter(|(k, _)| GLOBAL_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    )
}

pub fn section<'a>(file: &'a Value, name: &str) -> Option<&'a Value> {
    file.get(name)
}

/// Flags explicitly given on the command line: everything except nulls,
/// `false` switches and empty lists.
fn given(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m
            .into_iter()
            .filter(|(_, v)| !matches!(v, Value::Null | Value::Bool(false)) && v.as_array().is_none_or(|a| !a.is_empty()))
            .collect(),
        _ => Map::new(),
    }
}

/// Overlays the command-line values of `cli` on the config `file` section.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: Option<&Value>) -> Result<T> {
    let mut merged = match file {
        None => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(CliError::Validation("config sections must be JSON objects".into())),
    };
    let flags = serde_json::to_value(cli).map_err(|e| CliError::Validation(e.to_string()))?;
    merged.extend(given(flags));
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Validation(format!("config: {e}")))
}
