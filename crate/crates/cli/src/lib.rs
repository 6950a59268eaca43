//! Command-line harness: configuration, orchestration and reproducible output.

pub mod config;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

pub use config::{parse_config, parse_config_value, Issue, RunMode, SimConfig};
pub use run::{CliError, CliResult, Command};

/// Command-line values that override or supply configuration fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Dotted paths into the document (`system.grid.points`) with their values.
    pub fields: Vec<(String, Value)>,
}

fn set_path(doc: &mut Map<String, Value>, path: &str, value: Value) {
    let mut parts = path.split('.').peekable();
    let mut cur = doc;
    while let Some(key) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(key.to_owned(), value);
            return;
        }
        let entry = cur
            .entry(key.to_owned())
            .or_insert_with(|| Value::Object(Map::new()));
        if !entry.is_object() {
            *entry = Value::Object(Map::new());
        }
        cur = entry.as_object_mut().expect("object");
    }
}

/// Loads the configuration document (or starts from an empty one), applies
/// overrides and validates the result.
pub fn load_config(
    command: Command,
    path: Option<&Path>,
    overrides: &Overrides,
) -> CliResult<SimConfig> {
    let (mut doc, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::config("--config", format!("cannot read {}: {e}", p.display()))
            })?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config("--config", format!("malformed JSON: {e}")))?;
            (doc, p.parent().map(Path::to_owned).unwrap_or_default())
        }
        None if command == Command::FreeParticle => (Value::Object(Map::new()), PathBuf::from(".")),
        None => return Err(CliError::config("--config", "required for this subcommand")),
    };
    let Some(obj) = doc.as_object_mut() else {
        return Err(CliError::config("$", "expected a JSON object"));
    };
    for (k, v) in &overrides.fields {
        set_path(obj, k, v.clone());
    }
    if let Some(seed) = overrides.seed {
        obj.insert("master_seed".into(), Value::from(seed));
    }
    if let Some(dir) = &overrides.out_dir {
        obj.insert("output".into(), Value::from(dir.display().to_string()));
    }
    parse_config_value(&doc, &base, Some(command.mode_hint())).map_err(CliError::Config)
}
