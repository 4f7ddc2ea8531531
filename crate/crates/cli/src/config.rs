//! Config file loading and `--set key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use scrubkit::harness::ExperimentConfig;
use toml::{Table, Value};

/// Reads `path` (or starts empty), applies each `key.path=value` override and
/// deserializes. Missing keys take their defaults.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse::<Table>().with_context(|| format!("parsing {}", p.display()))?
        }
        None => Table::new(),
    };
    for s in sets {
        let (key, raw) = s.split_once('=').with_context(|| format!("override {s:?} is not key=value"))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    Value::Table(table).try_into().context("invalid configuration")
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("bad override key {key:?}");
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override {key:?}: {part:?} is not a table"),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
