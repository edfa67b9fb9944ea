//! `key = value` configuration files.

use std::fs;
use std::path::Path;

use converter_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits `text` into entries. `#` starts a comment; blank lines are skipped.
pub fn parse_entries(text: &str, source: &str) -> CliResult<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Config {
            path: source.to_string(),
            line,
            message,
        };
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', found '{body}'")))?;
        let (key, value) = (k.trim(), v.trim());
        if key.is_empty() || value.is_empty() {
            return Err(err(format!("expected 'key = value', found '{body}'")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(err(format!(
                "duplicate key '{key}' (first set on line {})",
                prev.line
            )));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(out)
}

pub fn apply_entries(cfg: &mut TrainConfig, entries: &[Entry], source: &str) -> CliResult<()> {
    for e in entries {
        cfg.set(&e.key, &e.value).map_err(|err| CliError::Config {
            path: source.to_string(),
            line: e.line,
            message: err.to_string(),
        })?;
    }
    Ok(())
}

/// `key=value` as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got '{s}'")),
    }
}

/// Defaults, then the file (if any), then the overrides in order. The result is validated.
pub fn load_train_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let source = path.display().to_string();
        apply_entries(&mut cfg, &parse_entries(&text, &source)?, &source)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)
            .map_err(|e| CliError::Usage(format!("override {k}={v}: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}
