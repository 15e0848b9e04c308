use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// SHA-256 of the canonical JSON form of the resolved configuration.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes `manifest.json` into `dir`. `extra` fields are merged in.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &impl Serialize,
    extra: Value,
) -> Result<(), CliError> {
    let config = serde_json::to_value(config)?;
    let mut manifest = json!({
        "tool": "mlcoda",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config_hash": config_hash(&config),
        "config": config,
    });
    if let (Some(m), Value::Object(extra)) = (manifest.as_object_mut(), extra) {
        m.extend(extra);
    }
    write_json(&dir.join("manifest.json"), &manifest)
}
