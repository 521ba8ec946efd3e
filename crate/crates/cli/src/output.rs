//! Output plumbing: metadata headers, CSV/JSON writers, float formatting.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Run provenance carried by every output document.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub scenario_sha256: String,
    /// Waist used to convert between absolute and waist units.
    pub w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_override: Option<u64>,
}

impl Meta {
    pub fn new(command: &'static str, scenario_bytes: &[u8], w: f64, seed: Option<u64>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(scenario_bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        Meta {
            tool: "modesep",
            version: env!("CARGO_PKG_VERSION"),
            command,
            scenario_sha256: hex,
            w,
            seed_override: seed,
        }
    }

    /// The `#`-prefixed comment block of CSV outputs.
    pub fn csv_header(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# {} {} {}\n",
            self.tool, self.version, self.command
        ));
        s.push_str(&format!("# scenario_sha256: {}\n", self.scenario_sha256));
        s.push_str(&format!("# w: {}\n", fmt(self.w)));
        match self.seed_override {
            Some(seed) => s.push_str(&format!("# seed_override: {seed}\n")),
            None => s.push_str("# seed_override: none\n"),
        }
        s
    }
}

/// Fixed-width scientific float formatting; stable across runs and platforms.
pub fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// An optional cell: empty when absent.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Writes `content` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| {
                        CliError::validation(format!("output {}: {e}", p.display()))
                    })?;
                }
            }
            std::fs::write(p, content)
                .map_err(|e| CliError::validation(format!("output {}: {e}", p.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .map_err(|e| CliError::validation(format!("stdout: {e}")))
        }
    }
}

/// Serializes a JSON document with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::numerical(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}
