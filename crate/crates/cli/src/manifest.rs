use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Run record written next to the primary output as `<out>.manifest.json`.
/// Holds no timestamps so identical runs produce identical manifests.
#[derive(Debug, Default, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub status: &'static str,
    pub error: Option<String>,
    pub exit_code: u8,
    pub config: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub results: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "podlrom",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            status: "ok",
            ..Self::default()
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn result(&mut self, name: &str, value: impl Serialize) {
        self.results.insert(name.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

pub fn path_for(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

/// `<out>.<suffix>` next to `out`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write(out: &Path, m: &Manifest) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path_for(out), text)
}
