//! Result bundles: a directory of artifacts plus a `bundle.json` manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "bundle.json";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Artifacts collected in memory and flushed together.
#[derive(Debug)]
pub struct ResultBundle {
    dir: PathBuf,
    command: String,
    files: Vec<(String, Vec<u8>)>,
    summary: Map<String, Value>,
}

impl ResultBundle {
    pub fn new(dir: impl Into<PathBuf>, command: &str) -> Self {
        Self {
            dir: dir.into(),
            command: command.to_string(),
            files: Vec::new(),
            summary: Map::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.add(name, text);
    }

    /// Records a key in the manifest summary.
    pub fn note<T: Serialize>(&mut self, key: &str, value: T) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).expect("value serializes"));
    }

    pub fn file_names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Manifest contents. Holds no wall-clock data.
    pub fn manifest(&self, config: Option<&ExperimentConfig>) -> Value {
        let mut files: Vec<&str> = self.file_names();
        files.sort_unstable();
        json!({
            "tool": "qsdlab",
            "version": VERSION,
            "command": self.command,
            "config": config.map(ExperimentConfig::normalized),
            "config_hash": config.map(ExperimentConfig::hash),
            "files": files,
            "summary": Value::Object(self.summary.clone()),
        })
    }

    /// Writes every artifact and the manifest; returns the manifest path.
    pub fn write(&self, config: Option<&ExperimentConfig>) -> io::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        for (name, bytes) in &self.files {
            fs::write(self.dir.join(name), bytes)?;
        }
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.manifest(config)).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ResultBundle::new(dir.path(), "qsd");
        b.add("z.csv", "a\n");
        b.add("a.json", "{}\n");
        b.add("z.csv", "b\n");
        b.note("rho", 0.5);
        let path = b.write(None).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["files"], json!(["a.json", "z.csv"]));
        assert_eq!(v["summary"]["rho"], json!(0.5));
        assert_eq!(fs::read_to_string(dir.path().join("z.csv")).unwrap(), "b\n");
    }
}
