//! CSV series and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{hex_digest, ExperimentConfig};
use crate::CliError;

/// One plotted point: `(es_n0_db, value, stderr)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub es_n0_db: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Renders a series as CSV. Floats use the shortest round-trip form, so
/// identical results give identical bytes.
pub fn series_csv(points: &[SeriesPoint]) -> String {
    let mut s = String::from("es_n0_db,value,stderr\n");
    for p in points {
        s.push_str(&format!("{:?},{:?},{:?}\n", p.es_n0_db, p.value, p.stderr));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub verb: String,
    pub scheme: String,
    pub channel: String,
    pub seed: u64,
    pub config_sha256: String,
    pub checkpoint: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub outputs: Vec<OutputFile>,
    /// Verb-specific details such as per-point bit counts.
    pub details: serde_json::Value,
}

/// Collects files written by one verb and emits the manifest last.
pub struct RunWriter {
    dir: PathBuf,
    outputs: Vec<OutputFile>,
}

impl RunWriter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut f = std::fs::File::create(&path)?;
        f.write_all(contents)?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            sha256: hex_digest(contents),
        });
        Ok(path)
    }

    /// Writes `<stem>.manifest.json` and returns its path.
    pub fn finish(
        self,
        stem: &str,
        verb: &str,
        config: &ExperimentConfig,
        details: serde_json::Value,
    ) -> Result<PathBuf, CliError> {
        let checkpoint_sha256 = match &config.checkpoint {
            Some(p) if p.exists() => Some(hex_digest(&std::fs::read(p)?)),
            _ => None,
        };
        let manifest = Manifest {
            schema_version: crate::config::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            verb: verb.to_string(),
            scheme: config.scheme.to_string(),
            channel: config.channel.to_string(),
            seed: config.seed,
            config_sha256: config.digest()?,
            checkpoint: config.checkpoint.as_ref().map(|p| p.display().to_string()),
            checkpoint_sha256,
            outputs: self.outputs,
            details,
        };
        let path = self.dir.join(format!("{stem}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let s = series_csv(&[
            SeriesPoint {
                es_n0_db: 5.0,
                value: 0.1,
                stderr: 0.0,
            },
            SeriesPoint {
                es_n0_db: 10.5,
                value: 1.0 / 3.0,
                stderr: 1e-3,
            },
        ]);
        assert_eq!(s, "es_n0_db,value,stderr\n5.0,0.1,0.0\n10.5,0.3333333333333333,0.001\n");
    }
}
