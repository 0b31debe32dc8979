//! TOML experiment configuration (schema version 1).
//!
//! ```toml
//! version = 1
//! scheme = "psgs-2/3"        # psgs-2/3 | psgs-1/2 | mbqam-2/3 | gs | uniform-qam
//! channel = "awgn"           # awgn | rbf
//! m = 6
//! snr_db = [5.0, 10.0, 15.0]
//! samples = 100000           # symbols per SNR point for BMI
//! seed = 1
//! checkpoint = "models/psgs-2-3.model"
//! output_dir = "out"
//!
//! [ber]
//! min_codewords = 100
//! max_codewords = 10000
//! min_errors = 100
//! max_iterations = 100
//!
//! [train]                    # any training option, merged over the scheme defaults
//! iterations = 3000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shaping_core::channels::ChannelKind;
use shaping_core::models::{ModelKind, TransmitterModel};
use shaping_core::training::TrainConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "psgs-2/3")]
    Psgs23,
    #[serde(rename = "psgs-1/2")]
    Psgs12,
    #[serde(rename = "mbqam-2/3")]
    Mbqam23,
    #[serde(rename = "gs")]
    Gs,
    #[serde(rename = "uniform-qam")]
    UniformQam,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Psgs23, Scheme::Mbqam23, Scheme::Psgs12, Scheme::Gs, Scheme::UniformQam];

    pub fn model_kind(self) -> ModelKind {
        match self {
            Scheme::Psgs23 | Scheme::Psgs12 => ModelKind::Psgs,
            Scheme::Mbqam23 => ModelKind::Mbqam,
            Scheme::Gs => ModelKind::Gs,
            Scheme::UniformQam => ModelKind::UniformQam,
        }
    }

    /// Code rate as `(numerator, denominator)`.
    pub fn code_rate(self) -> (usize, usize) {
        match self {
            Scheme::Psgs12 => (1, 2),
            _ => (2, 3),
        }
    }

    /// Information bits per symbol, `m·r`.
    pub fn info_bits(self, m: usize) -> Result<usize, CliError> {
        let (a, b) = self.code_rate();
        if (m * a) % b != 0 {
            return Err(CliError::Config(format!("rate {a}/{b} does not divide m = {m}")));
        }
        Ok(m * a / b)
    }

    pub fn transmitter(self, m: usize) -> Result<TransmitterModel, CliError> {
        TransmitterModel::new(self.model_kind(), m, self.info_bits(m)?).map_err(|e| CliError::Config(e.to_string()))
    }

    /// File-name form, e.g. `psgs-2-3`.
    pub fn slug(self) -> &'static str {
        match self {
            Scheme::Psgs23 => "psgs-2-3",
            Scheme::Psgs12 => "psgs-1-2",
            Scheme::Mbqam23 => "mbqam-2-3",
            Scheme::Gs => "gs",
            Scheme::UniformQam => "uniform-qam",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Psgs23 => "psgs-2/3",
            Scheme::Psgs12 => "psgs-1/2",
            Scheme::Mbqam23 => "mbqam-2/3",
            Scheme::Gs => "gs",
            Scheme::UniformQam => "uniform-qam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BerSettings {
    pub min_codewords: usize,
    pub max_codewords: usize,
    pub min_errors: u64,
    pub max_iterations: usize,
}

impl Default for BerSettings {
    fn default() -> Self {
        Self {
            min_codewords: 100,
            max_codewords: 10_000,
            min_errors: 100,
            max_iterations: shaping_fec::DEFAULT_MAX_ITERATIONS,
        }
    }
}

fn default_m() -> usize {
    6
}

fn default_samples() -> usize {
    100_000
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_channel() -> ChannelKind {
    ChannelKind::Awgn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub scheme: Scheme,
    #[serde(default = "default_channel")]
    pub channel: ChannelKind,
    #[serde(default = "default_m")]
    pub m: usize,
    pub snr_db: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ber: BerSettings,
    /// Training options layered over [`TrainConfig::for_scheme`].
    #[serde(default)]
    pub train: toml::Table,
}

impl ExperimentConfig {
    pub fn new(scheme: Scheme, channel: ChannelKind, snr_db: Vec<f64>) -> Self {
        Self {
            version: SCHEMA_VERSION,
            scheme,
            channel,
            m: default_m(),
            snr_db,
            samples: default_samples(),
            seed: 0,
            checkpoint: None,
            output_dir: default_output(),
            ber: BerSettings::default(),
            train: toml::Table::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.output_dir = base.join(&c.output_dir);
        c.checkpoint = c.checkpoint.map(|p| base.join(p));
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("unsupported config version {}", self.version)));
        }
        if self.snr_db.is_empty() {
            return Err(CliError::Config("snr grid is empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) || self.snr_db.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("snr grid must be finite and strictly increasing".into()));
        }
        if self.samples == 0 {
            return Err(CliError::Config("samples must be at least 1".into()));
        }
        let b = &self.ber;
        if b.min_codewords == 0 || b.max_codewords < b.min_codewords || b.max_iterations == 0 {
            return Err(CliError::Config("ber needs 1 ≤ min_codewords ≤ max_codewords and max_iterations ≥ 1".into()));
        }
        self.scheme.transmitter(self.m)?;
        Ok(())
    }

    /// Training configuration: scheme defaults with the `[train]` table
    /// applied on top.
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let tx = self.scheme.transmitter(self.m)?;
        let base = TrainConfig::for_scheme(tx.kind, self.channel, tx.m, tx.k);
        let mut table = toml::Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
        for (key, value) in &self.train {
            if matches!(key.as_str(), "model" | "channel" | "m" | "k") {
                return Err(CliError::Config(format!("train.{key} is set by the scheme and channel")));
            }
            table.insert(key.clone(), value.clone());
        }
        let cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn digest(&self) -> Result<String, CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(hex_digest(text.as_bytes()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
