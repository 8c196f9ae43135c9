use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use tev_core::embednet::FrameNetConfig;
use tev_core::gmm::EmConfig;
use tev_core::pipeline::FeatureConfig;
use tev_core::viz::TsneConfig;

/// File name of the effective config written next to every output.
pub const ECHO_NAME: &str = "tev-config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvConfig {
    pub rank: usize,
    pub iters: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self { rank: 8, iters: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Upper bound on the LDA output dimension; clipped to classes - 1.
    pub lda_dim: usize,
    pub plda_iters: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { lda_dim: 150, plda_iters: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Sampled trials per event for human-style lists.
    pub per_event: usize,
    pub p_target: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { per_event: 6, p_target: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    pub max_per_group: usize,
    pub tsne: TsneConfig,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { max_per_group: 200, tsne: TsneConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed, copied into every module.
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub features: FeatureConfig,
    pub gmm: EmConfig,
    pub tvspace: TvConfig,
    pub embednet: FrameNetConfig,
    pub backend: BackendConfig,
    pub eval: EvalConfig,
    pub viz: PlotConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Fixes the master seed (flag, then file, then 0 when deterministic,
    /// otherwise fresh entropy) and pushes it into every module.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or_else(|| if self.deterministic { 0 } else { rand::random() });
        self.seed = Some(seed);
        self.gmm.seed = seed;
        self.embednet.seed = seed;
        self.viz.tsne.seed = seed;
        seed
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the effective config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join(ECHO_NAME);
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn echo_beside(&self, file: &Path) -> Result<()> {
        self.echo(&parent_dir(file))
    }
}

pub fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
