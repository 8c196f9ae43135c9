//! Acoustic frontend: framing, log mel filterbanks, MFCC with log energy,
//! regression deltas, context splicing and per-utterance CMVN.

mod archive;
mod frontend;
mod transforms;

use thiserror::Error;

pub use archive::{read_archive, write_archive, ArchiveError};
pub use frontend::{fbank, mfcc, Frontend};
pub use transforms::{add_deltas, cmvn, splice};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("segment has {samples} samples, shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("invalid frontend config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("segment sample rate {got} does not match config rate {expected}")]
    SampleRate { got: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub preemphasis: f64,
    pub n_mel_bins: usize,
    pub n_ceps: usize,
    pub fft_size: usize,
    pub low_freq: f64,
    pub high_freq: f64,
    pub dither: f64,
    /// Seed of the dither noise; unused when `dither` is 0.
    pub dither_seed: u64,
    pub energy_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len_ms: 25.0,
            frame_shift_ms: 10.0,
            preemphasis: 0.97,
            n_mel_bins: 40,
            n_ceps: 19,
            fft_size: 512,
            low_freq: 20.0,
            high_freq: 7600.0,
            dither: 0.0,
            dither_seed: 0,
            energy_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    /// 40-bin log mel filterbank.
    pub fn fbank() -> Self {
        Self::default()
    }

    /// 23 mel bins feeding 19 cepstra plus log energy.
    pub fn mfcc() -> Self {
        Self { n_mel_bins: 23, ..Self::default() }
    }

    pub fn frame_len(&self) -> usize {
        (self.sample_rate as f64 * self.frame_len_ms / 1000.0).round() as usize
    }

    pub fn frame_shift(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    /// `1 + floor((n - L) / S)`, or 0 when `n < L`.
    pub fn num_frames(&self, n_samples: usize) -> usize {
        let (len, shift) = (self.frame_len(), self.frame_shift());
        if n_samples < len {
            0
        } else {
            1 + (n_samples - len) / shift
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let err = |m: &str| Err(DspError::InvalidConfig(m.to_owned()));
        let (len, shift) = (self.frame_len(), self.frame_shift());
        if shift == 0 || len == 0 {
            return err("frame length and shift must be positive");
        }
        if shift > len {
            return err("frame shift exceeds frame length");
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < len {
            return err("fft_size must be a power of two no smaller than the frame");
        }
        if self.n_ceps >= self.n_mel_bins {
            return err("n_ceps must be smaller than n_mel_bins");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.low_freq >= 0.0 && self.low_freq < self.high_freq && self.high_freq <= nyquist) {
            return err("mel band edges must satisfy 0 <= low < high <= nyquist");
        }
        if !(self.energy_floor > 0.0) || self.dither < 0.0 {
            return err("energy floor must be positive and dither non-negative");
        }
        Ok(())
    }
}

/// Row-major frames x dims matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub label: String,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, label: impl Into<String>) -> Self {
        assert_eq!(data.len(), rows * cols, "feature data does not match {rows}x{cols}");
        Self { rows, cols, data, label: label.into() }
    }

    pub fn zeros(rows: usize, cols: usize, label: impl Into<String>) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols], label)
    }

    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data, label)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.cols + d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks matrices of equal width.
    pub fn concat(parts: &[&FeatureMatrix]) -> FeatureMatrix {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            assert_eq!(m.cols, cols, "width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let label = parts.first().map_or_else(String::new, |m| m.label.clone());
        FeatureMatrix::new(rows, cols, data, label)
    }

    /// Copy with rows taken in the given order.
    pub fn select_rows(&self, order: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &t in order {
            data.extend_from_slice(self.row(t));
        }
        FeatureMatrix::new(order.len(), self.cols, data, self.label.clone())
    }
}
