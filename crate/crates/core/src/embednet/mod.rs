//! Frame-level speaker feature learner and d-vector extraction.
//!
//! The network reads one spliced Fbank row per frame, reshaped to a
//! `input_frames x input_bins` time-frequency patch, and runs:
//!
//! 1. convolution blocks (valid 2-D convolution, ReLU, max-pool along
//!    frequency), applied to every frame independently;
//! 2. time-delay layers, each an affine map of the previous layer's outputs
//!    at a set of frame offsets (edges replicated), followed by ReLU;
//! 3. a ReLU feature layer of width `feature_dim` whose activations are the
//!    frame-level speaker features;
//! 4. a linear softmax output over the training speakers.
//!
//! d-vectors are the frame average of the feature layer.

mod net;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::FeatureMatrix;
use crate::tvspace::{SpeakerVector, VectorKind};

pub use net::{softmax_rows, FrameNet, NetForward};
pub use train::{grad_check, mean_loss, train, GradCheckReport, LabeledUtterance, TrainLog};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input has {got} columns, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("label {label} out of range for {n_speakers} speakers")]
    BadLabel { label: usize, n_speakers: usize },
    #[error("training needs at least 2 speakers with data, got {0}")]
    TooFewSpeakers(usize),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("parameter blob has {got} values, layout needs {expected}")]
    ParameterCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub time_kernel: usize,
    pub freq_kernel: usize,
    pub freq_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdnnLayer {
    pub offsets: Vec<i32>,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameNetConfig {
    /// Context frames per input row (9 for a ±4 splice).
    pub input_frames: usize,
    /// Filterbank bins per context frame.
    pub input_bins: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub tdnn_layers: Vec<TdnnLayer>,
    pub feature_dim: usize,
    /// Softmax size; 5000 in the full-scale setup, the number of training
    /// speakers at desk scale.
    pub n_speakers: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Utterances per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FrameNetConfig {
    fn default() -> Self {
        Self {
            input_frames: 9,
            input_bins: 40,
            conv_blocks: vec![
                ConvBlock { out_channels: 4, time_kernel: 4, freq_kernel: 8, freq_pool: 2 },
                ConvBlock { out_channels: 8, time_kernel: 3, freq_kernel: 4, freq_pool: 2 },
            ],
            tdnn_layers: vec![
                TdnnLayer { offsets: vec![-2, 0, 2], units: 64 },
                TdnnLayer { offsets: vec![-4, 0, 4], units: 64 },
            ],
            feature_dim: 16,
            n_speakers: 20,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 8,
            epochs: 15,
            seed: 0,
        }
    }
}

impl FrameNetConfig {
    pub fn input_dim(&self) -> usize {
        self.input_frames * self.input_bins
    }

    /// (channels, time, freq) after each conv block, starting with the input.
    pub fn conv_shapes(&self) -> Result<Vec<(usize, usize, usize)>, NetError> {
        let mut shapes = vec![(1, self.input_frames, self.input_bins)];
        for (i, b) in self.conv_blocks.iter().enumerate() {
            let (_, t, f) = *shapes.last().unwrap();
            if b.out_channels == 0 || b.time_kernel == 0 || b.freq_kernel == 0 || b.freq_pool == 0 {
                return Err(NetError::InvalidConfig(format!("conv block {i} has a zero size")));
            }
            if b.time_kernel > t || b.freq_kernel > f || (f - b.freq_kernel + 1) / b.freq_pool == 0 {
                return Err(NetError::InvalidConfig(format!("conv block {i} does not fit its {t}x{f} input")));
            }
            shapes.push((b.out_channels, t - b.time_kernel + 1, (f - b.freq_kernel + 1) / b.freq_pool));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_frames == 0 || self.input_bins == 0 {
            return Err(NetError::InvalidConfig("input shape must be non-empty".into()));
        }
        if self.feature_dim == 0 {
            return Err(NetError::InvalidConfig("feature_dim must be at least 1".into()));
        }
        if self.n_speakers < 2 {
            return Err(NetError::InvalidConfig("n_speakers must be at least 2".into()));
        }
        if self.tdnn_layers.iter().any(|l| l.units == 0 || l.offsets.is_empty()) {
            return Err(NetError::InvalidConfig("time-delay layers need units and offsets".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch_size must be positive".into()));
        }
        self.conv_shapes().map(|_| ())
    }
}

/// Arithmetic mean of rows. Each column is summed in sorted order, so the
/// result is exactly invariant to row order.
pub fn mean_pool(features: &FeatureMatrix) -> Result<Vec<f64>, NetError> {
    let n = features.rows();
    if n == 0 {
        return Err(NetError::Empty);
    }
    let mut column = Vec::with_capacity(n);
    Ok((0..features.cols())
        .map(|d| {
            column.clear();
            column.extend((0..n).map(|t| features.get(t, d)));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n as f64
        })
        .collect())
}

/// Average of the frame-level speaker features of one utterance.
pub fn dvector(net: &FrameNet, frames: &FeatureMatrix, utt_id: &str) -> Result<SpeakerVector, NetError> {
    if frames.rows() == 0 {
        return Err(NetError::Empty);
    }
    let out = net.forward(frames)?;
    Ok(SpeakerVector::new(utt_id, VectorKind::DVector, mean_pool(&out.features)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Net without temporal context: every frame is processed alone.
    fn context_free() -> FrameNet {
        let cfg = FrameNetConfig {
            input_frames: 3,
            input_bins: 8,
            conv_blocks: vec![ConvBlock { out_channels: 2, time_kernel: 2, freq_kernel: 3, freq_pool: 2 }],
            tdnn_layers: vec![TdnnLayer { offsets: vec![0], units: 6 }],
            feature_dim: 4,
            n_speakers: 3,
            seed: 11,
            ..FrameNetConfig::default()
        };
        FrameNet::new(cfg).unwrap()
    }

    fn frames(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(), "x")
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = FrameNetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.input_dim(), 360);
        assert_eq!(cfg.conv_shapes().unwrap(), vec![(1, 9, 40), (4, 6, 16), (8, 4, 6)]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let too_wide = FrameNetConfig {
            conv_blocks: vec![ConvBlock { out_channels: 2, time_kernel: 10, freq_kernel: 3, freq_pool: 1 }],
            ..FrameNetConfig::default()
        };
        assert!(too_wide.validate().is_err());
        assert!(FrameNetConfig { n_speakers: 1, ..FrameNetConfig::default() }.validate().is_err());
        assert!(FrameNetConfig { feature_dim: 0, ..FrameNetConfig::default() }.validate().is_err());
    }

    #[test]
    fn single_frame_dvector_is_that_frame() {
        let net = context_free();
        let x = frames(1, 24, 1);
        let d = dvector(&net, &x, "u").unwrap();
        assert_eq!(d.values, net.forward(&x).unwrap().features.row(0));
        assert_eq!(d.kind, VectorKind::DVector);
        assert_eq!(dvector(&net, &FeatureMatrix::zeros(0, 24, "e"), "u").unwrap_err(), NetError::Empty);
    }

    #[test]
    fn dvector_ignores_frame_order() {
        let net = context_free();
        let x = frames(17, 24, 2);
        let order: Vec<usize> = (0..17).map(|i| (i * 5 + 3) % 17).collect();
        assert_eq!(dvector(&net, &x, "u").unwrap(), dvector(&net, &x.select_rows(&order), "u").unwrap());
    }

    #[test]
    fn dvector_of_concatenation_is_mean_of_dvectors() {
        let net = context_free();
        let (a, b) = (frames(10, 24, 3), frames(10, 24, 4));
        let da = dvector(&net, &a, "a").unwrap();
        let db = dvector(&net, &b, "b").unwrap();
        let dc = dvector(&net, &FeatureMatrix::concat(&[&a, &b]), "c").unwrap();
        for k in 0..da.dim() {
            assert!((dc.values[k] - 0.5 * (da.values[k] + db.values[k])).abs() < 1e-12);
        }
    }
}
