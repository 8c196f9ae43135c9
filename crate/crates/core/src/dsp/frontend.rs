use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, FeatureMatrix, FrontendConfig};
use crate::corpus::AudioSegment;

fn mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

/// Triangular filter: first FFT bin it touches and its weights.
#[derive(Debug, Clone)]
struct MelFilter {
    start: usize,
    weights: Vec<f64>,
}

fn mel_filterbank(cfg: &FrontendConfig) -> Vec<MelFilter> {
    let n_bins = cfg.fft_size / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let (lo, hi) = (mel(cfg.low_freq), mel(cfg.high_freq));
    let step = (hi - lo) / (cfg.n_mel_bins + 1) as f64;
    (0..cfg.n_mel_bins)
        .map(|m| {
            let left = lo + m as f64 * step;
            let center = left + step;
            let right = center + step;
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let m_k = mel(k as f64 * bin_hz);
                let w = if m_k > left && m_k <= center {
                    (m_k - left) / (center - left)
                } else if m_k > center && m_k < right {
                    (right - m_k) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    start.get_or_insert(k);
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            MelFilter { start: start.unwrap_or(0), weights }
        })
        .collect()
}

fn hamming(n: usize) -> Vec<f64> {
    let denom = (n - 1).max(1) as f64;
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos()).collect()
}

/// Orthonormal DCT-II of `x`, returning coefficients `first..first+count`.
pub(crate) fn dct_ii(x: &[f64], first: usize, count: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (first..first + count)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Reusable feature extractor holding the window, FFT plan and filterbank.
pub struct Frontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

/// Per-frame intermediate values shared by fbank and mfcc.
struct FrameSpectra {
    log_mel: Vec<f64>,
    log_energy: Vec<f64>,
    frames: usize,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        let window = hamming(cfg.frame_len());
        let filters = mel_filterbank(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self { cfg, window, filters, fft })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    fn analyze(&self, seg: &AudioSegment) -> Result<FrameSpectra, DspError> {
        let cfg = &self.cfg;
        if seg.sample_rate != cfg.sample_rate {
            return Err(DspError::SampleRate { got: seg.sample_rate, expected: cfg.sample_rate });
        }
        let len = cfg.frame_len();
        let frames = cfg.num_frames(seg.len());
        if frames == 0 {
            return Err(DspError::TooShort { samples: seg.len(), frame: len });
        }
        let mut signal: Vec<f64> = seg.samples.iter().map(|&s| s as f64).collect();
        if cfg.dither > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.dither_seed);
            for s in &mut signal {
                let n: f64 = StandardNormal.sample(&mut rng);
                *s += cfg.dither * n;
            }
        }
        let n_mel = cfg.n_mel_bins;
        let mut log_mel = Vec::with_capacity(frames * n_mel);
        let mut log_energy = Vec::with_capacity(frames);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut frame = vec![0.0; len];
        let shift = cfg.frame_shift();
        for t in 0..frames {
            frame.copy_from_slice(&signal[t * shift..t * shift + len]);
            let energy: f64 = frame.iter().map(|v| v * v).sum();
            log_energy.push(energy.max(cfg.energy_floor).ln());
            for i in (1..len).rev() {
                frame[i] -= cfg.preemphasis * frame[i - 1];
            }
            frame[0] -= cfg.preemphasis * frame[0];
            for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(x * w, 0.0);
            }
            for b in buf[len..].iter_mut() {
                *b = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for filt in &self.filters {
                let e: f64 = filt
                    .weights
                    .iter()
                    .zip(&buf[filt.start..])
                    .map(|(w, c)| w * c.norm_sqr())
                    .sum();
                log_mel.push(e.max(cfg.energy_floor).ln());
            }
        }
        Ok(FrameSpectra { log_mel, log_energy, frames })
    }

    /// Log mel filterbank energies, `n_mel_bins` per frame.
    pub fn fbank(&self, seg: &AudioSegment) -> Result<FeatureMatrix, DspError> {
        let spectra = self.analyze(seg)?;
        let n = self.cfg.n_mel_bins;
        Ok(FeatureMatrix::new(spectra.frames, n, spectra.log_mel, format!("fbank{n}")))
    }

    /// Cepstra `c1..c_{n_ceps}` of the log mel energies followed by the log raw
    /// frame energy.
    pub fn mfcc(&self, seg: &AudioSegment) -> Result<FeatureMatrix, DspError> {
        let spectra = self.analyze(seg)?;
        let (n_mel, n_ceps) = (self.cfg.n_mel_bins, self.cfg.n_ceps);
        let mut data = Vec::with_capacity(spectra.frames * (n_ceps + 1));
        for t in 0..spectra.frames {
            data.extend(dct_ii(&spectra.log_mel[t * n_mel..(t + 1) * n_mel], 1, n_ceps));
            data.push(spectra.log_energy[t]);
        }
        Ok(FeatureMatrix::new(spectra.frames, n_ceps + 1, data, format!("mfcc{n_ceps}+e")))
    }
}

pub fn fbank(seg: &AudioSegment, cfg: &FrontendConfig) -> Result<FeatureMatrix, DspError> {
    Frontend::new(cfg.clone())?.fbank(seg)
}

pub fn mfcc(seg: &AudioSegment, cfg: &FrontendConfig) -> Result<FeatureMatrix, DspError> {
    Frontend::new(cfg.clone())?.mfcc(seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(n: usize, seed: u64) -> AudioSegment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSegment::new((0..n).map(|_| rng.gen_range(-0.4f32..0.4)).collect(), 16_000)
    }

    #[test]
    fn fbank_shape_for_hmm_length() {
        let f = fbank(&noise(7840, 1), &FrontendConfig::fbank()).unwrap();
        assert_eq!((f.rows(), f.cols()), (47, 40));
        assert_eq!(f.label, "fbank40");
        assert!(f.is_finite());
    }

    #[test]
    fn mfcc_shape_for_cough_length() {
        let f = mfcc(&noise(5760, 2), &FrontendConfig::mfcc()).unwrap();
        assert_eq!((f.rows(), f.cols()), (34, 20));
        assert_eq!(f.label, "mfcc19+e");
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let cfg = FrontendConfig::fbank();
        let f = fbank(&AudioSegment::new(vec![0.0; 4000], 16_000), &cfg).unwrap();
        let floor = cfg.energy_floor.ln();
        assert!(f.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn gain_shifts_log_energies_by_log_power_gain() {
        let seg = noise(6000, 3);
        let loud = AudioSegment::new(seg.samples.iter().map(|s| s * 2.0).collect(), 16_000);
        let cfg = FrontendConfig::fbank();
        let (a, b) = (fbank(&seg, &cfg).unwrap(), fbank(&loud, &cfg).unwrap());
        let shift = 2.0 * 2f64.ln();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((y - x - shift).abs() < 1e-9, "{x} -> {y}");
        }
    }

    #[test]
    fn too_short_segment_is_rejected() {
        let err = fbank(&noise(399, 4), &FrontendConfig::fbank()).unwrap_err();
        assert_eq!(err, DspError::TooShort { samples: 399, frame: 400 });
    }

    #[test]
    fn dct_of_constant_has_no_ac_terms() {
        let c = dct_ii(&[3.7; 23], 1, 19);
        assert!(c.iter().all(|v| v.abs() < 1e-8));
        let c0 = dct_ii(&[3.7; 23], 0, 1)[0];
        assert!((c0 - 3.7 * 23f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn filterbank_weights_are_a_partition_at_most() {
        for cfg in [FrontendConfig::fbank(), FrontendConfig::mfcc()] {
            let filters = mel_filterbank(&cfg);
            let mut per_bin = vec![0.0; cfg.fft_size / 2 + 1];
            for f in &filters {
                assert!(!f.weights.is_empty());
                for (i, &w) in f.weights.iter().enumerate() {
                    assert!(w >= 0.0);
                    per_bin[f.start + i] += w;
                }
            }
            assert!(per_bin.iter().all(|&s| s <= 1.0 + 1e-6));
        }
    }

    #[test]
    fn deterministic_without_dither() {
        let seg = noise(5000, 9);
        let cfg = FrontendConfig::mfcc();
        assert_eq!(mfcc(&seg, &cfg).unwrap(), mfcc(&seg, &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig { fft_size: 256, ..FrontendConfig::fbank() }.validate().is_err());
        assert!(FrontendConfig { n_ceps: 23, ..FrontendConfig::mfcc() }.validate().is_err());
        assert!(FrontendConfig { frame_shift_ms: 30.0, ..FrontendConfig::fbank() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn frame_count_formula(n in 400usize..20_000) {
            let cfg = FrontendConfig::fbank();
            let f = Frontend::new(cfg.clone()).unwrap().fbank(&AudioSegment::new(vec![0.01; n], 16_000)).unwrap();
            prop_assert_eq!(f.rows(), 1 + (n - 400) / 160);
        }
    }
}
