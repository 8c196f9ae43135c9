//! Diagonal-covariance GMM used as the universal background model, its EM
//! trainer, and Baum-Welch statistic accumulation.
//!
//! First-order statistics are centered on the component means
//! (`F_c = Σ_t γ_c(t) (x_t − μ_c)`), so the i-vector extractor needs no
//! mean-offset term.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::FeatureMatrix;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
/// Components whose occupancy falls below this keep their previous mean and
/// variance.
const MIN_OCCUPANCY: f64 = 1e-6;
/// Utterances per E-step work unit; partial sums merge in unit order.
const CHUNK: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} frames for {components} components, got {frames}")]
    TooFewFrames { frames: usize, needed: usize, components: usize },
    #[error("features contain non-finite values")]
    NonFinite,
    #[error("dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("statistics shapes differ: ({0}, {1}) vs ({2}, {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("invalid GMM: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmmInit {
    BinarySplit,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub n_components: usize,
    /// EM iterations run after each split (or after k-means seeding).
    pub n_iters: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
    pub init: GmmInit,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { n_components: 64, n_iters: 4, variance_floor: 1e-3, init: GmmInit::BinarySplit, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    // cached: ln w_c - ½ Σ_d ln(2π σ²_cd), and 1/σ²
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self, GmmError> {
        let c = weights.len();
        if c == 0 || dim == 0 {
            return Err(GmmError::Invalid("need at least one component and one dimension".into()));
        }
        if means.len() != c * dim || variances.len() != c * dim {
            return Err(GmmError::Invalid("mean/variance sizes do not match C x D".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || means.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::Invalid("variances must be positive and parameters finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(GmmError::Invalid(format!("weights must be a simplex (sum {total})")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut gmm = Self { dim, weights, means, variances, log_norm: vec![], inv_var: vec![] };
        gmm.refresh_cache();
        Ok(gmm)
    }

    fn refresh_cache(&mut self) {
        let d = self.dim;
        self.inv_var = self.variances.iter().map(|v| 1.0 / v).collect();
        self.log_norm = (0..self.weights.len())
            .map(|c| {
                let log_det: f64 = self.variances[c * d..(c + 1) * d].iter().map(|v| v.ln()).sum();
                self.weights[c].ln() - 0.5 * (d as f64 * LOG_2PI + log_det)
            })
            .collect();
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.dim..(c + 1) * self.dim]
    }

    /// `ln w_c + ln N(x; μ_c, σ²_c)` for every component, written into `out`.
    fn joint_log_likelihoods(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (c, o) in out.iter_mut().enumerate() {
            let mu = &self.means[c * d..(c + 1) * d];
            let iv = &self.inv_var[c * d..(c + 1) * d];
            let mut q = 0.0;
            for k in 0..d {
                let z = x[k] - mu[k];
                q += z * z * iv[k];
            }
            *o = self.log_norm[c] - 0.5 * q;
        }
    }

    /// Normalizes joint log-likelihoods into posteriors in place and returns
    /// the frame log-likelihood.
    fn normalize_log(values: &mut [f64]) -> f64 {
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for v in values.iter_mut() {
            *v = (*v - lse).exp();
        }
        lse
    }

    fn check_dim(&self, got: usize) -> Result<(), GmmError> {
        if got != self.dim {
            return Err(GmmError::DimensionMismatch { expected: self.dim, got });
        }
        Ok(())
    }

    /// Component responsibilities of one frame, computed with log-sum-exp.
    pub fn posteriors(&self, frame: &[f64]) -> Result<Vec<f64>, GmmError> {
        self.check_dim(frame.len())?;
        let mut post = vec![0.0; self.n_components()];
        self.joint_log_likelihoods(frame, &mut post);
        Self::normalize_log(&mut post);
        Ok(post)
    }

    pub fn log_likelihood(&self, frame: &[f64]) -> Result<f64, GmmError> {
        self.check_dim(frame.len())?;
        let mut buf = vec![0.0; self.n_components()];
        self.joint_log_likelihoods(frame, &mut buf);
        Ok(Self::normalize_log(&mut buf))
    }

    /// Total log-likelihood of a set of feature matrices.
    pub fn total_log_likelihood(&self, features: &[FeatureMatrix]) -> Result<f64, GmmError> {
        let mut sum = NeumaierSum::default();
        let mut buf = vec![0.0; self.n_components()];
        for f in features {
            self.check_dim(f.cols())?;
            for x in f.iter_rows() {
                self.joint_log_likelihoods(x, &mut buf);
                sum.add(Self::normalize_log(&mut buf));
            }
        }
        Ok(sum.value())
    }
}

/// Compensated summation, so log-likelihood traces are not dominated by
/// rounding noise on large frame counts.
#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// Zeroth, first and second order sums for the M-step. First and second
/// order sums are taken relative to the current means.
#[derive(Debug, Clone)]
struct EmAccumulator {
    occ: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    log_like: NeumaierSum,
    frames: usize,
}

impl EmAccumulator {
    fn new(c: usize, d: usize) -> Self {
        Self { occ: vec![0.0; c], first: vec![0.0; c * d], second: vec![0.0; c * d], log_like: NeumaierSum::default(), frames: 0 }
    }

    fn add_utterance(&mut self, gmm: &DiagGmm, f: &FeatureMatrix, post: &mut [f64]) {
        let d = gmm.dim;
        for x in f.iter_rows() {
            gmm.joint_log_likelihoods(x, post);
            self.log_like.add(DiagGmm::normalize_log(post));
            self.frames += 1;
            for (c, &g) in post.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                self.occ[c] += g;
                let mu = &gmm.means[c * d..(c + 1) * d];
                let f1 = &mut self.first[c * d..(c + 1) * d];
                let f2 = &mut self.second[c * d..(c + 1) * d];
                for k in 0..d {
                    let z = x[k] - mu[k];
                    f1[k] += g * z;
                    f2[k] += g * z * z;
                }
            }
        }
    }

    fn merge(&mut self, other: &EmAccumulator) {
        for (a, b) in self.occ.iter_mut().zip(&other.occ) {
            *a += b;
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
        self.log_like.merge(other.log_like);
        self.frames += other.frames;
    }
}

fn e_step(gmm: &DiagGmm, features: &[FeatureMatrix]) -> EmAccumulator {
    let (c, d) = (gmm.n_components(), gmm.dim);
    let partials: Vec<EmAccumulator> = features
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = EmAccumulator::new(c, d);
            let mut post = vec![0.0; c];
            for f in chunk {
                acc.add_utterance(gmm, f, &mut post);
            }
            acc
        })
        .collect();
    let mut total = EmAccumulator::new(c, d);
    for p in &partials {
        total.merge(p);
    }
    total
}

fn m_step(gmm: &DiagGmm, acc: &EmAccumulator, floor: &[f64]) -> DiagGmm {
    let (c_n, d) = (gmm.n_components(), gmm.dim);
    let n = acc.frames as f64;
    let mut weights = Vec::with_capacity(c_n);
    let mut means = gmm.means.clone();
    let mut variances = gmm.variances.clone();
    for c in 0..c_n {
        let occ = acc.occ[c];
        weights.push(occ / n);
        if occ < MIN_OCCUPANCY {
            continue;
        }
        for k in 0..d {
            let shift = acc.first[c * d + k] / occ;
            means[c * d + k] = gmm.means[c * d + k] + shift;
            let var = acc.second[c * d + k] / occ - shift * shift;
            variances[c * d + k] = var.max(floor[k]);
        }
    }
    let mut next = DiagGmm { dim: d, weights, means, variances, log_norm: vec![], inv_var: vec![] };
    next.refresh_cache();
    next
}

/// Log-likelihood trajectory at one model size.
#[derive(Debug, Clone, PartialEq)]
pub struct EmLevel {
    pub components: usize,
    /// Total log-likelihood before each update and after the last one.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub levels: Vec<EmLevel>,
}

impl EmTrace {
    /// Largest decrease between consecutive iterations at any level.
    pub fn max_decrease(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.log_likelihood.windows(2).map(|w| w[0] - w[1]))
            .fold(0.0, f64::max)
    }
}

fn global_moments(features: &[FeatureMatrix], d: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let mut n = 0usize;
    let mut mean = vec![0.0; d];
    for f in features {
        for x in f.iter_rows() {
            for k in 0..d {
                mean[k] += x[k];
            }
            n += 1;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for f in features {
        for x in f.iter_rows() {
            for k in 0..d {
                var[k] += (x[k] - mean[k]).powi(2);
            }
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }
    (mean, var, n)
}

fn run_em(
    mut gmm: DiagGmm,
    features: &[FeatureMatrix],
    iters: usize,
    floor: &[f64],
    trace: &mut EmTrace,
) -> DiagGmm {
    let mut lls = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let acc = e_step(&gmm, features);
        lls.push(acc.log_like.value());
        gmm = m_step(&gmm, &acc, floor);
    }
    lls.push(e_step(&gmm, features).log_like.value());
    log::debug!("EM at C={}: {:?}", gmm.n_components(), lls);
    trace.levels.push(EmLevel { components: gmm.n_components(), log_likelihood: lls });
    gmm
}

/// Doubles the component count, moving each pair of children ±0.2σ apart.
fn split(gmm: &DiagGmm) -> DiagGmm {
    let d = gmm.dim;
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for c in 0..gmm.n_components() {
        for sign in [1.0, -1.0] {
            weights.push(gmm.weights[c] / 2.0);
            means.extend(gmm.mean(c).iter().zip(gmm.variance(c)).map(|(m, v)| m + sign * 0.2 * v.sqrt()));
            variances.extend_from_slice(gmm.variance(c));
        }
    }
    let mut next = DiagGmm { dim: d, weights, means, variances, log_norm: vec![], inv_var: vec![] };
    next.refresh_cache();
    next
}

fn kmeans_init(features: &[FeatureMatrix], cfg: &EmConfig, floor: &[f64]) -> DiagGmm {
    let d = features[0].cols();
    let frames: Vec<&[f64]> = features.iter().flat_map(|f| f.iter_rows()).collect();
    let k = cfg.n_components;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers: Vec<f64> = sample(&mut rng, frames.len(), k).into_iter().flat_map(|i| frames[i].to_vec()).collect();
    let mut assign = vec![0usize; frames.len()];
    for _ in 0..10 {
        for (i, x) in frames.iter().enumerate() {
            assign[i] = (0..k)
                .map(|c| (c, x.iter().zip(&centers[c * d..(c + 1) * d]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |p| p.0);
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, x) in frames.iter().enumerate() {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[assign[i] * d + j] += x[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    let mut counts = vec![0usize; k];
    let mut var = vec![0.0; k * d];
    for (i, x) in frames.iter().enumerate() {
        let c = assign[i];
        counts[c] += 1;
        for j in 0..d {
            var[c * d + j] += (x[j] - centers[c * d + j]).powi(2);
        }
    }
    for c in 0..k {
        for j in 0..d {
            let v = if counts[c] > 1 { var[c * d + j] / counts[c] as f64 } else { 0.0 };
            var[c * d + j] = v.max(floor[j]);
        }
    }
    // empty clusters still get a sliver of weight so every log weight is finite
    let total: f64 = counts.iter().map(|&n| n.max(1) as f64).sum();
    let weights = counts.iter().map(|&n| n.max(1) as f64 / total).collect();
    let mut gmm = DiagGmm { dim: d, weights, means: centers, variances: var, log_norm: vec![], inv_var: vec![] };
    gmm.refresh_cache();
    gmm
}

/// Trains a diagonal GMM by EM. With binary splitting the model starts as
/// the single-Gaussian ML fit and doubles until `n_components` is reached,
/// running `n_iters` EM iterations at every size.
pub fn train_ubm(features: &[FeatureMatrix], cfg: &EmConfig) -> Result<(DiagGmm, EmTrace), GmmError> {
    let c_target = cfg.n_components;
    if c_target == 0 {
        return Err(GmmError::Invalid("n_components must be positive".into()));
    }
    if cfg.init == GmmInit::BinarySplit && !c_target.is_power_of_two() {
        return Err(GmmError::Invalid(format!("binary-split init needs a power-of-two size, got {c_target}")));
    }
    let d = features.first().map_or(0, FeatureMatrix::cols);
    if let Some(bad) = features.iter().find(|f| f.cols() != d) {
        return Err(GmmError::DimensionMismatch { expected: d, got: bad.cols() });
    }
    let frames: usize = features.iter().map(FeatureMatrix::rows).sum();
    let needed = 10 * c_target;
    if frames < needed || d == 0 {
        return Err(GmmError::TooFewFrames { frames, needed, components: c_target });
    }
    if features.iter().any(|f| !f.is_finite()) {
        return Err(GmmError::NonFinite);
    }
    let (mean, var, _) = global_moments(features, d);
    let floor: Vec<f64> = var.iter().map(|v| (v * cfg.variance_floor).max(f64::MIN_POSITIVE)).collect();
    let mut trace = EmTrace::default();

    let mut gmm = match cfg.init {
        GmmInit::BinarySplit => {
            let variances: Vec<f64> = var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();
            let mut gmm = DiagGmm { dim: d, weights: vec![1.0], means: mean, variances, log_norm: vec![], inv_var: vec![] };
            gmm.refresh_cache();
            let ll = gmm.total_log_likelihood(features)?;
            trace.levels.push(EmLevel { components: 1, log_likelihood: vec![ll] });
            while gmm.n_components() < c_target {
                gmm = run_em(split(&gmm), features, cfg.n_iters, &floor, &mut trace);
            }
            gmm
        }
        GmmInit::Kmeans => run_em(kmeans_init(features, cfg, &floor), features, cfg.n_iters, &floor, &mut trace),
    };
    gmm.refresh_cache();
    Ok((gmm, trace))
}

/// Per-utterance sufficient statistics under a UBM.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// Occupancy `N_c` per component.
    pub zeroth: Vec<f64>,
    /// Centered first order sums, C x D row-major.
    pub first: Vec<f64>,
    pub n_frames: usize,
    pub dim: usize,
}

impl BaumWelchStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        Self { zeroth: vec![0.0; components], first: vec![0.0; components * dim], n_frames: 0, dim }
    }

    pub fn n_components(&self) -> usize {
        self.zeroth.len()
    }

    pub fn first_of(&self, c: usize) -> &[f64] {
        &self.first[c * self.dim..(c + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.zeroth.iter().chain(&self.first).all(|v| v.is_finite())
    }
}

/// Accumulates `N_c` and centered `F_c` for one utterance. Frames are
/// visited in a canonical (sorted) order, so the result does not depend on
/// frame order at all.
pub fn accumulate_stats(gmm: &DiagGmm, f: &FeatureMatrix) -> Result<BaumWelchStats, GmmError> {
    gmm.check_dim(f.cols())?;
    let (c_n, d) = (gmm.n_components(), gmm.dim);
    let mut order: Vec<usize> = (0..f.rows()).collect();
    order.sort_by(|&a, &b| {
        f.row(a).iter().zip(f.row(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut stats = BaumWelchStats::zeros(c_n, d);
    let mut post = vec![0.0; c_n];
    for t in order {
        let x = f.row(t);
        gmm.joint_log_likelihoods(x, &mut post);
        DiagGmm::normalize_log(&mut post);
        for (c, &g) in post.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            stats.zeroth[c] += g;
            let mu = gmm.mean(c);
            let dst = &mut stats.first[c * d..(c + 1) * d];
            for k in 0..d {
                dst[k] += g * (x[k] - mu[k]);
            }
        }
    }
    stats.n_frames = f.rows();
    Ok(stats)
}

/// Fieldwise sum of two statistics of the same shape.
pub fn merge_stats(a: &BaumWelchStats, b: &BaumWelchStats) -> Result<BaumWelchStats, GmmError> {
    if a.n_components() != b.n_components() || a.dim != b.dim {
        return Err(GmmError::ShapeMismatch(a.n_components(), a.dim, b.n_components(), b.dim));
    }
    Ok(BaumWelchStats {
        zeroth: a.zeroth.iter().zip(&b.zeroth).map(|(x, y)| x + y).collect(),
        first: a.first.iter().zip(&b.first).map(|(x, y)| x + y).collect(),
        n_frames: a.n_frames + b.n_frames,
        dim: a.dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn two_clusters(n: usize, seed: u64) -> Vec<FeatureMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n / 50)
            .map(|u| {
                let rows: Vec<Vec<f64>> = (0..50)
                    .map(|i| {
                        let c = if (u * 50 + i) % 2 == 0 { 5.0 } else { -5.0 };
                        (0..2).map(|_| c + rng.sample::<f64, _>(StandardNormal)).collect()
                    })
                    .collect();
                FeatureMatrix::from_rows(&rows, "toy")
            })
            .collect()
    }

    fn random_features(rows: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(rows, d, (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect(), "r")
    }

    fn toy_gmm() -> DiagGmm {
        DiagGmm::new(vec![0.3, 0.7], vec![0.0, 0.0, 1.0, -1.0], vec![1.0, 2.0, 0.5, 0.5], 2).unwrap()
    }

    #[test]
    fn single_component_is_the_ml_fit() {
        let data = vec![random_features(40, 3, 1), random_features(25, 3, 2)];
        let cfg = EmConfig { n_components: 1, n_iters: 1, ..Default::default() };
        let (gmm, _) = train_ubm(&data, &cfg).unwrap();
        let all: Vec<&[f64]> = data.iter().flat_map(|f| f.iter_rows()).collect();
        for k in 0..3 {
            let mean = all.iter().map(|x| x[k]).sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / all.len() as f64;
            assert!((gmm.mean(0)[k] - mean).abs() < 1e-10);
            assert!((gmm.variance(0)[k] - var).abs() < 1e-10);
        }
        assert_eq!(gmm.weights(), &[1.0]);
    }

    #[test]
    fn recovers_two_separated_clusters() {
        let data = two_clusters(2000, 3);
        let cfg = EmConfig { n_components: 2, n_iters: 10, ..Default::default() };
        let (gmm, trace) = train_ubm(&data, &cfg).unwrap();
        let mut centers: Vec<(f64, f64, f64)> = (0..2).map(|c| (gmm.mean(c)[0], gmm.mean(c)[1], gmm.weights()[c])).collect();
        centers.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((centers[0].0 + 5.0).abs() < 0.1 && (centers[0].1 + 5.0).abs() < 0.1);
        assert!((centers[1].0 - 5.0).abs() < 0.1 && (centers[1].1 - 5.0).abs() < 0.1);
        assert!(centers.iter().all(|c| (c.2 - 0.5).abs() < 0.05));
        assert!(trace.max_decrease() <= 1e-8);
    }

    #[test]
    fn kmeans_init_trains_too() {
        let data = two_clusters(1000, 4);
        let cfg = EmConfig { n_components: 3, n_iters: 5, init: GmmInit::Kmeans, seed: 1, ..Default::default() };
        let (gmm, trace) = train_ubm(&data, &cfg).unwrap();
        assert_eq!(gmm.n_components(), 3);
        assert!(trace.max_decrease() <= 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let few = vec![random_features(30, 2, 1)];
        let cfg = EmConfig { n_components: 4, ..Default::default() };
        assert_eq!(train_ubm(&few, &cfg).unwrap_err(), GmmError::TooFewFrames { frames: 30, needed: 40, components: 4 });
        let mut bad = random_features(100, 2, 1);
        bad.row_mut(3)[1] = f64::NAN;
        assert_eq!(train_ubm(&[bad], &cfg).unwrap_err(), GmmError::NonFinite);
        let cfg3 = EmConfig { n_components: 3, ..Default::default() };
        assert!(matches!(train_ubm(&[random_features(100, 2, 1)], &cfg3), Err(GmmError::Invalid(_))));
    }

    #[test]
    fn variance_floor_holds() {
        // a constant dimension would collapse without the floor
        let mut f = random_features(200, 2, 5);
        for t in 0..200 {
            f.row_mut(t)[1] = if t % 2 == 0 { 1.0 } else { 1.0 + 1e-9 };
        }
        let cfg = EmConfig { n_components: 4, n_iters: 3, ..Default::default() };
        let (gmm, _) = train_ubm(&[f.clone()], &cfg).unwrap();
        let (_, var, _) = global_moments(&[f], 2);
        assert!(gmm.variances().chunks(2).all(|v| v[1] >= var[1] * 1e-3));
    }

    #[test]
    fn posterior_edge_cases() {
        let one = DiagGmm::new(vec![1.0], vec![0.3, 0.1], vec![1.0, 1.0], 2).unwrap();
        assert_eq!(one.posteriors(&[5.0, -3.0]).unwrap(), vec![1.0]);

        let far = DiagGmm::new(vec![0.5, 0.5], vec![0.0, 10.0], vec![1.0, 1.0], 1).unwrap();
        assert!(far.posteriors(&[0.0]).unwrap()[0] > 1.0 - 1e-10);

        let same = DiagGmm::new(vec![0.25; 4], vec![1.0; 4], vec![2.0; 4], 1).unwrap();
        for p in same.posteriors(&[0.7]).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert!(matches!(toy_gmm().posteriors(&[1.0]), Err(GmmError::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn stats_occupancy_and_centering() {
        let gmm = toy_gmm();
        let f = random_features(37, 2, 6);
        let s = accumulate_stats(&gmm, &f).unwrap();
        assert!((s.zeroth.iter().sum::<f64>() - 37.0).abs() < 1e-6);
        assert_eq!(s.n_frames, 37);

        let dominant = DiagGmm::new(vec![1.0 - 1e-12, 1e-12], vec![2.0, -2.0, 50.0, 50.0], vec![0.1, 0.1, 0.1, 0.1], 2).unwrap();
        let at_mean = FeatureMatrix::from_rows(&vec![vec![2.0, -2.0]; 10], "m");
        let s = accumulate_stats(&dominant, &at_mean).unwrap();
        assert!(s.first.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn stats_are_additive_over_splits() {
        let gmm = toy_gmm();
        let whole = random_features(40, 2, 7);
        let parts: Vec<FeatureMatrix> = (0..4).map(|i| whole.select_rows(&(i * 10..(i + 1) * 10).collect::<Vec<_>>())).collect();
        let mut merged = BaumWelchStats::zeros(2, 2);
        for p in &parts {
            merged = merge_stats(&merged, &accumulate_stats(&gmm, p).unwrap()).unwrap();
        }
        let single = accumulate_stats(&gmm, &whole).unwrap();
        for (a, b) in merged.zeroth.iter().chain(&merged.first).zip(single.zeroth.iter().chain(&single.first)) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(merged.n_frames, 40);
        // concatenation of two utterances equals merge of their stats
        let cat = FeatureMatrix::concat(&[&parts[0], &parts[1]]);
        let m2 = merge_stats(&accumulate_stats(&gmm, &parts[0]).unwrap(), &accumulate_stats(&gmm, &parts[1]).unwrap()).unwrap();
        let c2 = accumulate_stats(&gmm, &cat).unwrap();
        for (a, b) in m2.first.iter().zip(&c2.first) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn merge_identity_commutativity_and_shape() {
        let gmm = toy_gmm();
        let a = accumulate_stats(&gmm, &random_features(12, 2, 8)).unwrap();
        let b = accumulate_stats(&gmm, &random_features(9, 2, 9)).unwrap();
        assert_eq!(merge_stats(&a, &BaumWelchStats::zeros(2, 2)).unwrap(), a);
        assert_eq!(merge_stats(&a, &b).unwrap(), merge_stats(&b, &a).unwrap());
        assert!(matches!(merge_stats(&a, &BaumWelchStats::zeros(3, 2)), Err(GmmError::ShapeMismatch(..))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn posteriors_sum_to_one(x in -20.0f64..20.0, y in -20.0f64..20.0) {
            let s: f64 = toy_gmm().posteriors(&[x, y]).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn stats_ignore_frame_order(seed in 0u64..500, rot in 1usize..20) {
            let gmm = toy_gmm();
            let f = random_features(20, 2, seed);
            let order: Vec<usize> = (0..20).map(|i| (i * 7 + rot) % 20).collect();
            let a = accumulate_stats(&gmm, &f).unwrap();
            let b = accumulate_stats(&gmm, &f.select_rows(&order)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
