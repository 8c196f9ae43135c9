//! Total-variability model: T-matrix training by EM and i-vector extraction.
//!
//! With centered statistics the i-vector is the posterior mean
//! `w = L⁻¹ Tᵀ Σ⁻¹ F` with precision `L = I + Σ_c N_c T_cᵀ Σ_c⁻¹ T_c`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{BaumWelchStats, DiagGmm};

const CHUNK: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum TvError {
    #[error("i-vector dimension {rank} exceeds supervector dimension {supervector}")]
    RankTooLarge { rank: usize, supervector: usize },
    #[error("i-vector dimension must be at least 1")]
    ZeroRank,
    #[error("statistics shape ({0} x {1}) does not match model ({2} x {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("statistics contain non-finite values")]
    NonFinite,
    #[error("posterior precision is not positive definite")]
    NotPositiveDefinite,
    #[error("need at least {needed} utterances to train, got {got}")]
    TooFewUtterances { needed: usize, got: usize },
    #[error("M-step normal equations singular for component {0}")]
    SingularMStep(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    #[serde(rename = "ivector")]
    IVector,
    #[serde(rename = "dvector")]
    DVector,
}

impl fmt::Display for VectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorKind::IVector => "ivector",
            VectorKind::DVector => "dvector",
        })
    }
}

impl FromStr for VectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ivector" => Ok(VectorKind::IVector),
            "dvector" => Ok(VectorKind::DVector),
            other => Err(format!("unknown vector kind `{other}`")),
        }
    }
}

/// Fixed-length utterance representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVector {
    pub values: Vec<f64>,
    pub kind: VectorKind,
    pub utt_id: String,
}

impl SpeakerVector {
    pub fn new(utt_id: impl Into<String>, kind: VectorKind, values: Vec<f64>) -> Self {
        Self { values, kind, utt_id: utt_id.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, kind: self.kind, utt_id: self.utt_id.clone() }
    }
}

/// Text vector file: `utt_id<TAB>kind<TAB>v1 v2 ...`, shortest round-trip
/// decimal formatting.
pub fn write_vectors(path: &Path, vectors: &[SpeakerVector]) -> std::io::Result<()> {
    let mut out = String::new();
    for v in vectors {
        let vals: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", v.utt_id, v.kind, vals.join(" ")));
    }
    fs::write(path, out)
}

pub fn read_vectors(path: &Path) -> std::io::Result<Vec<SpeakerVector>> {
    let bad = |line: usize, m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {m}"));
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(kind), Some(vals)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(i + 1, "expected utt_id, kind and values".into()));
        };
        let kind = kind.parse().map_err(|e| bad(i + 1, e))?;
        let values = vals
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| bad(i + 1, e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SpeakerVector::new(id, kind, values));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariabilityModel {
    t: DMatrix<f64>,
    ubm: DiagGmm,
    // per component: T_cᵀ Σ_c⁻¹ (R x D) and T_cᵀ Σ_c⁻¹ T_c (R x R)
    t_sinv: Vec<DMatrix<f64>>,
    t_sinv_t: Vec<DMatrix<f64>>,
}

/// Posterior of the latent factor for one utterance.
struct FactorPosterior {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    linear: DVector<f64>,
}

impl FactorPosterior {
    /// `½ bᵀ L⁻¹ b − ½ ln|L|`: the T-dependent part of the utterance
    /// log-likelihood.
    fn objective(&self) -> f64 {
        let log_det: f64 = 2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        0.5 * self.linear.dot(&self.mean) - 0.5 * log_det
    }
}

impl TotalVariabilityModel {
    pub fn new(ubm: DiagGmm, t: DMatrix<f64>) -> Result<Self, TvError> {
        let sv = ubm.n_components() * ubm.dim();
        if t.nrows() != sv {
            return Err(TvError::ShapeMismatch(t.nrows(), t.ncols(), sv, t.ncols()));
        }
        if t.ncols() == 0 {
            return Err(TvError::ZeroRank);
        }
        if t.ncols() > sv {
            return Err(TvError::RankTooLarge { rank: t.ncols(), supervector: sv });
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(TvError::NonFinite);
        }
        let mut model = Self { t, ubm, t_sinv: vec![], t_sinv_t: vec![] };
        model.refresh_cache();
        Ok(model)
    }

    fn refresh_cache(&mut self) {
        let d = self.ubm.dim();
        let r = self.rank();
        self.t_sinv.clear();
        self.t_sinv_t.clear();
        for c in 0..self.ubm.n_components() {
            let block = self.t.rows(c * d, d);
            let var = self.ubm.variance(c);
            let scaled = DMatrix::from_fn(r, d, |i, k| block[(k, i)] / var[k]);
            self.t_sinv_t.push(&scaled * block);
            self.t_sinv.push(scaled);
        }
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn ubm(&self) -> &DiagGmm {
        &self.ubm
    }

    fn check_stats(&self, stats: &BaumWelchStats) -> Result<(), TvError> {
        let (c, d) = (self.ubm.n_components(), self.ubm.dim());
        if stats.n_components() != c || stats.dim != d {
            return Err(TvError::ShapeMismatch(stats.n_components(), stats.dim, c, d));
        }
        if !stats.is_finite() {
            return Err(TvError::NonFinite);
        }
        Ok(())
    }

    fn posterior(&self, stats: &BaumWelchStats) -> Result<FactorPosterior, TvError> {
        self.check_stats(stats)?;
        let r = self.rank();
        let mut precision = DMatrix::<f64>::identity(r, r);
        let mut linear = DVector::<f64>::zeros(r);
        for c in 0..stats.n_components() {
            let n = stats.zeroth[c];
            if n != 0.0 {
                precision += &self.t_sinv_t[c] * n;
            }
            let f = DVector::from_column_slice(stats.first_of(c));
            linear.gemv(1.0, &self.t_sinv[c], &f, 1.0);
        }
        // symmetrize away rounding before factorizing
        let precision = (&precision + precision.transpose()) * 0.5;
        let chol = Cholesky::new(precision).ok_or(TvError::NotPositiveDefinite)?;
        let mean = chol.solve(&linear);
        Ok(FactorPosterior { mean, chol, linear })
    }
}

/// Random T with entries `N(0, 1) · 0.1 · mean(σ)`.
pub fn init_tmatrix(ubm: &DiagGmm, rank: usize, seed: u64) -> Result<TotalVariabilityModel, TvError> {
    let sv = ubm.n_components() * ubm.dim();
    if rank == 0 {
        return Err(TvError::ZeroRank);
    }
    if rank > sv {
        return Err(TvError::RankTooLarge { rank, supervector: sv });
    }
    let mean_sigma = ubm.variances().iter().map(|v| v.sqrt()).sum::<f64>() / sv as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..sv * rank)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 0.1 * mean_sigma
        })
        .collect();
    TotalVariabilityModel::new(ubm.clone(), DMatrix::from_row_slice(sv, rank, &values))
}

/// Posterior mean of the total-variability factor.
pub fn extract_ivector(
    model: &TotalVariabilityModel,
    stats: &BaumWelchStats,
    utt_id: &str,
) -> Result<SpeakerVector, TvError> {
    let post = model.posterior(stats)?;
    Ok(SpeakerVector::new(utt_id, VectorKind::IVector, post.mean.iter().copied().collect()))
}

struct TAccumulator {
    /// Σ_i N_ic (L_i⁻¹ + w_i w_iᵀ) per component.
    a: Vec<DMatrix<f64>>,
    occupancy: Vec<f64>,
    /// Σ_i F_i w_iᵀ, supervector x R.
    c: DMatrix<f64>,
    objective: f64,
}

impl TAccumulator {
    fn new(components: usize, dim: usize, rank: usize) -> Self {
        Self {
            a: vec![DMatrix::zeros(rank, rank); components],
            occupancy: vec![0.0; components],
            c: DMatrix::zeros(components * dim, rank),
            objective: 0.0,
        }
    }

    fn merge(&mut self, other: &TAccumulator) {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += y;
        }
        for (x, y) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *x += y;
        }
        self.c += &other.c;
        self.objective += other.objective;
    }
}

fn accumulate_t(model: &TotalVariabilityModel, stats_list: &[BaumWelchStats]) -> Result<TAccumulator, TvError> {
    let (cn, d, r) = (model.ubm.n_components(), model.ubm.dim(), model.rank());
    let partials = stats_list
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<TAccumulator, TvError> {
            let mut acc = TAccumulator::new(cn, d, r);
            for stats in chunk {
                let post = model.posterior(stats)?;
                acc.objective += post.objective();
                let second = post.chol.inverse() + &post.mean * post.mean.transpose();
                for c in 0..cn {
                    let n = stats.zeroth[c];
                    if n != 0.0 {
                        acc.a[c] += &second * n;
                        acc.occupancy[c] += n;
                    }
                    let f = DVector::from_column_slice(stats.first_of(c));
                    let mut block = acc.c.rows_mut(c * d, d);
                    block.ger(1.0, &f, &post.mean, 1.0);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = TAccumulator::new(cn, d, r);
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}

/// Objective of the current model over the training statistics.
pub fn tmatrix_objective(model: &TotalVariabilityModel, stats_list: &[BaumWelchStats]) -> Result<f64, TvError> {
    let mut total = 0.0;
    for s in stats_list {
        total += model.posterior(s)?.objective();
    }
    Ok(total)
}

/// EM training of T. Returns the trained model and the objective evaluated
/// before each iteration and after the last.
pub fn train_tmatrix(
    model: &TotalVariabilityModel,
    stats_list: &[BaumWelchStats],
    n_iters: usize,
) -> Result<(TotalVariabilityModel, Vec<f64>), TvError> {
    let r = model.rank();
    if stats_list.len() < r {
        return Err(TvError::TooFewUtterances { needed: r, got: stats_list.len() });
    }
    let d = model.ubm.dim();
    let mut current = model.clone();
    let mut objectives = Vec::with_capacity(n_iters + 1);
    for _ in 0..n_iters {
        let acc = accumulate_t(&current, stats_list)?;
        objectives.push(acc.objective);
        let mut t = current.t.clone();
        for c in 0..current.ubm.n_components() {
            if acc.occupancy[c] < 1e-10 {
                continue;
            }
            let a = (&acc.a[c] + acc.a[c].transpose()) * 0.5;
            let chol = Cholesky::new(a).ok_or(TvError::SingularMStep(c))?;
            // T_c A_c = C_c  =>  A_c T_cᵀ = C_cᵀ
            let rhs = acc.c.rows(c * d, d).transpose();
            let solved = chol.solve(&rhs);
            t.rows_mut(c * d, d).copy_from(&solved.transpose());
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(TvError::NonFinite);
        }
        current.t = t;
        current.refresh_cache();
    }
    objectives.push(accumulate_t(&current, stats_list)?.objective);
    log::debug!("T-matrix objectives: {objectives:?}");
    Ok((current, objectives))
}
