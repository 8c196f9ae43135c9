//! Scoring backends shared by i-vectors and d-vectors: cosine similarity,
//! LDA projection and two-covariance PLDA with closed-form LLR scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tvspace::SpeakerVector;

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("zero vector cannot be normalized or scored")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{vectors} vectors but {labels} labels")]
    LabelCount { vectors: usize, labels: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {0} has a single vector")]
    SingletonClass(String),
    #[error("requested {requested} dimensions, at most {max} are available")]
    RankTooLarge { requested: usize, max: usize },
    #[error("within-class covariance is singular: {vectors} vectors in {classes} classes cannot span {dim} dimensions")]
    SingularWithin { vectors: usize, classes: usize, dim: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("scoring method {0} needs a trained model")]
    MissingModel(ScoringMethod),
}

/// Relative ridge added to scatter and covariance matrices before inversion.
pub const RIDGE: f64 = 1e-6;
/// Upper bound on the LDA output dimension.
pub const LDA_MAX_DIM: usize = 150;

fn ridge(m: &DMatrix<f64>) -> f64 {
    RIDGE * m.trace() / m.nrows() as f64
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_score(a: &SpeakerVector, b: &SpeakerVector) -> Result<f64, BackendError> {
    if a.dim() != b.dim() {
        return Err(BackendError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (norm(&a.values), norm(&b.values));
    if na == 0.0 || nb == 0.0 {
        return Err(BackendError::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn length_normalize(v: &SpeakerVector) -> Result<SpeakerVector, BackendError> {
    let n = norm(&v.values);
    if n == 0.0 || !n.is_finite() {
        return Err(BackendError::ZeroVector);
    }
    Ok(v.with_values(v.values.iter().map(|x| x / n).collect()))
}

/// Vectors grouped by label, labels and members in a canonical order so that
/// training does not depend on input order.
fn group<'a, L: Ord + fmt::Display>(
    vectors: &'a [SpeakerVector],
    labels: &'a [L],
) -> Result<(Vec<Vec<&'a [f64]>>, usize), BackendError> {
    if vectors.len() != labels.len() {
        return Err(BackendError::LabelCount { vectors: vectors.len(), labels: labels.len() });
    }
    let dim = vectors.first().map(|v| v.dim()).ok_or(BackendError::TooFewClasses(0))?;
    let mut classes: BTreeMap<&L, Vec<&[f64]>> = BTreeMap::new();
    for (v, l) in vectors.iter().zip(labels) {
        if v.dim() != dim {
            return Err(BackendError::DimensionMismatch { expected: dim, got: v.dim() });
        }
        classes.entry(l).or_default().push(&v.values);
    }
    if classes.len() < 2 {
        return Err(BackendError::TooFewClasses(classes.len()));
    }
    if let Some((l, _)) = classes.iter().find(|(_, m)| m.len() < 2) {
        return Err(BackendError::SingletonClass(l.to_string()));
    }
    let groups = classes
        .into_values()
        .map(|mut m| {
            m.sort_by(|a, b| {
                let first_difference = a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
                first_difference.unwrap_or(std::cmp::Ordering::Equal)
            });
            m
        })
        .collect();
    Ok((groups, dim))
}

fn mean_of(rows: &[&[f64]], dim: usize) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for r in rows {
        m += DVector::from_column_slice(r);
    }
    m / rows.len() as f64
}

/// Within-class and between-class scatter (both normalized by the vector
/// count), the global mean and the total count.
fn scatters(groups: &[Vec<&[f64]>], dim: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, usize) {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let means: Vec<DVector<f64>> = groups.iter().map(|g| mean_of(g, dim)).collect();
    let mut global = DVector::zeros(dim);
    for (g, m) in groups.iter().zip(&means) {
        global += m * g.len() as f64;
    }
    global /= n as f64;
    let mut sw = DMatrix::zeros(dim, dim);
    let mut sb = DMatrix::zeros(dim, dim);
    for (g, m) in groups.iter().zip(&means) {
        for r in g {
            let d = DVector::from_column_slice(r) - m;
            sw += &d * d.transpose();
        }
        let d = m - &global;
        sb += (&d * d.transpose()) * g.len() as f64;
    }
    (sw / n as f64, sb / n as f64, global, n)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    /// D x K, columns ordered by decreasing between/within ratio.
    pub projection: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl LdaTransform {
    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply(&self, v: &SpeakerVector) -> Result<SpeakerVector, BackendError> {
        if v.dim() != self.input_dim() {
            return Err(BackendError::DimensionMismatch { expected: self.input_dim(), got: v.dim() });
        }
        let centered = DVector::from_column_slice(&v.values) - &self.mean;
        Ok(v.with_values((self.projection.transpose() * centered).as_slice().to_vec()))
    }
}

/// Largest LDA dimension the data supports, capped at [`LDA_MAX_DIM`].
pub fn lda_dim(dim: usize, n_classes: usize) -> usize {
    LDA_MAX_DIM.min(dim).min(n_classes.saturating_sub(1))
}

/// Top-`k` generalized eigenvectors of (between, within) scatter.
pub fn train_lda<L: Ord + fmt::Display>(
    vectors: &[SpeakerVector],
    labels: &[L],
    k: usize,
) -> Result<LdaTransform, BackendError> {
    let (groups, dim) = group(vectors, labels)?;
    let max = dim.min(groups.len() - 1);
    if k == 0 || k > max {
        return Err(BackendError::RankTooLarge { requested: k, max });
    }
    let (mut sw, sb, mean, _) = scatters(&groups, dim);
    let r = ridge(&sw).max(f64::MIN_POSITIVE);
    for i in 0..dim {
        sw[(i, i)] += r;
    }
    let ew = SymmetricEigen::new(sw);
    if ew.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(BackendError::NotPositiveDefinite);
    }
    let inv_sqrt = DMatrix::from_diagonal(&ew.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let whiten = &ew.eigenvectors * inv_sqrt;
    let mut sbw = whiten.transpose() * &sb * &whiten;
    symmetrize(&mut sbw);
    let eb = SymmetricEigen::new(sbw);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eb.eigenvalues[b].total_cmp(&eb.eigenvalues[a]).then(a.cmp(&b)));
    let mut projection = DMatrix::zeros(dim, k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let mut col = &whiten * eb.eigenvectors.column(i);
        let pivot = col.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        projection.set_column(j, &col);
    }
    Ok(LdaTransform { projection, mean })
}

/// Two-covariance PLDA: class identity `y ~ N(mu, between)`, observation
/// `x ~ N(y, within)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
}

fn chol(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, BackendError> {
    Cholesky::new(m.clone()).ok_or(BackendError::NotPositiveDefinite)
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

impl PldaModel {
    pub fn new(mu: DVector<f64>, between: DMatrix<f64>, within: DMatrix<f64>) -> Result<Self, BackendError> {
        let d = mu.len();
        for m in [&between, &within] {
            if m.shape() != (d, d) {
                return Err(BackendError::DimensionMismatch { expected: d, got: m.nrows() });
            }
        }
        chol(&within)?;
        if SymmetricEigen::new(between.clone()).eigenvalues.iter().any(|&l| l < -1e-12 * between.trace().abs().max(1.0)) {
            return Err(BackendError::NotPositiveDefinite);
        }
        Ok(Self { mu, between, within })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Marginal log-likelihood of one class's vectors with the class
    /// identity integrated out.
    fn class_log_likelihood(&self, rows: &[&[f64]], w_chol: &Cholesky<f64, Dyn>) -> Result<f64, BackendError> {
        let d = self.dim();
        let n = rows.len() as f64;
        let xbar = mean_of(rows, d);
        let mut scatter = 0.0;
        for r in rows {
            let e = DVector::from_column_slice(r) - &xbar;
            scatter += e.dot(&w_chol.solve(&e));
        }
        let mut total = &self.within + &self.between * n;
        symmetrize(&mut total);
        let t_chol = chol(&total)?;
        let e = &xbar - &self.mu;
        let quad = n * e.dot(&t_chol.solve(&e));
        Ok(-0.5 * n * d as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * (n - 1.0) * log_det(w_chol)
            - 0.5 * log_det(&t_chol)
            - 0.5 * scatter
            - 0.5 * quad)
    }

    /// Total marginal log-likelihood of labelled data.
    pub fn log_likelihood<L: Ord + fmt::Display>(
        &self,
        vectors: &[SpeakerVector],
        labels: &[L],
    ) -> Result<f64, BackendError> {
        let (groups, dim) = group(vectors, labels)?;
        if dim != self.dim() {
            return Err(BackendError::DimensionMismatch { expected: self.dim(), got: dim });
        }
        let w_chol = chol(&self.within)?;
        groups.iter().map(|g| self.class_log_likelihood(g, &w_chol)).sum()
    }

    fn scoring_terms(&self) -> Result<ScoringTerms, BackendError> {
        let mut total = &self.between + &self.within;
        symmetrize(&mut total);
        let t_chol = chol(&total)?;
        let t_inv = t_chol.inverse();
        let mut schur = &total - &self.between * &t_inv * &self.between;
        symmetrize(&mut schur);
        let s_chol = chol(&schur)?;
        let s_inv = s_chol.inverse();
        let mut quad = &t_inv - &s_inv;
        symmetrize(&mut quad);
        let mut cross = &t_inv * &self.between * &s_inv;
        symmetrize(&mut cross);
        Ok(ScoringTerms { quad, cross, constant: 0.5 * log_det(&t_chol) - 0.5 * log_det(&s_chol) })
    }
}

/// `llr = constant + ½(aᵀQa + bᵀQb) + aᵀPb` on mean-removed vectors.
#[derive(Debug, Clone)]
struct ScoringTerms {
    quad: DMatrix<f64>,
    cross: DMatrix<f64>,
    constant: f64,
}

impl ScoringTerms {
    fn score(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let qa = &self.quad * a;
        let qb = &self.quad * b;
        let pb = &self.cross * b;
        let pa = &self.cross * a;
        // Both orders of the cross term are averaged so the score is exactly
        // symmetric up to the final additions.
        self.constant + 0.5 * (a.dot(&qa) + b.dot(&qb)) + 0.5 * (a.dot(&pb) + b.dot(&pa))
    }
}

/// A PLDA model with its scoring matrices precomputed.
#[derive(Debug, Clone)]
pub struct PldaScorer {
    model: PldaModel,
    terms: ScoringTerms,
}

impl PldaScorer {
    pub fn new(model: PldaModel) -> Result<Self, BackendError> {
        let terms = model.scoring_terms()?;
        Ok(Self { model, terms })
    }

    pub fn model(&self) -> &PldaModel {
        &self.model
    }

    pub fn score(&self, enroll: &SpeakerVector, test: &SpeakerVector) -> Result<f64, BackendError> {
        let d = self.model.dim();
        for v in [enroll, test] {
            if v.dim() != d {
                return Err(BackendError::DimensionMismatch { expected: d, got: v.dim() });
            }
        }
        let a = DVector::from_column_slice(&enroll.values) - &self.model.mu;
        let b = DVector::from_column_slice(&test.values) - &self.model.mu;
        Ok(self.terms.score(&a, &b))
    }
}

/// log p(a, b | same class) - log p(a, b | different classes).
pub fn plda_llr_score(model: &PldaModel, enroll: &SpeakerVector, test: &SpeakerVector) -> Result<f64, BackendError> {
    PldaScorer::new(model.clone())?.score(enroll, test)
}

/// EM for the two-covariance model. Returns the model and the marginal
/// log-likelihood before the first and after every iteration.
pub fn train_plda<L: Ord + fmt::Display>(
    vectors: &[SpeakerVector],
    labels: &[L],
    n_iters: usize,
) -> Result<(PldaModel, Vec<f64>), BackendError> {
    let (groups, dim) = group(vectors, labels)?;
    let (sw, sb, mu, n) = scatters(&groups, dim);
    if n - groups.len() < dim {
        return Err(BackendError::SingularWithin { vectors: n, classes: groups.len(), dim });
    }
    let r = ridge(&sw);
    let eye = DMatrix::<f64>::identity(dim, dim);
    let mut model = PldaModel { mu, between: sb + &eye * r, within: sw + &eye * r };
    let mut second = DMatrix::zeros(dim, dim);
    for g in &groups {
        for x in g {
            let v = DVector::from_column_slice(x);
            second += &v * v.transpose();
        }
    }
    let sums: Vec<DVector<f64>> = groups.iter().map(|g| mean_of(g, dim) * g.len() as f64).collect();
    let objective = |m: &PldaModel| -> Result<f64, BackendError> {
        let w_chol = chol(&m.within)?;
        groups.iter().map(|g| m.class_log_likelihood(g, &w_chol)).sum()
    };
    let mut trace = vec![objective(&model)?];
    let n_classes = groups.len() as f64;
    for _ in 0..n_iters {
        let b_inv = chol(&model.between)?.inverse();
        let w_inv = chol(&model.within)?.inverse();
        let b_inv_mu = &b_inv * &model.mu;
        let mut mean_acc = DVector::zeros(dim);
        let mut y2_acc = DMatrix::zeros(dim, dim);
        let mut within_acc = second.clone();
        for (g, s) in groups.iter().zip(&sums) {
            let ng = g.len() as f64;
            let mut precision = &b_inv + &w_inv * ng;
            symmetrize(&mut precision);
            let pc = chol(&precision)?;
            let cov = pc.inverse();
            let m = pc.solve(&(&b_inv_mu + &w_inv * s));
            let mm = &m * m.transpose();
            mean_acc += &m;
            y2_acc += &cov + &mm;
            within_acc -= s * m.transpose() + &m * s.transpose();
            within_acc += (&cov + &mm) * ng;
        }
        let mu = mean_acc / n_classes;
        let mut between = y2_acc / n_classes - &mu * mu.transpose();
        let mut within = within_acc / n as f64;
        symmetrize(&mut between);
        symmetrize(&mut within);
        model = PldaModel { mu, between, within };
        trace.push(objective(&model)?);
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMethod {
    Cosine,
    LdaCosine,
    Plda,
}

impl ScoringMethod {
    pub const ALL: [ScoringMethod; 3] = [ScoringMethod::Cosine, ScoringMethod::LdaCosine, ScoringMethod::Plda];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMethod::Cosine => "cosine",
            ScoringMethod::LdaCosine => "lda-cosine",
            ScoringMethod::Plda => "plda",
        }
    }
}

impl fmt::Display for ScoringMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown scoring method {s:?}"))
    }
}

/// A ready-to-use scoring backend. Vectors are length-normalized first; the
/// LDA projection, when present, is applied after that and before PLDA.
#[derive(Debug, Clone)]
pub struct Scorer {
    method: ScoringMethod,
    lda: Option<LdaTransform>,
    plda: Option<PldaScorer>,
}

impl Scorer {
    pub fn new(method: ScoringMethod, lda: Option<LdaTransform>, plda: Option<PldaModel>) -> Result<Self, BackendError> {
        match method {
            ScoringMethod::LdaCosine if lda.is_none() => return Err(BackendError::MissingModel(method)),
            ScoringMethod::Plda if plda.is_none() => return Err(BackendError::MissingModel(method)),
            _ => {}
        }
        let lda = if method == ScoringMethod::Cosine { None } else { lda };
        let plda = if method == ScoringMethod::Plda { plda.map(PldaScorer::new).transpose()? } else { None };
        Ok(Self { method, lda, plda })
    }

    pub fn method(&self) -> ScoringMethod {
        self.method
    }

    /// The representation the backend actually compares.
    pub fn prepare(&self, v: &SpeakerVector) -> Result<SpeakerVector, BackendError> {
        let v = length_normalize(v)?;
        match &self.lda {
            Some(lda) => lda.apply(&v),
            None => Ok(v),
        }
    }

    /// Scores two vectors already passed through [`Scorer::prepare`].
    pub fn score_prepared(&self, a: &SpeakerVector, b: &SpeakerVector) -> Result<f64, BackendError> {
        match &self.plda {
            Some(p) => p.score(a, b),
            None => cosine_score(a, b),
        }
    }

    pub fn score(&self, a: &SpeakerVector, b: &SpeakerVector) -> Result<f64, BackendError> {
        self.score_prepared(&self.prepare(a)?, &self.prepare(b)?)
    }
}
