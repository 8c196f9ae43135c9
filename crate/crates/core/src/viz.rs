//! Exact t-SNE and plot-data export for looking at frame-level features of
//! normal versus disguised speech.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::FeatureMatrix;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("t-SNE needs at least 5 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} is infeasible for {n} points (must be below n/3)")]
    Perplexity { perplexity: f64, n: usize },
    #[error("bandwidth search failed for point {point}: entropy {entropy} vs target {target}")]
    Bandwidth { point: usize, entropy: f64, target: f64 },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("{points} points but {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl fmt::Display for TsneConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t-SNE perplexity={} iterations={} learning_rate={} early_exaggeration={}x{} momentum={}->{} seed={}",
            self.perplexity,
            self.iterations,
            self.learning_rate,
            self.early_exaggeration,
            self.exaggeration_iters,
            self.initial_momentum,
            self.final_momentum,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// N x 2 coordinates in input order.
    pub embedding: Vec<[f64; 2]>,
    /// Entropy (nats) of each point's conditional affinity row.
    pub entropies: Vec<f64>,
    pub target_entropy: f64,
    /// KL(P || Q) after each iteration, against unexaggerated P.
    pub kl: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-7;

fn squared_distances(x: &FeatureMatrix) -> Vec<f64> {
    let n = x.rows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect()
        })
        .collect();
    rows.concat()
}

/// Conditional affinities of one point with precision `beta`, and their
/// entropy. `d` excludes the point itself.
fn row_affinities(d: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|&v| (-(v - d_min) * beta).exp()).collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / z).collect();
    let mean_d: f64 = p.iter().zip(d).map(|(p, v)| p * (v - d_min)).sum();
    (p, z.ln() + beta * mean_d)
}

/// Bisection on the Gaussian precision until the row entropy is within
/// tolerance of `target`.
fn bandwidth(point: usize, d: &[f64], target: f64) -> Result<(Vec<f64>, f64), VizError> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best = row_affinities(d, beta);
    for _ in 0..200 {
        let diff = best.1 - target;
        if diff.abs() < ENTROPY_TOL {
            return Ok(best);
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        best = row_affinities(d, beta);
    }
    if (best.1 - target).abs() < ENTROPY_TOL {
        return Ok(best);
    }
    Err(VizError::Bandwidth { point, entropy: best.1, target })
}

/// Symmetric joint affinities (row-major N x N, zero diagonal) and the
/// entropy reached for every point.
pub fn joint_affinities(x: &FeatureMatrix, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>), VizError> {
    let n = x.rows();
    if n < 5 {
        return Err(VizError::TooFewPoints(n));
    }
    if !x.is_finite() {
        return Err(VizError::NonFinite);
    }
    if !(perplexity > 0.0 && perplexity < n as f64 / 3.0) {
        return Err(VizError::Perplexity { perplexity, n });
    }
    let dist = squared_distances(x);
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
            bandwidth(i, &d, target)
        })
        .collect::<Result<_, _>>()?;
    let mut cond = vec![0.0; n * n];
    for (i, (p, _)) in rows.iter().enumerate() {
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = p[k];
        }
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok((joint, rows.into_iter().map(|r| r.1).collect()))
}

const P_FLOOR: f64 = 1e-12;

/// Seeded Gaussian random projection of each row relative to the first,
/// rescaled to a standard deviation of 1e-4. Identical rows start (and so
/// stay) at identical positions, and only row differences enter.
fn initial_layout(x: &FeatureMatrix, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let proj: Vec<[f64; 2]> = (0..x.cols()).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let origin = x.row(0);
    let mut y: Vec<[f64; 2]> = x
        .iter_rows()
        .map(|r| {
            let mut p = [0.0; 2];
            for ((v, o), w) in r.iter().zip(origin).zip(&proj) {
                p[0] += (v - o) * w[0];
                p[1] += (v - o) * w[1];
            }
            p
        })
        .collect();
    let n = y.len() as f64;
    let mean = [y.iter().map(|p| p[0]).sum::<f64>() / n, y.iter().map(|p| p[1]).sum::<f64>() / n];
    let var = y.iter().map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2)).sum::<f64>() / (2.0 * n);
    if var > 0.0 {
        let scale = 1e-4 / var.sqrt();
        y.iter_mut().for_each(|p| *p = [(p[0] - mean[0]) * scale, (p[1] - mean[1]) * scale]);
    }
    y
}

/// Exact O(N^2) t-SNE to two dimensions.
pub fn tsne(x: &FeatureMatrix, cfg: &TsneConfig) -> Result<TsneResult, VizError> {
    let n = x.rows();
    let (p, entropies) = joint_affinities(x, cfg.perplexity)?;
    let p: Vec<f64> = p.iter().enumerate().map(|(k, &v)| if k / n == k % n { 0.0 } else { v.max(P_FLOOR) }).collect();
    let mut y = initial_layout(x, cfg.seed);
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };
        // Student-t kernel rows and their sums, reduced in row order.
        let kernel: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let dx = y[i][0] - y[j][0];
                            let dy = y[i][1] - y[j][1];
                            1.0 / (1.0 + dx * dx + dy * dy)
                        }
                    })
                    .collect()
            })
            .collect();
        let z: f64 = kernel.iter().map(|r| r.iter().sum::<f64>()).sum();
        let grads: Vec<([f64; 2], f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                let mut kl_row = 0.0;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let k = kernel[i][j];
                    let q = (k / z).max(P_FLOOR);
                    let pij = p[i * n + j];
                    let m = 4.0 * (exaggeration * pij - q) * k;
                    g[0] += m * (y[i][0] - y[j][0]);
                    g[1] += m * (y[i][1] - y[j][1]);
                    kl_row += pij * (pij / q).ln();
                }
                (g, kl_row)
            })
            .collect();
        kl.push(grads.iter().map(|g| g.1).sum());
        for i in 0..n {
            for d in 0..2 {
                let g = grads[i].0[d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        for d in 0..2 {
            let mean = y.iter().map(|p| p[d]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|p| p[d] -= mean);
        }
    }
    Ok(TsneResult { embedding: y, entropies, target_entropy: cfg.perplexity.ln(), kl })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Normal,
    Disguised,
}

impl Style {
    pub fn as_str(self) -> &'static str {
        match self {
            Style::Normal => "normal",
            Style::Disguised => "disguised",
        }
    }

    /// Plot shade: normal speech dark, disguised light.
    pub fn shade(self) -> &'static str {
        match self {
            Style::Normal => "dark",
            Style::Disguised => "light",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Style::Normal),
            "disguised" => Ok(Style::Disguised),
            _ => Err(format!("unknown style {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub spk_id: String,
    pub style: Style,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingPlot {
    /// Points in input order.
    pub points: Vec<PlotPoint>,
    /// Free-form metadata written as `#` lines.
    pub metadata: Vec<String>,
}

impl EmbeddingPlot {
    /// Point indices per (speaker, style), in input order.
    pub fn groups(&self) -> BTreeMap<(String, Style), Vec<usize>> {
        let mut map: BTreeMap<(String, Style), Vec<usize>> = BTreeMap::new();
        for (i, p) in self.points.iter().enumerate() {
            map.entry((p.spk_id.clone(), p.style)).or_default().push(i);
        }
        map
    }

    /// One `spk_id<TAB>style<TAB>x<TAB>y` line per point, grouped by
    /// speaker then style.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.metadata {
            s.push_str(&format!("# {m}\n"));
        }
        s.push_str("# spk_id\tstyle\tx\ty\n");
        for idx in self.groups().values() {
            for &i in idx {
                let p = &self.points[i];
                s.push_str(&format!("{}\t{}\t{}\t{}\n", p.spk_id, p.style, p.x, p.y));
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), VizError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// One `<spk_id>.tsv` per speaker with `style<TAB>shade<TAB>x<TAB>y` lines.
    pub fn save_per_speaker(&self, dir: &Path) -> Result<Vec<String>, VizError> {
        fs::create_dir_all(dir)?;
        let mut files: BTreeMap<&str, Vec<&PlotPoint>> = BTreeMap::new();
        for idx in self.groups().values() {
            for &i in idx {
                files.entry(&self.points[i].spk_id).or_default().push(&self.points[i]);
            }
        }
        let mut written = Vec::new();
        for (spk, pts) in files {
            let name = format!("{spk}.tsv");
            let mut f = io::BufWriter::new(fs::File::create(dir.join(&name))?);
            for m in &self.metadata {
                writeln!(f, "# {m}")?;
            }
            writeln!(f, "# style\tshade\tx\ty")?;
            for p in pts {
                writeln!(f, "{}\t{}\t{}\t{}", p.style, p.style.shade(), p.x, p.y)?;
            }
            f.flush()?;
            written.push(name);
        }
        Ok(written)
    }

    pub fn parse(text: &str) -> Result<Self, VizError> {
        let mut plot = EmbeddingPlot::default();
        for (i, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix("# ") {
                if m != "spk_id\tstyle\tx\ty" {
                    plot.metadata.push(m.to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| VizError::Parse { line: i + 1, reason };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            plot.points.push(PlotPoint {
                spk_id: f[0].to_string(),
                style: f[1].parse().map_err(err)?,
                x: f[2].parse().map_err(|_| err("bad x".into()))?,
                y: f[3].parse().map_err(|_| err("bad y".into()))?,
            });
        }
        Ok(plot)
    }
}

/// Pairs projected coordinates with their (speaker, style) labels.
pub fn export_plot_data(
    proj: &[[f64; 2]],
    labels: &[(String, Style)],
    metadata: Vec<String>,
) -> Result<EmbeddingPlot, VizError> {
    if proj.len() != labels.len() {
        return Err(VizError::LengthMismatch { points: proj.len(), labels: labels.len() });
    }
    if proj.iter().flatten().any(|v| !v.is_finite()) {
        return Err(VizError::NonFinite);
    }
    let points = proj
        .iter()
        .zip(labels)
        .map(|(p, (spk, style))| PlotPoint { spk_id: spk.clone(), style: *style, x: p[0], y: p[1] })
        .collect();
    Ok(EmbeddingPlot { points, metadata })
}

/// At most `max_per_group` seeded row picks from each group, kept in their
/// original order.
pub fn subsample_rows(group_sizes: &[usize], max_per_group: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    group_sizes
        .iter()
        .map(|&n| {
            if n <= max_per_group {
                (0..n).collect()
            } else {
                let mut pick = sample(&mut rng, n, max_per_group).into_vec();
                pick.sort_unstable();
                pick
            }
        })
        .collect()
}
