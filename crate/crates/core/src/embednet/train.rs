use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::net::{FrameNet, Trace};
use super::NetError;
use crate::dsp::FeatureMatrix;

/// One training utterance: spliced feature rows and its speaker index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub features: FeatureMatrix,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean frame cross-entropy seen during each epoch.
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

struct UttResult {
    loss: f64,
    correct: usize,
    frames: usize,
    grad: Vec<f64>,
}

/// Cross-entropy of each frame against `label`; returns the loss sum, the
/// number of frames whose arg-max is the label, and d(loss sum)/d(logits).
fn cross_entropy(logits: &[f64], k: usize, label: usize) -> (f64, usize, Vec<f64>) {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut d = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + z.ln();
        loss += log_z - row[label];
        let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        correct += (best == label) as usize;
        d.extend(row.iter().enumerate().map(|(j, v)| (v - log_z).exp() - (j == label) as u8 as f64));
    }
    (loss, correct, d)
}

fn utterance_gradient(net: &FrameNet, utt: &LabeledUtterance) -> Result<UttResult, NetError> {
    let trace = net.trace(&utt.features)?;
    let (loss, correct, d) = cross_entropy(trace.logits(), net.config().n_speakers, utt.label);
    let mut grad = vec![0.0; net.n_parameters()];
    net.backward(&trace, &d, &mut grad);
    Ok(UttResult { loss, correct, frames: utt.features.rows(), grad })
}

/// Mean frame cross-entropy and the ReLU/pool pattern of each utterance.
fn batch_loss(net: &FrameNet, batch: &[LabeledUtterance]) -> Result<(f64, Vec<u64>), NetError> {
    let mut loss = 0.0;
    let mut frames = 0;
    let mut patterns = Vec::with_capacity(batch.len());
    for utt in batch {
        let trace: Trace = net.trace(&utt.features)?;
        loss += cross_entropy(trace.logits(), net.config().n_speakers, utt.label).0;
        frames += utt.features.rows();
        patterns.push(trace.pattern());
    }
    Ok((loss / frames as f64, patterns))
}

/// Mean frame cross-entropy of `net` on `data`.
pub fn mean_loss(net: &FrameNet, data: &[LabeledUtterance]) -> Result<f64, NetError> {
    let per: Vec<(f64, usize)> = data
        .par_iter()
        .map(|u| {
            let t = net.trace(&u.features)?;
            Ok((cross_entropy(t.logits(), net.config().n_speakers, u.label).0, u.features.rows()))
        })
        .collect::<Result<_, NetError>>()?;
    let frames: usize = per.iter().map(|p| p.1).sum();
    Ok(per.iter().map(|p| p.0).sum::<f64>() / frames as f64)
}

fn check_data(net: &FrameNet, data: &[LabeledUtterance]) -> Result<(), NetError> {
    let n_speakers = net.config().n_speakers;
    for utt in data {
        if utt.label >= n_speakers {
            return Err(NetError::BadLabel { label: utt.label, n_speakers });
        }
        if utt.features.rows() == 0 {
            return Err(NetError::Empty);
        }
    }
    Ok(())
}

/// Minibatch SGD with momentum on frame cross-entropy. Every speaker index
/// below `n_speakers` must own at least one utterance.
pub fn train(net: FrameNet, data: &[LabeledUtterance]) -> Result<(FrameNet, TrainLog), NetError> {
    check_data(&net, data)?;
    let mut seen = vec![false; net.config().n_speakers];
    data.iter().for_each(|u| seen[u.label] = true);
    let present = seen.iter().filter(|&&s| s).count();
    if present < 2 || present < seen.len() {
        return Err(NetError::TooFewSpeakers(present));
    }
    fit(net, data)
}

/// The optimizer loop without the speaker-coverage precondition.
pub(super) fn fit(mut net: FrameNet, data: &[LabeledUtterance]) -> Result<(FrameNet, TrainLog), NetError> {
    check_data(&net, data)?;
    let cfg = net.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11);
    let mut velocity = vec![0.0; net.n_parameters()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct, mut frames) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<UttResult> = batch
                .par_iter()
                .map(|&i| utterance_gradient(&net, &data[i]))
                .collect::<Result<_, NetError>>()?;
            let batch_frames: usize = results.iter().map(|r| r.frames).sum();
            let mut grad = vec![0.0; net.n_parameters()];
            for r in &results {
                loss += r.loss;
                correct += r.correct;
                for (g, x) in grad.iter_mut().zip(&r.grad) {
                    *g += x;
                }
            }
            frames += batch_frames;
            let scale = 1.0 / batch_frames as f64;
            for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * g * scale;
                *p += *v;
            }
        }
        let epoch_loss = loss / frames as f64;
        if !epoch_loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(NetError::Diverged { epoch, loss: epoch_loss });
        }
        let accuracy = correct as f64 / frames as f64;
        info!("epoch {epoch}: loss {epoch_loss:.4} frame accuracy {accuracy:.3} lr {lr}");
        log.epoch_loss.push(epoch_loss);
        log.epoch_accuracy.push(accuracy);
        log.learning_rates.push(lr);
        if epoch_loss > best * (1.0 - 1e-3) {
            lr *= 0.5;
        }
        best = best.min(epoch_loss);
    }
    net.set_learning_rate(lr);
    Ok((net, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per layer, in storage order.
    pub per_layer: Vec<(String, f64)>,
    pub checked: usize,
    /// Draws discarded because the perturbation crossed a ReLU or pool kink.
    pub skipped: usize,
}

const EPS: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Central finite differences on `n_samples` distinct parameters (fewer
/// only if the net is smaller), spread evenly over the layers.
pub fn grad_check(
    net: &FrameNet,
    batch: &[LabeledUtterance],
    n_samples: usize,
    seed: u64,
) -> Result<GradCheckReport, NetError> {
    check_data(net, batch)?;
    if batch.is_empty() {
        return Err(NetError::Empty);
    }
    let frames: usize = batch.iter().map(|u| u.features.rows()).sum();
    let mut analytic = vec![0.0; net.n_parameters()];
    for utt in batch {
        let r = utterance_gradient(net, utt)?;
        for (a, g) in analytic.iter_mut().zip(&r.grad) {
            *a += g / frames as f64;
        }
    }
    let (_, base_pattern) = batch_loss(net, batch)?;
    let layers = net.layer_ranges();
    // Even split over layers; small layers hand their shortfall to larger ones.
    let mut targets: Vec<usize> = layers.iter().map(|(_, r)| r.len().min(n_samples / layers.len())).collect();
    let mut missing = n_samples.saturating_sub(targets.iter().sum());
    while missing > 0 && targets.iter().zip(&layers).any(|(t, (_, r))| *t < r.len()) {
        for (t, (_, r)) in targets.iter_mut().zip(&layers) {
            if missing > 0 && *t < r.len() {
                *t += 1;
                missing -= 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut worst: BTreeMap<usize, f64> = BTreeMap::new();
    let (mut checked, mut skipped) = (0, 0);
    for (li, (_, range)) in layers.iter().enumerate() {
        let mut candidates: Vec<usize> = range.clone().collect();
        candidates.shuffle(&mut rng);
        let mut done = 0;
        for i in candidates {
            if done == targets[li] {
                break;
            }
            let orig = probe.params[i];
            probe.params[i] = orig + EPS;
            let (up, up_pat) = batch_loss(&probe, batch)?;
            probe.params[i] = orig - EPS;
            let (down, down_pat) = batch_loss(&probe, batch)?;
            probe.params[i] = orig;
            if up_pat != base_pattern || down_pat != base_pattern {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * EPS);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            let w = worst.entry(li).or_insert(0.0);
            *w = w.max(err);
            done += 1;
            checked += 1;
        }
    }
    let per_layer: Vec<(String, f64)> =
        layers.iter().enumerate().map(|(li, (name, _))| (name.clone(), *worst.get(&li).unwrap_or(&0.0))).collect();
    let max_rel_error = per_layer.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, per_layer, checked, skipped })
}
