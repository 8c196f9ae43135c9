//! End-to-end optimizer check on a corpus that is separable by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tev_core::embednet::{dvector, train, FrameNet, FrameNetConfig, LabeledUtterance};
use tev_core::FeatureMatrix;

/// Spliced 9 x 40 rows where speaker 0 has energy in bins 0..20 and
/// speaker 1 in bins 20..40, on top of unit noise.
fn utterance(label: usize, frames: usize, rng: &mut ChaCha8Rng) -> LabeledUtterance {
    let band = if label == 0 { 0..20 } else { 20..40 };
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            (0..360)
                .map(|k| {
                    let noise: f64 = rng.sample(StandardNormal);
                    noise + if band.contains(&(k % 40)) { 1.5 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    LabeledUtterance { features: FeatureMatrix::from_rows(&rows, "fbank40x9:360"), label }
}

#[test]
fn disjoint_bands_are_learned_within_twenty_epochs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<LabeledUtterance> = (0..16).map(|i| utterance(i % 2, rng.gen_range(20..40), &mut rng)).collect();
    let cfg = FrameNetConfig { n_speakers: 2, feature_dim: 16, epochs: 20, seed: 4, ..FrameNetConfig::default() };
    let (net, log) = train(FrameNet::new(cfg).unwrap(), &data).unwrap();
    let best = log.epoch_accuracy.iter().cloned().fold(0.0, f64::max);
    assert!(best > 0.95, "frame accuracy per epoch: {:?}", log.epoch_accuracy);
    assert_eq!(log.epoch_loss.len(), 20);
    assert!(log.epoch_loss.last().unwrap() < &log.epoch_loss[0]);

    // held-out utterances: same-speaker d-vectors are closer than cross-speaker ones
    let held: Vec<LabeledUtterance> = (0..6).map(|i| utterance(i % 2, 30, &mut rng)).collect();
    let vecs: Vec<_> = held.iter().map(|u| dvector(&net, &u.features, "h").unwrap()).collect();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let (mut same, mut diff) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..6 {
        for j in i + 1..6 {
            let c = cos(&vecs[i].values, &vecs[j].values);
            if i % 2 == j % 2 {
                same = same.min(c);
            } else {
                diff = diff.max(c);
            }
        }
    }
    assert!(same > diff, "worst same-speaker {same} vs best cross-speaker {diff}");
}
