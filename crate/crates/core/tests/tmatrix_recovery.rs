//! Total-variability training recovers the subspace that generated the data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tev_core::gmm::{accumulate_stats, BaumWelchStats, DiagGmm};
use tev_core::tvspace::{extract_ivector, init_tmatrix, train_tmatrix};
use tev_core::FeatureMatrix;

const FRAMES_PER_UTT: usize = 60;

fn ubm() -> DiagGmm {
    DiagGmm::new(vec![0.5, 0.5], vec![-4.0, -4.0, 4.0, 4.0], vec![1.0, 1.0, 1.0, 1.0], 2).unwrap()
}

fn true_t() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 2, &[0.8, 0.1, -0.3, 0.6, 0.2, -0.7, 0.5, 0.4])
}

/// Frames of one utterance whose component means are shifted by `T w`.
fn utterance(ubm: &DiagGmm, t: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let w = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = t * w;
    let rows: Vec<Vec<f64>> = (0..FRAMES_PER_UTT)
        .map(|_| {
            let c = rng.gen_range(0..2);
            (0..2).map(|d| ubm.mean(c)[d] + shift[c * 2 + d] + rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    FeatureMatrix::from_rows(&rows, "toy")
}

/// Principal angles (degrees) between the column spans of `a` and `b`.
fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    (qa.transpose() * qb).svd(false, false).singular_values.iter().map(|s| s.min(1.0).acos().to_degrees()).collect()
}

fn corpus_stats(n: usize, seed: u64) -> Vec<BaumWelchStats> {
    let (g, t) = (ubm(), true_t());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| accumulate_stats(&g, &utterance(&g, &t, &mut rng)).unwrap()).collect()
}

#[test]
fn subspace_recovered_within_five_degrees() {
    let stats = corpus_stats(500, 11);
    let init = init_tmatrix(&ubm(), 2, 5).unwrap();
    let (trained, objectives) = train_tmatrix(&init, &stats, 10).unwrap();
    let angles = principal_angles(&true_t(), trained.t());
    assert!(angles.iter().all(|&a| a < 5.0), "principal angles {angles:?}");
    let before = principal_angles(&true_t(), init.t());
    assert!(before.iter().cloned().fold(0.0, f64::max) > angles.iter().cloned().fold(0.0, f64::max));
    for w in objectives.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "objective decreased: {objectives:?}");
    }
}

#[test]
fn trained_ivectors_track_the_latent_factor() {
    // same generator, but keep the latent factors to compare against
    let (g, t) = (ubm(), true_t());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stats = corpus_stats(300, 4);
    let (model, _) = train_tmatrix(&init_tmatrix(&g, 2, 1).unwrap(), &stats, 10).unwrap();
    // utterances far along one latent direction give i-vectors far from the origin
    let near: Vec<f64> = (0..20)
        .map(|_| {
            let f = utterance(&g, &DMatrix::zeros(4, 2), &mut rng);
            extract_ivector(&model, &accumulate_stats(&g, &f).unwrap(), "n").unwrap().norm()
        })
        .collect();
    let far: Vec<f64> = (0..20)
        .map(|_| {
            let f = utterance(&g, &(&t * 4.0), &mut rng);
            extract_ivector(&model, &accumulate_stats(&g, &f).unwrap(), "f").unwrap().norm()
        })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&far) > 2.0 * mean(&near), "far {} near {}", mean(&far), mean(&near));
}
