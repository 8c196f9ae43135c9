use super::{DspError, FeatureMatrix};

fn clamp_index(t: isize, rows: usize) -> usize {
    t.clamp(0, rows as isize - 1) as usize
}

/// Regression deltas over `±window` frames with edge replication.
fn deltas(f: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let (rows, cols) = (f.rows(), f.cols());
    let norm: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = FeatureMatrix::zeros(rows, cols, f.label.clone());
    for t in 0..rows {
        let dst = out.row_mut(t);
        for k in 1..=window {
            let ahead = f.row(clamp_index(t as isize + k as isize, rows));
            let behind = f.row(clamp_index(t as isize - k as isize, rows));
            for d in 0..cols {
                dst[d] += k as f64 * (ahead[d] - behind[d]);
            }
        }
        for v in dst.iter_mut() {
            *v /= norm;
        }
    }
    out
}

/// Appends first (and for `order == 2`, second) order regression deltas.
pub fn add_deltas(f: &FeatureMatrix, order: usize, window: usize) -> Result<FeatureMatrix, DspError> {
    if !(1..=2).contains(&order) {
        return Err(DspError::InvalidArgument(format!("delta order must be 1 or 2, got {order}")));
    }
    if window == 0 {
        return Err(DspError::InvalidArgument("delta window must be positive".into()));
    }
    let mut streams = vec![f.clone(), deltas(f, window)];
    if order == 2 {
        let dd = deltas(&streams[1], window);
        streams.push(dd);
    }
    let (rows, base) = (f.rows(), f.cols());
    let cols = base * (order + 1);
    let mut data = Vec::with_capacity(rows * cols);
    for t in 0..rows {
        for s in &streams {
            data.extend_from_slice(s.row(t));
        }
    }
    let suffix = if order == 2 { "+Δ+ΔΔ" } else { "+Δ" };
    Ok(FeatureMatrix::new(rows, cols, data, format!("{}{suffix}:{cols}", f.label)))
}

/// Concatenates frames `t-left ..= t+right` per frame, replicating edges.
pub fn splice(f: &FeatureMatrix, left: usize, right: usize) -> FeatureMatrix {
    let (rows, base) = (f.rows(), f.cols());
    let width = left + right + 1;
    let mut data = Vec::with_capacity(rows * base * width);
    for t in 0..rows as isize {
        for off in -(left as isize)..=right as isize {
            data.extend_from_slice(f.row(clamp_index(t + off, rows)));
        }
    }
    FeatureMatrix::new(rows, base * width, data, format!("{}×{width}:{}", f.label, base * width))
}

/// Per-utterance mean normalization, plus variance normalization when
/// `norm_vars` is set and there are at least two frames. Constant
/// dimensions are only centered.
pub fn cmvn(f: &FeatureMatrix, norm_vars: bool) -> FeatureMatrix {
    let (rows, cols) = (f.rows(), f.cols());
    let mut out = f.clone();
    if rows == 0 {
        return out;
    }
    let n = rows as f64;
    for d in 0..cols {
        let mean = (0..rows).map(|t| f.get(t, d)).sum::<f64>() / n;
        let scale = if norm_vars && rows >= 2 {
            let var = (0..rows).map(|t| (f.get(t, d) - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                1.0 / var.sqrt()
            } else {
                1.0
            }
        } else {
            1.0
        };
        for t in 0..rows {
            out.row_mut(t)[d] = (f.get(t, d) - mean) * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect(), "x")
    }

    #[test]
    fn delta_dims() {
        let f = random(30, 20, 1);
        let d = add_deltas(&f, 2, 2).unwrap();
        assert_eq!(d.cols(), 60);
        assert_eq!(d.label, "x+Δ+ΔΔ:60");
        assert_eq!(add_deltas(&f, 1, 2).unwrap().cols(), 40);
        assert!(add_deltas(&f, 3, 2).is_err());
    }

    #[test]
    fn constant_features_have_zero_deltas() {
        let f = FeatureMatrix::new(10, 3, vec![1.5; 30], "c");
        let d = add_deltas(&f, 2, 2).unwrap();
        for t in 0..10 {
            assert!(d.row(t)[3..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_delta_equals_slope_in_interior() {
        let v = [0.5, -1.25, 3.0];
        let rows: Vec<Vec<f64>> = (0..12).map(|t| v.iter().map(|x| x * t as f64).collect()).collect();
        let d = add_deltas(&FeatureMatrix::from_rows(&rows, "r"), 1, 2).unwrap();
        for t in 2..10 {
            for k in 0..3 {
                assert!((d.get(t, 3 + k) - v[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn splice_shapes_and_edges() {
        let f = random(47, 40, 2);
        let s = splice(&f, 4, 4);
        assert_eq!((s.rows(), s.cols()), (47, 360));
        assert_eq!(s.label, "x×9:360");
        // frame 0: left context replicated
        for j in 0..=4 {
            assert_eq!(&s.row(0)[j * 40..(j + 1) * 40], f.row(0));
        }
        let one = random(1, 40, 3);
        let tiled = splice(&one, 4, 4);
        assert_eq!(tiled.row(0), one.row(0).repeat(9).as_slice());
    }

    #[test]
    fn cmvn_zero_mean_and_idempotent() {
        let f = random(25, 6, 4);
        let n = cmvn(&f, true);
        for d in 0..6 {
            let mean: f64 = (0..25).map(|t| n.get(t, d)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-10);
        }
        let again = cmvn(&n, true);
        for (a, b) in n.as_slice().iter().zip(again.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        let single = cmvn(&random(1, 6, 5), true);
        assert!(single.as_slice().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn splice_center_reproduces_input(rows in 1usize..20, seed in 0u64..1000) {
            let f = random(rows, 5, seed);
            let s = splice(&f, 4, 4);
            for t in 0..rows {
                prop_assert_eq!(&s.row(t)[20..25], f.row(t));
            }
        }

        #[test]
        fn deltas_flip_sign_under_time_reversal(rows in 1usize..25, seed in 0u64..1000) {
            let f = random(rows, 4, seed);
            let rev: Vec<usize> = (0..rows).rev().collect();
            let d = add_deltas(&f, 2, 2).unwrap();
            let dr = add_deltas(&f.select_rows(&rev), 2, 2).unwrap();
            for t in 0..rows {
                let a = d.row(t);
                let b = dr.row(rows - 1 - t);
                for k in 0..4 {
                    prop_assert!((a[4 + k] + b[4 + k]).abs() < 1e-10);
                    prop_assert!((a[8 + k] - b[8 + k]).abs() < 1e-10);
                }
            }
        }
    }
}
