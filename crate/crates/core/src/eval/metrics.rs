use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::EvalError;

/// One operating point of the detection-error trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// One point per distinct score, ascending, then a final point at +inf.
    pub det_points: Vec<DetPoint>,
}

/// Equal error rate by sweeping every distinct score as a threshold.
///
/// At threshold `t`, FAR counts nontargets scoring `>= t` and FRR targets
/// scoring `< t`. The EER is read off by linear interpolation between the
/// last point with FAR > FRR and the first with FAR <= FRR.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<EvalReport, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(s));
    }
    let n_target = labels.iter().filter(|&&l| l).count();
    let n_nontarget = labels.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(EvalError::SingleClass { targets: n_target, nontargets: n_nontarget });
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (n_target as f64, n_nontarget as f64);
    let mut det = Vec::new();
    let (mut targets_below, mut nontargets_below) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        det.push(DetPoint {
            threshold: t,
            far: (n_nontarget - nontargets_below) as f64 / nn,
            frr: targets_below as f64 / nt,
        });
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    det.push(DetPoint { threshold: f64::INFINITY, far: 0.0, frr: 1.0 });
    let (eer, threshold) = crossing(&det);
    Ok(EvalReport { eer, threshold, n_target, n_nontarget, det_points: det })
}

/// Interpolated FAR = FRR point of a DET sweep whose first point has
/// FAR > FRR and whose last has FAR < FRR.
pub(super) fn crossing(det: &[DetPoint]) -> (f64, f64) {
    let j = det.iter().position(|p| p.far <= p.frr).expect("sweep ends with FAR < FRR");
    if j == 0 {
        return (det[0].far, det[0].threshold);
    }
    let (p, q) = (det[j - 1], det[j]);
    let (dp, dq) = (p.far - p.frr, q.far - q.frr);
    let alpha = dp / (dp - dq);
    let eer = p.far + alpha * (q.far - p.far);
    let threshold = if q.threshold.is_finite() { p.threshold + alpha * (q.threshold - p.threshold) } else { p.threshold };
    (eer, threshold)
}

impl EvalReport {
    /// Structured text: optional `#` header lines, key/value lines, then
    /// the DET table.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        let _ = writeln!(s, "# eer is linearly interpolated at the FAR/FRR crossing");
        let _ = writeln!(s, "eer\t{}", self.eer);
        let _ = writeln!(s, "eer_percent\t{:.2}", 100.0 * self.eer);
        let _ = writeln!(s, "threshold\t{}", self.threshold);
        let _ = writeln!(s, "n_target\t{}", self.n_target);
        let _ = writeln!(s, "n_nontarget\t{}", self.n_nontarget);
        let _ = writeln!(s, "det\tthreshold\tfar\tfrr");
        for p in &self.det_points {
            let _ = writeln!(s, "det\t{}\t{}\t{}", p.threshold, p.far, p.frr);
        }
        s
    }

    pub fn save(&self, path: &Path, header: &[String]) -> Result<(), EvalError> {
        fs::write(path, self.to_text(header))?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let err = |line: usize, reason: &str| EvalError::Parse { line, reason: reason.to_string() };
        let mut r = EvalReport { eer: f64::NAN, threshold: f64::NAN, n_target: 0, n_nontarget: 0, det_points: Vec::new() };
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let num = |k: usize| -> Result<f64, EvalError> {
                f.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| err(i + 1, "bad number"))
            };
            match f[0] {
                "eer" => r.eer = num(1)?,
                "threshold" => r.threshold = num(1)?,
                "n_target" => r.n_target = num(1)? as usize,
                "n_nontarget" => r.n_nontarget = num(1)? as usize,
                "eer_percent" => {}
                "det" if f.get(1) == Some(&"threshold") => {}
                "det" => r.det_points.push(DetPoint { threshold: num(1)?, far: num(2)?, frr: num(3)? }),
                _ => return Err(err(i + 1, "unknown key")),
            }
        }
        if r.eer.is_nan() {
            return Err(err(0, "missing eer"));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Counts FAR/FRR at every candidate threshold directly, then
    /// interpolates at the first crossing.
    fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.push(f64::INFINITY);
        let nt = labels.iter().filter(|&&l| l).count() as f64;
        let nn = labels.len() as f64 - nt;
        let points: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let fa = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
                let fr = scores.iter().zip(labels).filter(|(s, l)| **l && **s < t).count() as f64;
                (fa / nn, fr / nt)
            })
            .collect();
        for k in 1..points.len() {
            let (a, b) = (points[k - 1], points[k]);
            if b.0 <= b.1 {
                let (da, db) = (a.0 - a.1, b.0 - b.1);
                return a.0 + da / (da - db) * (b.0 - a.0);
            }
        }
        unreachable!()
    }

    fn random_trials(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> (Vec<f64>, Vec<bool>) {
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let scores = labels.iter().map(|&l| rng.gen_range(0.0..1.0) + if l { shift } else { 0.0 }).collect();
        (scores, labels)
    }

    #[test]
    fn separated_scores_give_zero() {
        let r = compute_eer(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(r.eer, 0.0);
        assert_eq!((r.n_target, r.n_nontarget), (2, 2));
        assert_eq!(r.det_points.len(), 5);
    }

    #[test]
    fn fully_reversed_scores_give_one() {
        let r = compute_eer(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
        assert!((r.eer - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (s, l) = random_trials(&mut rng, 1000, 0.4);
            let fast = compute_eer(&s, &l).unwrap().eer;
            assert!((fast - brute_force_eer(&s, &l)).abs() < 1e-9);
        }
        // Heavy ties.
        let (s, l) = random_trials(&mut rng, 500, 0.4);
        let s: Vec<f64> = s.iter().map(|v| (v * 10.0).round()).collect();
        assert!((compute_eer(&s, &l).unwrap().eer - brute_force_eer(&s, &l)).abs() < 1e-9);
    }

    #[test]
    fn random_labels_give_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, l) = random_trials(&mut rng, 10_000, 0.0);
        assert!((compute_eer(&s, &l).unwrap().eer - 0.5).abs() < 0.02);
    }

    #[test]
    fn rejects_single_class_and_bad_input() {
        assert!(matches!(compute_eer(&[1.0, 2.0], &[true, true]), Err(EvalError::SingleClass { .. })));
        assert!(matches!(compute_eer(&[1.0], &[true, false]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(compute_eer(&[f64::NAN, 1.0], &[true, false]), Err(EvalError::NonFiniteScore(_))));
    }

    #[test]
    fn report_text_round_trip() {
        let r = compute_eer(&[0.3, 0.1, 0.7, 0.5, 0.2], &[true, false, true, false, false]).unwrap();
        let back = EvalReport::parse(&r.to_text(&["trial design: all pairs".into()])).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn invariant_to_increasing_maps(seed in 0u64..1000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, l) = random_trials(&mut rng, 200, 0.3);
            let base = compute_eer(&s, &l).unwrap().eer;
            let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
            prop_assert!((compute_eer(&exp, &l).unwrap().eer - base).abs() < 1e-12);
            prop_assert!((compute_eer(&affine, &l).unwrap().eer - base).abs() < 1e-12);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let swapped: Vec<bool> = l.iter().map(|v| !v).collect();
            prop_assert!((compute_eer(&neg, &swapped).unwrap().eer - base).abs() < 1e-12);
        }

        #[test]
        fn eer_is_a_fraction(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, l) = random_trials(&mut rng, 50, 0.2);
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let r = compute_eer(&s, &l).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.eer));
        }
    }
}
