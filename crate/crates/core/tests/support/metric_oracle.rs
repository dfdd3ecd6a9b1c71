// Exhaustive-threshold reference EER and minDCF.

use dfl_core::eval::{DcfParams, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(p_miss, p_fa)` for every candidate threshold, accepting `score >= thr`,
/// in increasing threshold order with "accept everything" first and
/// "reject everything" last.
pub fn brute_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let nt = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - nt;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|&thr| {
            let mut miss = 0.0;
            let mut fa = 0.0;
            for (&s, &l) in scores.iter().zip(labels) {
                match (l, s >= thr) {
                    (true, false) => miss += 1.0,
                    (false, true) => fa += 1.0,
                    _ => {}
                }
            }
            (miss / nt, fa / nn)
        })
        .collect()
}

/// Percent; linear interpolation where `p_miss - p_fa` changes sign.
pub fn brute_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let pts = brute_points(scores, labels);
    for w in pts.windows(2) {
        let ((m0, f0), (m1, f1)) = (w[0], w[1]);
        let (d0, d1) = (m0 - f0, m1 - f1);
        if d0 <= 0.0 && d1 >= 0.0 {
            let eer = if d0 == d1 { m0 } else { m0 + d0 / (d0 - d1) * (m1 - m0) };
            return 100.0 * eer;
        }
    }
    panic!("no crossing")
}

pub fn brute_min_dcf(scores: &[f64], labels: &[bool], p: DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    brute_points(scores, labels)
        .into_iter()
        .map(|(m, f)| (p.c_miss * p.p_target * m + p.c_fa * (1.0 - p.p_target) * f) / norm)
        .fold(f64::INFINITY, f64::min)
}

/// A random 200-trial set with both classes; every third seed has coarse,
/// heavily tied scores.
pub fn random_set(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n_target = r.random_range(5..100);
    let sep = r.random_range(0.0..3.0);
    let coarse = seed % 3 == 0;
    let mut scores = Vec::with_capacity(200);
    let mut labels = Vec::with_capacity(200);
    for i in 0..200 {
        let target = i < n_target;
        let mut s: f64 = r.random_range(-1.0..1.0) + r.random_range(-1.0..1.0) + if target { sep } else { 0.0 };
        if coarse {
            s = (s * 4.0).round() / 4.0;
        }
        scores.push(s);
        labels.push(target);
    }
    (scores, labels)
}

pub fn set(scores: &[f64], labels: &[bool]) -> ScoreSet {
    ScoreSet::new(scores.to_vec(), labels.to_vec()).unwrap()
}
