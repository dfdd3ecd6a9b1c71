//! Cosine scoring, equal error rate and minimum detection cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel scores and target labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("scores must be finite".into()));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.len() - self.n_target()
    }

    pub fn extend(&mut self, other: &ScoreSet) {
        self.scores.extend_from_slice(&other.scores);
        self.labels.extend_from_slice(&other.labels);
    }

    fn check_both_classes(&self) -> Result<()> {
        if self.n_target() == 0 || self.n_nontarget() == 0 {
            return Err(Error::Invalid("metrics need both target and nontarget trials".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    /// Trials scoring strictly above the threshold are accepted.
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Operating points at `-inf`, every midpoint between distinct sorted
/// scores, and `+inf`, in increasing threshold order.
pub fn operating_points(set: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    set.check_both_classes()?;
    let (nt, nn) = (set.n_target() as f64, set.n_nontarget() as f64);
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    let mut points = vec![OperatingPoint { threshold: f64::NEG_INFINITY, p_miss: 0.0, p_fa: 1.0 }];
    let (mut misses, mut rejected_non) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = set.scores[idx[i]];
        while i < idx.len() && set.scores[idx[i]] == s {
            if set.labels[idx[i]] {
                misses += 1;
            } else {
                rejected_non += 1;
            }
            i += 1;
        }
        let threshold = if i < idx.len() { 0.5 * (s + set.scores[idx[i]]) } else { f64::INFINITY };
        points.push(OperatingPoint { threshold, p_miss: misses as f64 / nt, p_fa: 1.0 - rejected_non as f64 / nn });
    }
    Ok(points)
}

/// Equal error rate in percent, interpolating linearly between the two
/// operating points where the miss rate overtakes the false-alarm rate.
pub fn compute_eer(set: &ScoreSet) -> Result<f64> {
    let pts = operating_points(set)?;
    Ok(100.0 * eer_from_points(&pts))
}

pub(crate) fn eer_from_points(pts: &[OperatingPoint]) -> f64 {
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (a.p_miss - a.p_fa, b.p_miss - b.p_fa);
        if da <= 0.0 && db >= 0.0 {
            if da == db {
                return a.p_miss;
            }
            let t = da / (da - db);
            return a.p_miss + t * (b.p_miss - a.p_miss);
        }
    }
    unreachable!("miss rate runs from 0 to 1 and false alarms from 1 to 0")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams { p_target: 0.05, c_miss: 1.0, c_fa: 1.0 }
    }
}

/// Normalized minimum detection cost over all operating points.
pub fn compute_min_dcf(set: &ScoreSet, params: DcfParams) -> Result<f64> {
    let DcfParams { p_target: p, c_miss, c_fa } = params;
    if !(p > 0.0 && p < 1.0) || !(c_miss > 0.0) || !(c_fa > 0.0) {
        return Err(Error::Invalid("DCF needs 0 < p_target < 1 and positive costs".into()));
    }
    let norm = (c_miss * p).min(c_fa * (1.0 - p));
    let pts = operating_points(set)?;
    Ok(pts.iter().map(|o| c_miss * o.p_miss * p + c_fa * o.p_fa * (1.0 - p)).fold(f64::INFINITY, f64::min) / norm)
}

/// Cosine of the angle between two embeddings.
pub fn score_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("embedding sizes differ: {} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Invalid("cannot score a zero embedding".into()));
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}
