//! Per-condition result tables.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_eer, compute_min_dcf, DcfParams, ScoreSet};
use crate::corpus::NoiseKind;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: NoiseKind,
    pub snr_db: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent.
    pub eer: f64,
    pub min_dcf: f64,
}

impl Metrics {
    pub fn of(set: &ScoreSet, dcf: DcfParams) -> Result<Self> {
        Ok(Metrics { eer: compute_eer(set)?, min_dcf: compute_min_dcf(set, dcf)? })
    }
}

/// Scores of one system in every condition; `None` marks a condition that
/// could not be built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub name: String,
    pub conditions: Vec<(Condition, Option<ScoreSet>)>,
}

impl SystemScores {
    pub fn pooled(&self) -> ScoreSet {
        let mut all = ScoreSet::default();
        for s in self.conditions.iter().filter_map(|(_, s)| s.as_ref()) {
            all.extend(s);
        }
        all
    }
}

/// `100 (after - before) / before`; negative when the metric improves.
pub fn delta_pct(before: f64, after: f64) -> f64 {
    100.0 * (after - before) / before
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Noise kind, or `"pooled"`.
    pub noise: String,
    pub snr_db: Option<f64>,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub without: Option<Metrics>,
    pub with: Option<Metrics>,
    pub eer_delta_pct: Option<f64>,
    pub min_dcf_delta_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: String,
    pub system: Option<String>,
    pub rows: Vec<ReportRow>,
    pub pooled: ReportRow,
}

fn metrics_of(set: Option<&ScoreSet>, dcf: DcfParams) -> Option<Metrics> {
    set.and_then(|s| Metrics::of(s, dcf).ok())
}

fn row(noise: String, snr_db: Option<f64>, before: Option<&ScoreSet>, after: Option<&ScoreSet>, dcf: DcfParams) -> ReportRow {
    let (without, with) = (metrics_of(before, dcf), metrics_of(after, dcf));
    let counts = before.or(after).map(|s| (s.n_target(), s.n_nontarget())).unwrap_or((0, 0));
    let (eer_delta_pct, min_dcf_delta_pct) = match (without, with) {
        (Some(b), Some(a)) => (Some(delta_pct(b.eer, a.eer)), Some(delta_pct(b.min_dcf, a.min_dcf))),
        _ => (None, None),
    };
    ReportRow {
        noise,
        snr_db,
        n_target: counts.0,
        n_nontarget: counts.1,
        without,
        with,
        eer_delta_pct,
        min_dcf_delta_pct,
    }
}

impl EvalReport {
    /// Baseline-only report, or a comparison when `system` is given. The
    /// two systems must cover the same conditions in the same order.
    pub fn build(baseline: &SystemScores, system: Option<&SystemScores>, dcf: DcfParams) -> Self {
        let rows = baseline
            .conditions
            .iter()
            .enumerate()
            .map(|(i, (c, before))| {
                let after = system.and_then(|s| s.conditions.get(i)).filter(|(ac, _)| ac == c).and_then(|(_, s)| s.as_ref());
                row(c.kind.to_string(), Some(c.snr_db), before.as_ref(), after, dcf)
            })
            .collect();
        let pb = baseline.pooled();
        let pa = system.map(|s| s.pooled());
        let pooled = row("pooled".into(), None, Some(&pb).filter(|s| !s.is_empty()), pa.as_ref().filter(|s| !s.is_empty()), dcf);
        EvalReport { baseline: baseline.name.clone(), system: system.map(|s| s.name.clone()), rows, pooled }
    }

    /// True when every condition produced metrics for every system.
    pub fn complete(&self) -> bool {
        let two = self.system.is_some();
        self.rows.iter().chain(std::iter::once(&self.pooled)).all(|r| r.without.is_some() && (!two || r.with.is_some()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt = |m: Option<Metrics>| match m {
            Some(m) => (format!("{:.2}", m.eer), format!("{:.4}", m.min_dcf)),
            None => ("absent".into(), "absent".into()),
        };
        let pct = |d: Option<f64>| d.map(|d| format!("{d:+.1}")).unwrap_or_else(|| "-".into());
        match &self.system {
            Some(sys) => {
                let _ = writeln!(s, "without: {}    with: {}", self.baseline, sys);
                let _ = writeln!(
                    s,
                    "{:<8} {:>6} {:>6} {:>7} | {:>8} {:>8} {:>7} | {:>9} {:>9} {:>7}",
                    "noise", "snr", "tgt", "non", "EER%", "EER%", "Δ%", "minDCF", "minDCF", "Δ%"
                );
                let _ = writeln!(s, "{:<30} | {:>8} {:>8} {:>7} | {:>9} {:>9}", "", "without", "with", "", "without", "with");
            }
            None => {
                let _ = writeln!(s, "system: {}", self.baseline);
                let _ = writeln!(s, "{:<8} {:>6} {:>6} {:>7} | {:>8} {:>9}", "noise", "snr", "tgt", "non", "EER%", "minDCF");
            }
        }
        for r in self.rows.iter().chain(std::iter::once(&self.pooled)) {
            let snr = r.snr_db.map(|v| format!("{v}")).unwrap_or_else(|| "all".into());
            let (be, bd) = fmt(r.without);
            let lead = format!("{:<8} {:>6} {:>6} {:>7}", r.noise, snr, r.n_target, r.n_nontarget);
            if self.system.is_some() {
                let (ae, ad) = fmt(r.with);
                let _ = writeln!(
                    s,
                    "{lead} | {be:>8} {ae:>8} {:>7} | {bd:>9} {ad:>9} {:>7}",
                    pct(r.eer_delta_pct),
                    pct(r.min_dcf_delta_pct)
                );
            } else {
                let _ = writeln!(s, "{lead} | {be:>8} {bd:>9}");
            }
        }
        s
    }

    /// One JSON object per row, pooled row last.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for r in self.rows.iter().chain(std::iter::once(&self.pooled)) {
            let mut v = serde_json::to_value(r)?;
            v["baseline"] = self.baseline.clone().into();
            v["system"] = self.system.clone().into();
            s.push_str(&serde_json::to_string(&v)?);
            s.push('\n');
        }
        Ok(s)
    }
}
