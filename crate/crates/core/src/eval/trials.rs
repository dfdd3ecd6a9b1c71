//! Enrollment/test trial lists.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    /// Leading utterances (by id) of each speaker used for enrollment.
    pub enroll_per_speaker: usize,
    /// Nontarget trials sampled per target trial.
    pub nontarget_ratio: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig { enroll_per_speaker: 2, nontarget_ratio: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialList {
    pub trials: Vec<Trial>,
    /// Speakers left out for having fewer than two utterances.
    pub skipped: Vec<String>,
}

impl TrialList {
    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }
}

/// Split each speaker's utterances into enrollment and test sides, keep all
/// target pairs and sample nontarget pairs at the configured ratio.
/// `utts` holds `(utt_id, speaker_id)`.
pub fn make_trials(utts: &[(String, String)], cfg: &TrialConfig, seed: u64) -> Result<TrialList> {
    if cfg.enroll_per_speaker == 0 {
        return Err(Error::Config("trials: need at least one enrollment utterance per speaker".into()));
    }
    let mut by_speaker: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (u, s) in utts {
        by_speaker.entry(s.as_str()).or_default().insert(u.as_str());
    }
    let mut skipped = Vec::new();
    let (mut enroll, mut test) = (Vec::new(), Vec::new());
    for (spk, ids) in &by_speaker {
        if ids.len() < 2 {
            skipped.push(spk.to_string());
            continue;
        }
        let k = cfg.enroll_per_speaker.min(ids.len() - 1);
        for (i, id) in ids.iter().enumerate() {
            if i < k {
                enroll.push((*id, *spk));
            } else {
                test.push((*id, *spk));
            }
        }
    }
    if by_speaker.len() - skipped.len() < 2 {
        return Err(Error::Invalid("trials need at least two speakers with two or more utterances".into()));
    }
    let mut trials = Vec::new();
    let mut nontargets = Vec::new();
    for &(e, es) in &enroll {
        for &(t, ts) in &test {
            if es == ts {
                trials.push(Trial { enroll: e.into(), test: t.into(), target: true });
            } else {
                nontargets.push((e, t));
            }
        }
    }
    let want = (trials.len() * cfg.nontarget_ratio).min(nontargets.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, nontargets.len(), want).into_vec();
    picked.sort_unstable();
    trials.extend(picked.into_iter().map(|i| Trial { enroll: nontargets[i].0.into(), test: nontargets[i].1.into(), target: false }));
    trials.sort();
    Ok(TrialList { trials, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utts(spec: &[(&str, &str)]) -> Vec<(String, String)> {
        spec.iter().map(|(u, s)| (u.to_string(), s.to_string())).collect()
    }

    #[test]
    fn two_speakers_full_cross() {
        let u = utts(&[("a1", "A"), ("a2", "A"), ("b1", "B"), ("b2", "B")]);
        let cfg = TrialConfig { enroll_per_speaker: 1, nontarget_ratio: 100 };
        let l = make_trials(&u, &cfg, 0).unwrap();
        assert_eq!(l.trials.len(), 4);
        for t in &l.trials {
            assert_eq!(t.target, t.enroll[..1] == t.test[..1]);
        }
    }

    #[test]
    fn unique_deterministic_and_skips_singletons() {
        let mut spec = Vec::new();
        for s in 0..6 {
            for u in 0..5 {
                spec.push((format!("s{s}u{u}"), format!("s{s}")));
            }
        }
        spec.push(("lonely".into(), "z".into()));
        let cfg = TrialConfig::default();
        let a = make_trials(&spec, &cfg, 9).unwrap();
        assert_eq!(a, make_trials(&spec, &cfg, 9).unwrap());
        assert_eq!(a.skipped, vec!["z".to_string()]);
        let pairs: BTreeSet<_> = a.trials.iter().map(|t| (&t.enroll, &t.test)).collect();
        assert_eq!(pairs.len(), a.trials.len());
        assert_eq!(a.n_target(), 6 * 2 * 3);
        assert_eq!(a.trials.len() - a.n_target(), 12 * 18 - 36);
        assert!(make_trials(&utts(&[("a1", "A"), ("a2", "A")]), &cfg, 0).is_err());
    }
}
