//! Scoring a speaker system, optionally behind an enhancer, on the noisy test grid.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::metrics::{score_cosine, ScoreSet};
use super::report::{Condition, SystemScores};
use super::trials::{make_trials, TrialConfig, TrialList};
use crate::audio::{Domain, FeatureMatrix, FrontEnd};
use crate::autodiff::{Graph, Tensor};
use crate::corpus::{Manifest, NoiseKind, Split};
use crate::enhance::{Enhancer, ForwardOpts};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::speaker::AuxModel;
use crate::train::{embed_all, extract, stack_crops};

/// Test-split features: clean utterances and their noisy copies per condition.
#[derive(Clone, Debug)]
pub struct TestSet<S: Scalar> {
    /// `utt_id -> (speaker_id, features)` of clean test rows.
    pub clean: BTreeMap<String, (String, FeatureMatrix<S>)>,
    /// Noisy features keyed by `(clean_utt_id, condition index)`.
    pub noisy: HashMap<(String, usize), FeatureMatrix<S>>,
    pub conditions: Vec<Condition>,
}

fn condition_index(conditions: &[Condition], kind: NoiseKind, snr: f64) -> Option<usize> {
    conditions.iter().position(|c| c.kind == kind && c.snr_db == snr)
}

impl<S: Scalar> TestSet<S> {
    /// Load the test split. `expected` fixes the condition grid; when empty the
    /// grid is whatever the manifest contains, ordered by kind then SNR.
    pub fn load(manifest: &Manifest, root: &Path, frontend: &FrontEnd, expected: &[Condition]) -> Result<Self> {
        let mut conditions = expected.to_vec();
        if conditions.is_empty() {
            for r in manifest.split(Split::Test) {
                if let Some((kind, snr)) = r.condition() {
                    if condition_index(&conditions, kind, snr).is_none() {
                        conditions.push(Condition { kind, snr_db: snr });
                    }
                }
            }
            conditions.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.snr_db.total_cmp(&b.snr_db)));
        }
        let mut clean = BTreeMap::new();
        let mut noisy = HashMap::new();
        for r in manifest.split(Split::Test) {
            match &r.noise {
                None => {
                    clean.insert(r.utt_id.clone(), (r.speaker_id.clone(), extract(root, r, frontend)?));
                }
                Some(info) => {
                    if let Some(ci) = condition_index(&conditions, info.kind, info.snr_db) {
                        noisy.insert((info.clean_utt_id.clone(), ci), extract(root, r, frontend)?);
                    }
                }
            }
        }
        if clean.is_empty() {
            return Err(Error::Manifest("no clean test utterances".into()));
        }
        Ok(TestSet { clean, noisy, conditions })
    }

    pub fn trials(&self, cfg: &TrialConfig, seed: u64) -> Result<TrialList> {
        let utts: Vec<(String, String)> = self.clean.iter().map(|(u, (s, _))| (u.clone(), s.clone())).collect();
        make_trials(&utts, cfg, seed)
    }
}

/// Eval-mode enhancement, batching utterances of equal length.
pub fn enhance_all<S: Scalar>(enh: &Enhancer<S>, mats: &[&FeatureMatrix<S>], batch: usize) -> Result<Vec<FeatureMatrix<S>>> {
    let mut order: Vec<usize> = (0..mats.len()).collect();
    order.sort_by_key(|&i| mats[i].n_frames());
    let mut out: Vec<Option<FeatureMatrix<S>>> = vec![None; mats.len()];
    let mut i = 0;
    while i < order.len() {
        let len = mats[order[i]].n_frames();
        let mut j = i;
        while j < order.len() && j - i < batch.max(1) && mats[order[j]].n_frames() == len {
            j += 1;
        }
        let items: Vec<_> = order[i..j].iter().map(|&k| (mats[k], 0)).collect();
        let mut g = Graph::new();
        let x = g.constant(stack_crops(&items, len)?);
        let y = enh.forward(&mut g, x, ForwardOpts::default())?;
        let per = mats[order[i]].n_bands() * len;
        for (chunk, &k) in g.value(y).data().chunks(per).zip(&order[i..j]) {
            let t = Tensor::new(vec![1, 1, mats[k].n_bands(), len], chunk.to_vec())?;
            out[k] = Some(FeatureMatrix::from_tensor(&t, Domain::Log)?);
        }
        i = j;
    }
    Ok(out.into_iter().map(|m| m.expect("every utterance enhanced")).collect())
}

/// Embeddings of every clean test utterance and every noisy copy.
pub struct Embeddings {
    pub clean: HashMap<String, Vec<f64>>,
    pub noisy: HashMap<(String, usize), Vec<f64>>,
}

/// Embed the test set with `aux`, first passing every utterance (clean
/// enrollment side included) through `enhancer` when one is given.
pub fn embed_test_set<S: Scalar>(
    aux: &AuxModel<S>,
    enhancer: Option<&Enhancer<S>>,
    set: &TestSet<S>,
    batch: usize,
) -> Result<Embeddings> {
    let clean_keys: Vec<&String> = set.clean.keys().collect();
    let mut noisy_keys: Vec<&(String, usize)> = set.noisy.keys().collect();
    noisy_keys.sort();
    let mats: Vec<&FeatureMatrix<S>> =
        clean_keys.iter().map(|k| &set.clean[*k].1).chain(noisy_keys.iter().map(|k| &set.noisy[*k])).collect();
    let enhanced;
    let inputs: Vec<&FeatureMatrix<S>> = match enhancer {
        Some(e) => {
            enhanced = enhance_all(e, &mats, batch)?;
            enhanced.iter().collect()
        }
        None => mats,
    };
    let embs = embed_all(aux, &inputs, batch)?;
    let to64 = |v: &Vec<S>| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let (c, n) = embs.split_at(clean_keys.len());
    Ok(Embeddings {
        clean: clean_keys.iter().zip(c).map(|(k, v)| ((*k).clone(), to64(v))).collect(),
        noisy: noisy_keys.iter().zip(n).map(|(k, v)| ((*k).clone(), to64(v))).collect(),
    })
}

/// Cosine scores per condition: enrollment on clean embeddings, test side on
/// the noisy copy for that condition. A condition missing any test utterance
/// is reported as absent.
pub fn score_conditions(name: &str, embs: &Embeddings, trials: &TrialList, conditions: &[Condition]) -> Result<SystemScores> {
    let mut out = Vec::with_capacity(conditions.len());
    for (ci, c) in conditions.iter().enumerate() {
        let mut scores = Vec::with_capacity(trials.trials.len());
        let mut labels = Vec::with_capacity(trials.trials.len());
        let mut complete = true;
        for t in &trials.trials {
            let e = embs.clean.get(&t.enroll).ok_or_else(|| Error::Invalid(format!("no embedding for {}", t.enroll)))?;
            let Some(x) = embs.noisy.get(&(t.test.clone(), ci)) else {
                complete = false;
                break;
            };
            scores.push(score_cosine(e, x)?);
            labels.push(t.target);
        }
        out.push((*c, if complete { Some(ScoreSet::new(scores, labels)?) } else { None }));
    }
    Ok(SystemScores { name: name.into(), conditions: out })
}

/// Embed and score one system on the whole grid.
pub fn eval_system<S: Scalar>(
    name: &str,
    aux: &AuxModel<S>,
    enhancer: Option<&Enhancer<S>>,
    set: &TestSet<S>,
    trials: &TrialList,
    batch: usize,
) -> Result<SystemScores> {
    if let Some(e) = enhancer {
        if e.config().n_bands() != aux.config().n_bands {
            return Err(Error::Config("enhancer and speaker network disagree on the number of bands".into()));
        }
    }
    let embs = embed_test_set(aux, enhancer, set, batch)?;
    score_conditions(name, &embs, trials, &set.conditions)
}
