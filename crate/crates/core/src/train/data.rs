//! Feature loading and batch assembly.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;

use crate::audio::{read_wav, FeatureMatrix, FrontEnd};
use crate::autodiff::Tensor;
use crate::corpus::{Manifest, ManifestRow, Split};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct LabeledUtterance<S: Scalar> {
    pub utt_id: String,
    pub label: usize,
    pub features: FeatureMatrix<S>,
}

#[derive(Clone, Debug)]
pub struct ParallelPair<S: Scalar> {
    pub utt_id: String,
    pub noisy: FeatureMatrix<S>,
    pub clean: FeatureMatrix<S>,
}

pub fn extract<S: Scalar>(root: &Path, row: &ManifestRow, frontend: &FrontEnd) -> Result<FeatureMatrix<S>> {
    frontend.features(&read_wav(&root.join(&row.path))?)
}

/// Sorted speaker ids mapped to class indices.
pub fn speaker_index(manifest: &Manifest) -> BTreeMap<String, usize> {
    manifest.speakers().into_iter().enumerate().map(|(i, s)| (s, i)).collect()
}

/// Clean utterances of one split with class labels.
pub fn labeled_clean<S: Scalar>(
    manifest: &Manifest,
    root: &Path,
    split: Split,
    frontend: &FrontEnd,
    index: &BTreeMap<String, usize>,
) -> Result<Vec<LabeledUtterance<S>>> {
    manifest
        .split(split)
        .filter(|r| r.is_clean())
        .map(|r| {
            let label = *index
                .get(&r.speaker_id)
                .ok_or_else(|| Error::Manifest(format!("{}: speaker {} has no label", r.utt_id, r.speaker_id)))?;
            Ok(LabeledUtterance { utt_id: r.utt_id.clone(), label, features: extract(root, r, frontend)? })
        })
        .collect()
}

/// Noisy rows of one split joined with their clean references.
pub fn parallel_pairs<S: Scalar>(
    manifest: &Manifest,
    root: &Path,
    split: Split,
    frontend: &FrontEnd,
) -> Result<Vec<ParallelPair<S>>> {
    let by_id: HashMap<&str, &ManifestRow> = manifest.rows.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let mut cache: HashMap<String, FeatureMatrix<S>> = HashMap::new();
    let mut out = Vec::new();
    for r in manifest.split(split) {
        let Some(info) = &r.noise else { continue };
        let clean_row = by_id
            .get(info.clean_utt_id.as_str())
            .filter(|c| c.is_clean() && c.speaker_id == r.speaker_id)
            .ok_or_else(|| Error::Manifest(format!("{}: no parallel clean row {}", r.utt_id, info.clean_utt_id)))?;
        let clean = match cache.get(&clean_row.utt_id) {
            Some(c) => c.clone(),
            None => {
                let c: FeatureMatrix<S> = extract(root, clean_row, frontend)?;
                cache.insert(clean_row.utt_id.clone(), c.clone());
                c
            }
        };
        let noisy = extract(root, r, frontend)?;
        if noisy.n_frames() != clean.n_frames() || noisy.n_bands() != clean.n_bands() {
            return Err(Error::Manifest(format!(
                "{}: noisy and clean features differ in shape ({} vs {} frames)",
                r.utt_id,
                noisy.n_frames(),
                clean.n_frames()
            )));
        }
        out.push(ParallelPair { utt_id: r.utt_id.clone(), noisy, clean });
    }
    Ok(out)
}

/// Stack equal-length crops `[start, start + len)` into `[N, 1, F, len]`.
pub fn stack_crops<S: Scalar>(items: &[(&FeatureMatrix<S>, usize)], len: usize) -> Result<Tensor<S>> {
    let f = items.first().map(|(m, _)| m.n_bands()).ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let mut data = Vec::with_capacity(items.len() * f * len);
    for (m, start) in items {
        if m.n_bands() != f || start + len > m.n_frames() {
            return Err(shape_err!("crop [{start}, {}) of a {} x {} matrix", start + len, m.n_bands(), m.n_frames()));
        }
        for b in 0..f {
            data.extend_from_slice(&m.row(b)[*start..start + len]);
        }
    }
    Tensor::new(vec![items.len(), 1, f, len], data)
}

/// Uniform random crop start for a matrix of `frames` frames.
pub fn crop_start(rng: &mut impl Rng, frames: usize, len: usize) -> usize {
    if frames > len {
        rng.random_range(0..=frames - len)
    } else {
        0
    }
}

/// Crop length actually usable: `wanted`, capped by the shortest utterance.
pub fn segment_len<'a, S: Scalar + 'a>(wanted: usize, mats: impl Iterator<Item = &'a FeatureMatrix<S>>) -> Result<usize> {
    let shortest = mats.map(|m| m.n_frames()).min().ok_or_else(|| Error::Invalid("no training data".into()))?;
    Ok(wanted.min(shortest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Domain;

    #[test]
    fn crops_are_row_major_slices() {
        let m = FeatureMatrix::new(2, 5, (0..10).map(|v| v as f64).collect(), Domain::Log).unwrap();
        let t = stack_crops(&[(&m, 1), (&m, 3)], 2).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0]);
        assert!(stack_crops(&[(&m, 4)], 2).is_err());
    }
}
