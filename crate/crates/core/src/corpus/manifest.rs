//! Tab-separated utterance manifest.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::noise::NoiseKind;
use crate::error::{Error, Result};

pub const HEADER: &str = "utt_id\tpath\tspeaker_id\tsplit\tnoise_kind\tsnr_db\tclean_utt_id\tnoise_seed";
const NONE: &str = "-";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub clean_utt_id: String,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utt_id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub split: Split,
    pub noise: Option<NoiseInfo>,
}

impl ManifestRow {
    pub fn is_clean(&self) -> bool {
        self.noise.is_none()
    }

    /// `(kind, snr)` for noisy rows.
    pub fn condition(&self) -> Option<(NoiseKind, f64)> {
        self.noise.as_ref().map(|n| (n.kind, n.snr_db))
    }

    fn to_line(&self) -> String {
        let (kind, snr, clean, seed) = match &self.noise {
            Some(n) => (n.kind.to_string(), n.snr_db.to_string(), n.clean_utt_id.clone(), n.noise_seed.to_string()),
            None => (NONE.into(), NONE.into(), NONE.into(), NONE.into()),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.utt_id,
            self.path.display(),
            self.speaker_id,
            self.split,
            kind,
            snr,
            clean,
            seed
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let err = |m: String| Error::Manifest(format!("line {lineno}: {m}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        if f[..4].iter().any(|s| s.is_empty()) {
            return Err(err("empty field".into()));
        }
        let noisy = f[4..].iter().map(|&s| s != NONE).collect::<Vec<_>>();
        let noise = if noisy.iter().all(|&b| b) {
            Some(NoiseInfo {
                kind: f[4].parse().map_err(|e: Error| err(e.to_string()))?,
                snr_db: f[5].parse().map_err(|_| err(format!("bad SNR {:?}", f[5])))?,
                clean_utt_id: f[6].to_string(),
                noise_seed: f[7].parse().map_err(|_| err(format!("bad noise seed {:?}", f[7])))?,
            })
        } else if noisy.iter().any(|&b| b) {
            return Err(err("noise fields must be all set or all '-'".into()));
        } else {
            None
        };
        Ok(ManifestRow {
            utt_id: f[0].to_string(),
            path: PathBuf::from(f[1]),
            speaker_id: f[2].to_string(),
            split: f[3].parse().map_err(|e: Error| err(e.to_string()))?,
            noise,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(Error::Manifest("missing or unexpected header".into())),
        }
        let rows = lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| ManifestRow::parse(l, i + 1))
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, utt_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.utt_id == utt_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Unique ids, noisy rows pointing at a clean row of the same speaker and
    /// split, and no noise seed shared between training and test data.
    pub fn validate(&self) -> Result<()> {
        let mut by_id = HashMap::new();
        for r in &self.rows {
            if by_id.insert(r.utt_id.as_str(), r).is_some() {
                return Err(Error::Manifest(format!("duplicate utterance id {}", r.utt_id)));
            }
        }
        let mut seeds: [HashSet<u64>; 2] = Default::default();
        for r in &self.rows {
            let Some(n) = &r.noise else { continue };
            let clean = by_id
                .get(n.clean_utt_id.as_str())
                .ok_or_else(|| Error::Manifest(format!("{}: unknown clean reference {}", r.utt_id, n.clean_utt_id)))?;
            if !clean.is_clean() || clean.speaker_id != r.speaker_id || clean.split != r.split {
                return Err(Error::Manifest(format!("{}: clean reference {} does not match", r.utt_id, clean.utt_id)));
            }
            if !n.snr_db.is_finite() {
                return Err(Error::Manifest(format!("{}: non-finite SNR", r.utt_id)));
            }
            seeds[(r.split == Split::Test) as usize].insert(n.noise_seed);
        }
        if let Some(s) = seeds[0].intersection(&seeds[1]).next() {
            return Err(Error::Manifest(format!("noise seed {s} used by both training and test rows")));
        }
        Ok(())
    }

    /// Error naming the first row whose audio file is missing under `root`.
    pub fn check_paths(&self, root: &Path) -> Result<()> {
        for r in &self.rows {
            let p = root.join(&r.path);
            if !p.is_file() {
                return Err(Error::Manifest(format!("{}: missing audio file {}", r.utt_id, p.display())));
            }
        }
        Ok(())
    }
}
