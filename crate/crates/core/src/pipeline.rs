//! Run configuration and the end-to-end stages: corpus, auxiliary network,
//! enhancer, batch enhancement and evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, FrontEnd, FrontEndConfig};
use crate::autodiff::{file_sha256, Checkpoint};
use crate::corpus::{build_parallel_corpus, CorpusConfig, CorpusSummary, Manifest, NoiseKind, Split, MANIFEST_FILE};
use crate::enhance::{CanConfig, EdnConfig, Enhancer, EnhancerConfig};
use crate::error::{Error, Result};
use crate::eval::{eval_system, Condition, DcfParams, EvalReport, SystemScores, TestSet, TrialConfig};
use crate::featfile::FeatureFile;
use crate::loss::LossKind;
use crate::scalar::Scalar;
use crate::speaker::{AuxModel, AuxNetConfig};
use crate::train::{
    labeled_clean, parallel_pairs, speaker_index, train_aux, train_enhancer, AuxEpochLog, AuxTrainConfig,
    AuxTrainReport, EnhancerRun, EnhancerTrainConfig, StepLog,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}; expected f32 or f64"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Can,
    Edn,
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "can" => Ok(NetKind::Can),
            "edn" => Ok(NetKind::Edn),
            other => Err(Error::Config(format!("unknown network {other:?}; expected can or edn"))),
        }
    }
}

/// Every parameter of a run. Serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Precision,
    /// Batch size for embedding and enhancement at evaluation time.
    pub eval_batch: usize,
    #[serde(default)]
    pub frontend: FrontEndConfig,
    pub corpus: CorpusConfig,
    pub aux_net: AuxNetConfig,
    pub aux_train: AuxTrainConfig,
    /// Enhancer architecture used when none is named on the command line.
    pub net: NetKind,
    pub can: CanConfig,
    pub edn: EdnConfig,
    pub enhancer_train: EnhancerTrainConfig,
    #[serde(default)]
    pub trials: TrialConfig,
    #[serde(default)]
    pub dcf: DcfParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Reduced networks and schedules that finish on one CPU core.
    pub fn desk() -> Self {
        let corpus = CorpusConfig::default();
        RunConfig {
            seed: 1,
            out: PathBuf::from("runs/desk"),
            precision: Precision::F32,
            eval_batch: 32,
            frontend: FrontEndConfig::default(),
            aux_net: AuxNetConfig {
                stem_channels: 8,
                widths: vec![8, 16, 32, 64],
                blocks_per_stage: 1,
                embed_dim: 64,
                n_speakers: corpus.n_speakers,
                ..AuxNetConfig::default()
            },
            aux_train: AuxTrainConfig {
                epochs: 8,
                batch_size: 32,
                segment_frames: 200,
                warmup_steps: 50,
                ..AuxTrainConfig::default()
            },
            net: NetKind::Can,
            can: CanConfig { channels: 16, ..CanConfig::default() },
            edn: EdnConfig { channels: 32, ..EdnConfig::default() },
            enhancer_train: EnhancerTrainConfig {
                batch_size: 16,
                segment_frames: 150,
                base_lr: 0.003,
                ..EnhancerTrainConfig::default()
            },
            corpus,
            trials: TrialConfig::default(),
            dcf: DcfParams::default(),
        }
    }

    /// Full-size networks and recipes.
    pub fn full() -> Self {
        let corpus = CorpusConfig::default();
        RunConfig {
            out: PathBuf::from("runs/full"),
            aux_net: AuxNetConfig { n_speakers: corpus.n_speakers, ..AuxNetConfig::default() },
            aux_train: AuxTrainConfig::default(),
            can: CanConfig::default(),
            edn: EdnConfig::default(),
            enhancer_train: EnhancerTrainConfig::recipe(&EnhancerConfig::Can(CanConfig::default())),
            corpus,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected desk or full"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.aux_net.validate()?;
        self.aux_train.validate()?;
        for net in [NetKind::Can, NetKind::Edn] {
            let arch = self.arch(net);
            match &arch {
                EnhancerConfig::Can(c) => c.validate()?,
                EnhancerConfig::Edn(c) => c.validate()?,
            }
            if net == self.net {
                self.enhancer_train.validate(&arch)?;
            }
        }
        if self.aux_net.n_speakers != self.corpus.n_speakers {
            return Err(Error::Config(format!(
                "aux_net.n_speakers = {} but the corpus has {} speakers",
                self.aux_net.n_speakers, self.corpus.n_speakers
            )));
        }
        let bands = self.frontend.n_mels;
        if self.aux_net.n_bands != bands || self.can.n_bands != bands || self.edn.n_bands != bands {
            return Err(Error::Config(format!("networks must take the {bands} front-end bands")));
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be positive".into()));
        }
        Ok(())
    }

    pub fn arch(&self, net: NetKind) -> EnhancerConfig {
        match net {
            NetKind::Can => EnhancerConfig::Can(self.can.clone()),
            NetKind::Edn => EnhancerConfig::Edn(self.edn.clone()),
        }
    }

    pub fn train_config(&self, loss: LossKind) -> EnhancerTrainConfig {
        EnhancerTrainConfig { loss, ..self.enhancer_train.clone() }
    }

    pub fn paths(&self) -> RunPaths {
        RunPaths { root: self.out.clone() }
    }

    /// The test grid the corpus is configured to produce.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        for kind in NoiseKind::ALL.iter().filter(|k| self.corpus.test_noise_kinds.contains(k)) {
            for &snr_db in &self.corpus.test_snrs {
                out.push(Condition { kind: *kind, snr_db });
            }
        }
        out
    }
}

/// File layout under the run's output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn manifest(&self) -> PathBuf {
        self.corpus().join(MANIFEST_FILE)
    }

    pub fn aux_dir(&self) -> PathBuf {
        self.root.join("aux")
    }

    pub fn aux_checkpoint(&self) -> PathBuf {
        self.aux_dir().join("aux.ckpt")
    }

    pub fn enhancer_dir(&self, arch: &EnhancerConfig, loss: LossKind) -> PathBuf {
        self.root.join(format!("enhancer-{}-{}", arch.name(), loss.name().replace('+', "-")))
    }

    pub fn enhancer_checkpoint(&self, arch: &EnhancerConfig, loss: LossKind) -> PathBuf {
        self.enhancer_dir(arch, loss).join("enhancer.ckpt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn frontend(cfg: &RunConfig) -> Result<FrontEnd> {
    FrontEnd::new(cfg.frontend)
}

/// Generate (or verify) the corpus under `<out>/corpus`.
pub fn gen_corpus(cfg: &RunConfig) -> Result<(Manifest, CorpusSummary)> {
    let manifest = build_parallel_corpus(&cfg.corpus, cfg.seed, &cfg.paths().corpus())?;
    let summary = CorpusSummary::of(&cfg.corpus, &manifest);
    Ok((manifest, summary))
}

pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let m = Manifest::read(&cfg.paths().manifest())?;
    m.validate()?;
    Ok(m)
}

/// Train the auxiliary network and write `<out>/aux/aux.ckpt` plus its log.
pub fn run_train_aux<S: Scalar>(
    cfg: &RunConfig,
    on_epoch: impl FnMut(&AuxEpochLog),
) -> Result<(PathBuf, AuxModel<S>, AuxTrainReport)> {
    let paths = cfg.paths();
    let manifest = load_manifest(cfg)?;
    let fe = frontend(cfg)?;
    let root = paths.corpus();
    let index = speaker_index(&manifest);
    let train = labeled_clean::<S>(&manifest, &root, Split::Train, &fe, &index)?;
    let val = labeled_clean::<S>(&manifest, &root, Split::Val, &fe, &index)?;
    let (model, report) = train_aux(&cfg.aux_net, &cfg.aux_train, &train, &val, cfg.seed, on_epoch)?;
    let meta = serde_json::json!({
        "seed": cfg.seed,
        "speakers": index.keys().collect::<Vec<_>>(),
        "val_acc": report.epochs.last().map(|e| e.val_acc),
    });
    let path = paths.aux_checkpoint();
    model.checkpoint(None, meta)?.write(&path)?;
    let mut log = String::new();
    for e in &report.epochs {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    write_text(&paths.aux_dir().join("aux_log.jsonl"), &log)?;
    Ok((path, model, report))
}

/// Load a frozen auxiliary network.
pub fn load_aux<S: Scalar>(path: &Path) -> Result<AuxModel<S>> {
    let mut m = AuxModel::from_checkpoint(&Checkpoint::read(path)?)?;
    m.store.freeze();
    Ok(m)
}

pub fn load_enhancer<S: Scalar>(path: &Path) -> Result<Enhancer<S>> {
    Enhancer::from_checkpoint(&Checkpoint::read(path)?)
}

/// Train an enhancer into `<out>/enhancer-<arch>-<loss>/`. The auxiliary
/// checkpoint file is hashed before and after and must not change.
pub fn run_train_enhancer<S: Scalar>(
    cfg: &RunConfig,
    arch: &EnhancerConfig,
    loss: LossKind,
    aux_checkpoint: Option<&Path>,
    on_step: impl FnMut(&StepLog),
) -> Result<(PathBuf, EnhancerRun<S>)> {
    let train_cfg = cfg.train_config(loss);
    if loss.needs_aux() && aux_checkpoint.is_none() {
        return Err(Error::Config(format!("loss {loss} needs an auxiliary checkpoint")));
    }
    let aux_hash = aux_checkpoint.map(file_sha256).transpose()?;
    let aux = match aux_checkpoint {
        Some(p) if loss.needs_aux() => Some(load_aux::<S>(p)?),
        _ => None,
    };
    let paths = cfg.paths();
    let manifest = load_manifest(cfg)?;
    let fe = frontend(cfg)?;
    let train = parallel_pairs::<S>(&manifest, &paths.corpus(), Split::Train, &fe)?;
    let val = parallel_pairs::<S>(&manifest, &paths.corpus(), Split::Val, &fe)?;
    let dir = paths.enhancer_dir(arch, loss);
    let run = train_enhancer(arch, &train_cfg, aux.as_ref(), &train, &val, cfg.seed, Some(&dir), on_step)?;
    let meta = serde_json::json!({ "seed": cfg.seed, "loss": loss, "epochs": train_cfg.epochs });
    let path = paths.enhancer_checkpoint(arch, loss);
    run.enhancer.checkpoint(None, meta)?.write(&path)?;
    if let (Some(p), Some(before)) = (aux_checkpoint, aux_hash) {
        if file_sha256(p)? != before {
            return Err(Error::Invalid(format!("{} changed during enhancer training", p.display())));
        }
    }
    Ok((path, run))
}

/// Enhance a WAV file or every row of a manifest into DFLFEAT files under
/// `out_dir`. Each file records the SHA-256 of the enhancer checkpoint.
pub fn enhance_to_files<S: Scalar>(
    frontend_cfg: FrontEndConfig,
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let enh = load_enhancer::<S>(checkpoint)?;
    if enh.config().n_bands() != frontend_cfg.n_mels {
        return Err(Error::Config(format!(
            "{} expects {} bands but the front end produces {}",
            checkpoint.display(),
            enh.config().n_bands(),
            frontend_cfg.n_mels
        )));
    }
    let mut provenance = [0u8; 32];
    hex::decode_to_slice(file_sha256(checkpoint)?, &mut provenance).map_err(|e| Error::Invalid(e.to_string()))?;
    let fe = FrontEnd::new(frontend_cfg)?;
    let jobs: Vec<(String, PathBuf)> = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
        vec![(stem, input.to_path_buf())]
    } else {
        let m = Manifest::read(input)?;
        let root = input.parent().unwrap_or(Path::new("."));
        m.rows.iter().map(|r| (r.utt_id.clone(), root.join(&r.path))).collect()
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(jobs.len());
    for (name, wav) in jobs {
        let feats = fe.features::<S>(&read_wav(&wav)?)?;
        let enhanced = enh.enhance(&feats)?;
        let path = out_dir.join(format!("{name}.feat"));
        FeatureFile::new(&enhanced, Some(provenance)).write(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Score the baseline and each named enhancer on the test grid. Writes
/// `<out>/eval/<name>.txt` and `.jsonl` per report; a baseline-only report
/// is produced when `enhancers` is empty.
pub fn run_evaluate<S: Scalar>(
    cfg: &RunConfig,
    aux_checkpoint: &Path,
    enhancers: &[(String, PathBuf)],
) -> Result<(SystemScores, Vec<EvalReport>)> {
    let aux = load_aux::<S>(aux_checkpoint)?;
    let manifest = load_manifest(cfg)?;
    let fe = frontend(cfg)?;
    let set = TestSet::<S>::load(&manifest, &cfg.paths().corpus(), &fe, &cfg.conditions())?;
    let trials = set.trials(&cfg.trials, cfg.seed)?;
    let baseline = eval_system("none", &aux, None, &set, &trials, cfg.eval_batch)?;
    let dir = cfg.paths().eval_dir();
    let mut reports = Vec::new();
    let mut emit = |name: &str, report: EvalReport| -> Result<()> {
        write_text(&dir.join(format!("{name}.txt")), &report.to_text())?;
        write_text(&dir.join(format!("{name}.jsonl")), &report.to_json_lines()?)?;
        reports.push(report);
        Ok(())
    };
    if enhancers.is_empty() {
        emit("none", EvalReport::build(&baseline, None, cfg.dcf))?;
    }
    for (name, path) in enhancers {
        let enh = load_enhancer::<S>(path)?;
        let scores = eval_system(name, &aux, Some(&enh), &set, &trials, cfg.eval_batch)?;
        emit(name, EvalReport::build(&baseline, Some(&scores), cfg.dcf))?;
    }
    Ok((baseline, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        }
        assert_eq!(RunConfig::desk().conditions().len(), 15);
    }

    #[test]
    fn unknown_keys_and_short_segments_are_rejected() {
        let text = RunConfig::desk().to_toml().unwrap();
        assert!(RunConfig::from_toml(&format!("bogus = 1\n{text}")).is_err());
        assert!(RunConfig::from_toml(&format!("{text}\nbogus = 1\n")).is_err());
        let minimal = "seed = 3\nout = \"x\"\nprecision = \"f64\"\neval_batch = 8\nnet = \"edn\"\n[corpus]\n[aux_net]\n[aux_train]\n[can]\n[edn]\n[enhancer_train]\n";
        let cfg = RunConfig::from_toml(minimal).unwrap();
        assert_eq!(cfg.arch(cfg.net).name(), "edn");
        assert_eq!(cfg.precision, Precision::F64);
        let mut cfg = RunConfig::desk();
        cfg.enhancer_train.segment_frames = 40;
        assert!(cfg.validate().is_err());
    }
}
