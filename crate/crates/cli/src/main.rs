use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dfl_core::eval::EvalReport;
use dfl_core::loss::LossKind;
use dfl_core::pipeline::{self, NetKind, Precision, RunConfig};
use dfl_core::train::{AuxEpochLog, StepLog};
use dfl_core::{Error, Scalar};

#[derive(Parser)]
#[command(name = "dfl", version, about = "Deep-feature-loss enhancement for speaker verification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no --config is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Numeric precision, f32 or f64.
    #[arg(long, global = true)]
    precision: Option<Precision>,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the effective configuration as TOML.
    Config,
    /// Synthesize the parallel corpus and its manifest.
    GenCorpus,
    /// Train the auxiliary speaker network.
    TrainAux,
    /// Train an enhancement network.
    TrainEnhancer {
        #[arg(long, default_value = "dfl")]
        loss: LossKind,
        #[arg(long)]
        net: Option<NetKind>,
        /// Needed for dfl and dfl+fl.
        #[arg(long)]
        aux_checkpoint: Option<PathBuf>,
    },
    /// Write enhanced feature files for a WAV file or every row of a manifest.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A .wav file or a manifest.tsv.
        input: PathBuf,
        /// Destination directory; defaults to <out>/enhanced.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Score the test grid without and with enhancement.
    Evaluate {
        #[arg(long)]
        aux_checkpoint: Option<PathBuf>,
        /// Enhancer checkpoints as NAME=PATH; omit for a baseline-only table.
        #[arg(long = "enhancer")]
        enhancers: Vec<String>,
    },
    /// gen-corpus, train-aux, train-enhancer per loss, then evaluate.
    Run {
        #[arg(long, value_delimiter = ',', default_value = "fl,dfl")]
        losses: Vec<LossKind>,
        #[arg(long)]
        net: Option<NetKind>,
    },
}

fn load_config(g: &Global) -> dfl_core::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::preset(&g.preset)?,
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(p) = g.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Progress {
    quiet: bool,
    start: Instant,
}

impl Progress {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{:7.1}s] {}", self.start.elapsed().as_secs_f64(), msg.as_ref());
        }
    }

    fn aux_epoch(&self, e: &AuxEpochLog) {
        self.say(format!(
            "aux epoch {:3}  loss {:.4}  acc {:.3}  val loss {:.4}  val acc {:.3}  lr {:.2e}",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.lr
        ));
    }

    fn step(&self, s: &StepLog) {
        if let Some(v) = s.val_loss {
            self.say(format!("enhancer epoch {:2} step {:5}  val loss {:.4}", s.epoch, s.step, v));
        }
    }
}

fn write_config(cfg: &RunConfig) -> dfl_core::Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn gen_corpus(cfg: &RunConfig, p: &Progress) -> dfl_core::Result<()> {
    write_config(cfg)?;
    let (_, s) = pipeline::gen_corpus(cfg)?;
    p.say(format!(
        "corpus: {} speakers, {:.2} h clean, {} train / {} val / {} test rows, {} test conditions",
        s.speakers, s.clean_hours, s.train_rows, s.val_rows, s.test_rows, s.test_conditions
    ));
    println!("{}", cfg.paths().manifest().display());
    Ok(())
}

fn train_aux<S: Scalar>(cfg: &RunConfig, p: &Progress) -> dfl_core::Result<PathBuf> {
    let (path, _, report) = pipeline::run_train_aux::<S>(cfg, |e| p.aux_epoch(e))?;
    if let Some(last) = report.epochs.last() {
        p.say(format!("aux validation accuracy {:.3}", last.val_acc));
    }
    println!("{}", path.display());
    Ok(path)
}

fn train_enhancer<S: Scalar>(
    cfg: &RunConfig,
    p: &Progress,
    loss: LossKind,
    net: NetKind,
    aux: Option<&Path>,
) -> dfl_core::Result<PathBuf> {
    let arch = cfg.arch(net);
    p.say(format!("training {} with {loss}", arch.name()));
    let (path, run) = pipeline::run_train_enhancer::<S>(cfg, &arch, loss, aux, |s| p.step(s))?;
    if let Some(e) = run.resumed_from {
        p.say(format!("resumed after epoch {e}"));
    }
    println!("{}", path.display());
    Ok(path)
}

fn evaluate<S: Scalar>(cfg: &RunConfig, aux: &Path, enhancers: &[(String, PathBuf)]) -> dfl_core::Result<bool> {
    let (_, reports) = pipeline::run_evaluate::<S>(cfg, aux, enhancers)?;
    for r in &reports {
        println!("{}", r.to_text());
    }
    Ok(reports.iter().all(EvalReport::complete))
}

fn parse_enhancers(specs: &[String]) -> dfl_core::Result<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, path)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
            _ => Err(Error::Config(format!("--enhancer expects NAME=PATH, got {s:?}"))),
        })
        .collect()
}

fn dispatch<S: Scalar>(cmd: Cmd, cfg: &RunConfig, p: &Progress) -> dfl_core::Result<bool> {
    let paths = cfg.paths();
    match cmd {
        Cmd::Config => print!("{}", cfg.to_toml()?),
        Cmd::GenCorpus => gen_corpus(cfg, p)?,
        Cmd::TrainAux => {
            train_aux::<S>(cfg, p)?;
        }
        Cmd::TrainEnhancer { loss, net, aux_checkpoint } => {
            train_enhancer::<S>(cfg, p, loss, net.unwrap_or(cfg.net), aux_checkpoint.as_deref())?;
        }
        Cmd::Enhance { checkpoint, input, dest } => {
            let dest = dest.unwrap_or_else(|| paths.root.join("enhanced"));
            let files = pipeline::enhance_to_files::<S>(cfg.frontend, &checkpoint, &input, &dest)?;
            p.say(format!("wrote {} feature files to {}", files.len(), dest.display()));
        }
        Cmd::Evaluate { aux_checkpoint, enhancers } => {
            let aux = aux_checkpoint.unwrap_or_else(|| paths.aux_checkpoint());
            return evaluate::<S>(cfg, &aux, &parse_enhancers(&enhancers)?);
        }
        Cmd::Run { losses, net } => {
            let net = net.unwrap_or(cfg.net);
            gen_corpus(cfg, p)?;
            let aux = train_aux::<S>(cfg, p)?;
            let mut enhancers = Vec::new();
            for loss in losses {
                let path = train_enhancer::<S>(cfg, p, loss, net, Some(&aux))?;
                enhancers.push((loss.name().to_string(), path));
            }
            let ok = evaluate::<S>(cfg, &aux, &enhancers)?;
            p.say("done");
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let p = Progress { quiet: cli.global.quiet, start: Instant::now() };
    if let Cmd::TrainEnhancer { loss, aux_checkpoint: None, .. } = &cli.cmd {
        if loss.needs_aux() {
            eprintln!("error: --loss {loss} needs --aux-checkpoint");
            return ExitCode::from(2);
        }
    }
    let result = load_config(&cli.global).and_then(|cfg| match cfg.precision {
        Precision::F32 => dispatch::<f32>(cli.cmd, &cfg, &p),
        Precision::F64 => dispatch::<f64>(cli.cmd, &cfg, &p),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some report cells could not be computed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
