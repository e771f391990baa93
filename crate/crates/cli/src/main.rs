//! `longsv`: the longitudinal speaker verification pipeline as subcommands.
//!
//! Every stage reads and writes plain files so experiments can be cached and
//! resumed. All randomness derives from `--seed`.

mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use longsv::augment::{augment_pipeline, load_pool, AugmentConfig, AugmentError};
use longsv::dsp::{log_mel_fbank, read_wav, write_fbank, write_wav, DspError};
use longsv::manifest::{Manifest, ManifestError};
use longsv::model::{AdapterKind, ModelError};
use longsv::saa::{saa_corpus, DenoiseConfig, SaaError, VocoderBackend};
use longsv::synth::{gen_corpus, CorpusLayout, SynthError};
use longsv::trainer::{
    embed_manifest, finetune, load_checkpoint, save_checkpoint, train, FinetuneScope, Pools, TrainError,
};
use longsv::trials::{
    build_trials, evaluate, read_embeddings, read_labeled_scores, read_scores, read_trials, report,
    score_trials, write_embeddings, write_scores, write_trials, ReportRow, TrialsError,
};
use longsv::{derive_seed, seeded_rng};
use thiserror::Error;

use config::{parse_set_name, Config, ConfigError};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("augment: {0}")]
    Augment(#[from] AugmentError),
    #[error("saa: {0}")]
    Saa(#[from] SaaError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("trials: {0}")]
    Trials(#[from] TrialsError),
    #[error("{0}")]
    Invalid(String),
    #[error("selftest failed: {0}")]
    Selftest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(name = "longsv", version, about = "Longitudinal speaker verification pipeline")]
struct Cli {
    /// INI configuration file; absent keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice of the invoked stage.
    #[arg(long, global = true, default_value_t = 0, value_name = "U64")]
    seed: u64,
    /// Worker threads for file-parallel stages.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PoolArgs {
    /// Directory of noise WAVs [default: <manifest dir>/noise].
    #[arg(long, value_name = "DIR")]
    noise_dir: Option<PathBuf>,
    /// Directory of room impulse response WAVs [default: <manifest dir>/rir].
    #[arg(long, value_name = "DIR")]
    rir_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic longitudinal corpus with noise and RIR pools.
    GenCorpus {
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Extract log-mel filterbank features of one WAV into an FBNK file.
    Fbank {
        /// Input WAV.
        #[arg(long = "in", value_name = "WAV")]
        input: PathBuf,
        /// FBNK file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Run the augmentation chain on one WAV.
    Augment {
        /// Input WAV.
        #[arg(long = "in", value_name = "WAV")]
        input: PathBuf,
        /// Augmented WAV to write.
        #[arg(long, value_name = "WAV")]
        out: PathBuf,
        /// Directory of noise WAVs, needed when the noise stage is enabled.
        #[arg(long, value_name = "DIR")]
        noise_dir: Option<PathBuf>,
        /// Directory of RIR WAVs, needed when the rir stage is enabled.
        #[arg(long, value_name = "DIR")]
        rir_dir: Option<PathBuf>,
    },
    /// Vocoder-roundtrip every utterance and write the doubled manifest to
    /// <OUT>/manifest.csv.
    Saa {
        /// Corpus manifest CSV.
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        /// Output directory for synthetic WAVs and the doubled manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// griffin_lim, griffin_lim:<iterations> or external:<command>
        /// [default: from config].
        #[arg(long, value_name = "BACKEND")]
        backend: Option<VocoderBackend>,
    },
    /// Train the baseline model from scratch.
    Train {
        /// Corpus manifest CSV.
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        /// Checkpoint to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        pools: PoolArgs,
    },
    /// Fine-tune a checkpoint, optionally inserting an adapter.
    Finetune {
        /// Base checkpoint.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Corpus manifest CSV.
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        /// Checkpoint to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// none, fta or ra [default: from config].
        #[arg(long)]
        adapter: Option<AdapterKind>,
        /// joint or adapter_only [default: from config].
        #[arg(long)]
        scope: Option<FinetuneScope>,
        /// The manifest includes SAA copies (as written by `saa`).
        #[arg(long)]
        saa: bool,
        #[command(flatten)]
        pools: PoolArgs,
    },
    /// Embed every utterance of a manifest.
    Embed {
        /// Checkpoint to embed with.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Corpus manifest CSV.
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        /// Embedding file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Build trial lists, one <OUT>/<set>.txt per evaluation set.
    Trials {
        /// Corpus manifest CSV.
        #[arg(long, value_name = "CSV")]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Comma-separated sets such as G1-G2,G2-G2 [default: from config].
        #[arg(long, value_name = "SETS")]
        sets: Option<String>,
    },
    /// Cosine-score a trial list, or every list of a directory.
    Score {
        /// Embedding file written by `embed`.
        #[arg(long, value_name = "PATH")]
        embeddings: PathBuf,
        /// Trial file, or a directory of them.
        #[arg(long, value_name = "PATH")]
        trials: PathBuf,
        /// Score file, or a directory when --trials is one.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Print EER and minDCF of a score file.
    Eval {
        /// Labeled score file.
        #[arg(long, value_name = "PATH")]
        scores: PathBuf,
        /// Take trial order and labels from this list instead of the score file.
        #[arg(long, value_name = "PATH")]
        trials: Option<PathBuf>,
    },
    /// EER grid of several systems as <OUT>.csv and <OUT>.txt.
    Report {
        /// NAME=DIR, where DIR holds one <set>.txt score file per trial list.
        #[arg(long = "system", value_name = "NAME=DIR", required = true)]
        systems: Vec<String>,
        /// Directory of trial lists defining the sets.
        #[arg(long, value_name = "DIR")]
        trials: PathBuf,
        /// Output path prefix; `.csv` and `.txt` are appended.
        #[arg(long, value_name = "PREFIX")]
        out: PathBuf,
    },
    /// Gradient checks, EER oracle and adapter identity.
    Selftest,
}

impl Command {
    /// Input paths that must exist before the stage starts.
    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::GenCorpus { .. } | Command::Selftest => vec![],
            Command::Fbank { input, .. } | Command::Augment { input, .. } => vec![input],
            Command::Saa { manifest, .. } | Command::Train { manifest, .. } | Command::Trials { manifest, .. } => {
                vec![manifest]
            }
            Command::Finetune {
                checkpoint, manifest, ..
            }
            | Command::Embed {
                checkpoint, manifest, ..
            } => vec![checkpoint, manifest],
            Command::Score { embeddings, trials, .. } => vec![embeddings, trials],
            Command::Eval { scores, trials } => std::iter::once(scores.as_path()).chain(trials.as_deref()).collect(),
            Command::Report { trials, .. } => vec![trials],
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(CliError::Invalid("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed;
    for path in cli.command.inputs() {
        if !path.exists() {
            return Err(CliError::Io {
                path: path.to_path_buf(),
                source: std::io::ErrorKind::NotFound.into(),
            });
        }
    }
    match cli.command {
        Command::GenCorpus { out } => {
            let spec = longsv::synth::CorpusSpec {
                seed,
                ..cfg.corpus.clone()
            };
            let m = gen_corpus(&spec, &out)?;
            let layout = CorpusLayout::new(&out);
            println!("{} utterances -> {}", m.len(), layout.manifest.display());
        }
        Command::Fbank { input, out } => {
            let wave = read_wav(&input)?;
            let mel = cfg.dsp.mel_matrix(wave.sample_rate)?;
            let f = log_mel_fbank(&wave, &cfg.dsp.frame, &mel)?;
            write_fbank(&out, &f)?;
            println!("{} frames x {} mels", f.n_frames, f.n_mels);
        }
        Command::Augment {
            input,
            out,
            noise_dir,
            rir_dir,
        } => {
            let wave = read_wav(&input)?;
            let noise = stage_pool(cfg.augment.noise.enabled, noise_dir.as_deref())?;
            let rir = stage_pool(cfg.augment.rir.enabled, rir_dir.as_deref())?;
            let out_wave = augment_pipeline(&wave, &cfg.augment, &noise, &rir, &mut seeded_rng(seed))?;
            write_wav(&out, &out_wave)?;
        }
        Command::Saa {
            manifest,
            out,
            backend,
        } => {
            let m = Manifest::read(&manifest)?;
            let first = m
                .records
                .first()
                .ok_or_else(|| CliError::Invalid(format!("{} is empty", manifest.display())))?;
            let rate = read_wav(&first.path)?.sample_rate;
            let backend = backend.unwrap_or_else(|| cfg.saa.backend.clone());
            let mel = cfg.dsp.mel_matrix(rate)?;
            let denoise = DenoiseConfig::for_backend(cfg.saa.denoise, &backend, &cfg.dsp.frame, &mel)?;
            let doubled = saa_corpus(&m, &backend, &denoise, &cfg.dsp.frame, &mel, &out)?;
            let path = out.join("manifest.csv");
            doubled.write(&path)?;
            println!("{} utterances -> {}", doubled.len(), path.display());
        }
        Command::Train { manifest, out, pools } => {
            let m = Manifest::read(&manifest)?;
            let pools = load_pools(&cfg.augment, &pools, &manifest)?;
            let tc = cfg.train_config(seed, AdapterKind::None);
            let ckpt = train(&m, &tc, &pools)?;
            save_checkpoint(&ckpt, &out)?;
            print_losses(&ckpt.loss_history);
        }
        Command::Finetune {
            checkpoint,
            manifest,
            out,
            adapter,
            scope,
            saa,
            pools,
        } => {
            let base = load_checkpoint(&checkpoint)?;
            let m = Manifest::read(&manifest)?;
            let pools = load_pools(&cfg.augment, &pools, &manifest)?;
            let mut tc = cfg.train_config(seed, adapter.unwrap_or(cfg.train.adapter));
            tc.finetune_scope = scope.unwrap_or(cfg.train.finetune_scope);
            tc.saa_enabled = saa;
            let ckpt = finetune(&base, &m, &tc, &pools)?;
            save_checkpoint(&ckpt, &out)?;
            print_losses(&ckpt.loss_history);
        }
        Command::Embed {
            checkpoint,
            manifest,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let m = Manifest::read(&manifest)?;
            let emb = embed_manifest(&ckpt, &m, &cfg.dsp)?;
            write_embeddings(&out, &emb)?;
            println!("{} embeddings -> {}", emb.len(), out.display());
        }
        Command::Trials { manifest, out, sets } => {
            let m = Manifest::read(&manifest)?;
            let sets = match sets {
                Some(s) => s
                    .split(',')
                    .map(|n| parse_set_name(n).ok_or_else(|| CliError::Invalid(format!("bad set name '{n}'"))))
                    .collect::<Result<Vec<_>>>()?,
                None => cfg.trials.sets.clone(),
            };
            std::fs::create_dir_all(&out).map_err(io_err(&out))?;
            let t = &cfg.trials;
            for (e, g) in sets {
                let mut rng = seeded_rng(derive_seed(seed, &format!("trials/G{e}-G{g}")));
                let list = build_trials(&m, e, g, t.n_pos, t.n_neg, t.negatives, &mut rng)?;
                write_trials(out.join(format!("{}.txt", list.name)), &list)?;
                println!("{} {} targets {} nontargets", list.name, list.n_targets(), list.n_nontargets());
                if !list.shortfall.is_empty() {
                    eprintln!(
                        "warning: {} short by {} targets and {} nontargets",
                        list.name, list.shortfall.targets, list.shortfall.nontargets
                    );
                }
            }
        }
        Command::Score { embeddings, trials, out } => {
            let emb = read_embeddings(&embeddings)?;
            if trials.is_dir() {
                std::fs::create_dir_all(&out).map_err(io_err(&out))?;
                for path in trial_files(&trials)? {
                    let list = read_trials(&path)?;
                    let set = score_trials(&list, &emb)?;
                    write_scores(out.join(format!("{}.txt", list.name)), &set)?;
                }
            } else {
                let set = score_trials(&read_trials(&trials)?, &emb)?;
                write_scores(&out, &set)?;
            }
        }
        Command::Eval { scores, trials } => {
            let set = match trials {
                Some(t) => read_scores(&scores, &read_trials(&t)?)?,
                None => read_labeled_scores(&scores)?,
            };
            let r = evaluate(&set)?;
            println!("EER {:.2}", r.eer);
            println!("minDCF {:.4}", r.min_dcf);
            println!("threshold {:.6}", r.eer_threshold);
            println!("trials {} targets {} nontargets", r.n_target, r.n_nontarget);
        }
        Command::Report { systems, trials, out } => {
            let lists = trial_files(&trials)?
                .iter()
                .map(read_trials)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mut rows = Vec::new();
            for spec in &systems {
                let (name, dir) = spec
                    .split_once('=')
                    .ok_or_else(|| CliError::Invalid(format!("--system expects NAME=DIR, got '{spec}'")))?;
                let mut results = Vec::new();
                for list in &lists {
                    let set = read_scores(Path::new(dir).join(format!("{}.txt", list.name)), list)?;
                    results.push((list.name.clone(), evaluate(&set)?));
                }
                rows.push(ReportRow {
                    system: name.to_string(),
                    results,
                });
            }
            let rep = report(&rows);
            let csv = with_suffix(&out, ".csv");
            let txt = with_suffix(&out, ".txt");
            if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            std::fs::write(&csv, &rep.csv).map_err(io_err(&csv))?;
            std::fs::write(&txt, &rep.text).map_err(io_err(&txt))?;
            print!("{}", rep.text);
        }
        Command::Selftest => selftest::run(seed, &cfg)?,
    }
    Ok(())
}

fn print_losses(history: &[f64]) {
    for (i, l) in history.iter().enumerate() {
        println!("epoch {} loss {l:.6}", i + 1);
    }
}

/// Pool of a stage; empty when the stage is disabled.
fn stage_pool(enabled: bool, dir: Option<&Path>) -> Result<Vec<longsv::Waveform>> {
    match (enabled, dir) {
        (false, _) => Ok(Vec::new()),
        (true, Some(d)) => Ok(load_pool(d)?),
        (true, None) => Ok(Vec::new()),
    }
}

fn load_pools(cfg: &AugmentConfig, args: &PoolArgs, manifest: &Path) -> Result<Pools> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let noise_dir = args.noise_dir.clone().unwrap_or_else(|| root.join("noise"));
    let rir_dir = args.rir_dir.clone().unwrap_or_else(|| root.join("rir"));
    Ok(Pools {
        noise: stage_pool(cfg.noise.enabled, Some(&noise_dir))?,
        rir: stage_pool(cfg.rir.enabled, Some(&rir_dir))?,
    })
}

/// `.txt` files of a directory in sorted order.
fn trial_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Invalid(format!("no trial lists in {}", dir.display())));
    }
    Ok(files)
}
