//! INI-style configuration: `[section]` headers, `key = value` lines and `#`
//! comments. Absent keys keep their defaults; unknown sections and keys are
//! errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use longsv::augment::{AugmentConfig, Stage};
use longsv::model::{AdapterKind, LossKind, ModelConfig};
use longsv::saa::VocoderBackend;
use longsv::synth::CorpusSpec;
use longsv::trainer::{FinetuneScope, TrainConfig};
use longsv::trials::NegativeGrade;
use longsv::{FbankConfig, WindowKind};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown key '{key}' in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: invalid value '{value}' for {key}: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        msg: String,
    },
    #[error("[{section}]: {msg}")]
    Invalid { section: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

pub const SECTIONS: [&str; 7] = ["dsp", "augment", "saa", "model", "train", "trials", "corpus"];

#[derive(Debug, Clone, PartialEq)]
pub struct SaaSettings {
    pub backend: VocoderBackend,
    pub denoise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub crop_frames: usize,
    pub adapter: AdapterKind,
    pub finetune_scope: FinetuneScope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSettings {
    pub n_pos: usize,
    pub n_neg: usize,
    pub negatives: NegativeGrade,
    /// (enroll grade, test grade) pairs.
    pub sets: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub dsp: FbankConfig,
    pub augment: AugmentConfig,
    pub saa: SaaSettings,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub trials: TrialSettings,
    pub corpus: CorpusSpec,
}

/// The six inter-year pairs of four grades.
pub const INTER_YEAR_SETS: [(u32, u32); 6] = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dsp: FbankConfig::default(),
            augment: AugmentConfig::default(),
            saa: SaaSettings {
                backend: VocoderBackend::default(),
                denoise: 0.005,
            },
            model: ModelConfig::default(),
            train: TrainSettings {
                epochs: t.epochs,
                batch_size: t.batch_size,
                lr: t.lr,
                crop_frames: t.crop_frames,
                adapter: t.adapter,
                finetune_scope: t.finetune_scope,
            },
            trials: TrialSettings {
                n_pos: 1000,
                n_neg: 1000,
                negatives: NegativeGrade::Test,
                sets: INTER_YEAR_SETS.to_vec(),
            },
            corpus: CorpusSpec::default(),
        }
    }
}

pub fn parse_set_name(s: &str) -> Option<(u32, u32)> {
    let (e, t) = s.trim().split_once('-')?;
    Some((e.strip_prefix('G')?.parse().ok()?, t.strip_prefix('G')?.parse().ok()?))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn finite(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err("must be finite".into())
    }
}

enum Apply {
    UnknownKey,
    Invalid(String),
}

impl From<String> for Apply {
    fn from(s: String) -> Self {
        Apply::Invalid(s)
    }
}

fn stage_key<'a>(a: &'a mut AugmentConfig, key: &str) -> Option<(&'a mut Stage, bool)> {
    let (name, prob) = match key.strip_suffix("_prob") {
        Some(n) => (n, true),
        None => (key, false),
    };
    let stage = match name {
        "noise" => &mut a.noise,
        "rir" => &mut a.rir,
        "drop_freq" => &mut a.drop_freq,
        "drop_chunk" => &mut a.drop_chunk,
        _ => return None,
    };
    Some((stage, prob))
}

impl Config {
    fn apply(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), Apply> {
        match (section, key) {
            ("dsp", "win_length") => self.dsp.frame.win_length = num(v)?,
            ("dsp", "hop_length") => self.dsp.frame.hop_length = num(v)?,
            ("dsp", "fft_size") => self.dsp.frame.fft_size = num(v)?,
            ("dsp", "window") => self.dsp.frame.window = WindowKind::from_str(v)?,
            ("dsp", "n_mels") => {
                self.dsp.n_mels = num(v)?;
                self.model.n_mels = self.dsp.n_mels;
            }
            ("dsp", "fmin") => self.dsp.fmin = finite(v)?,
            ("dsp", "fmax") => self.dsp.fmax = Some(finite(v)?),

            ("augment", "snr_min") => self.augment.snr_db_range.0 = finite(v)?,
            ("augment", "snr_max") => self.augment.snr_db_range.1 = finite(v)?,
            ("augment", "freq_drop_count_min") => self.augment.freq_drop_count_range.0 = num(v)?,
            ("augment", "freq_drop_count_max") => self.augment.freq_drop_count_range.1 = num(v)?,
            ("augment", "freq_drop_width") => self.augment.freq_drop_width = finite(v)?,
            ("augment", "chunk_length_min") => self.augment.chunk_length_range.0 = num(v)?,
            ("augment", "chunk_length_max") => self.augment.chunk_length_range.1 = num(v)?,
            ("augment", "chunk_count_min") => self.augment.chunk_count_range.0 = num(v)?,
            ("augment", "chunk_count_max") => self.augment.chunk_count_range.1 = num(v)?,
            ("augment", k) => {
                let (stage, prob) = stage_key(&mut self.augment, k).ok_or(Apply::UnknownKey)?;
                if prob {
                    stage.probability = finite(v)?;
                } else {
                    stage.enabled = parse_bool(v)?;
                }
            }

            ("saa", "backend") => self.saa.backend = VocoderBackend::from_str(v)?,
            ("saa", "denoise") => self.saa.denoise = finite(v)?,

            ("model", "channels") => self.model.channels = num(v)?,
            ("model", "attn_dim") => self.model.attn_dim = num(v)?,
            ("model", "embed_dim") => self.model.embed_dim = num(v)?,
            ("model", "fta_channels") => self.model.fta_channels = num(v)?,
            ("model", "fta_kernel") => self.model.fta_kernel = num(v)?,
            ("model", "loss") => self.model.loss = LossKind::from_str(v)?,
            ("model", "aam_margin") => match &mut self.model.loss {
                LossKind::Aam { margin, .. } => *margin = finite(v)?,
                LossKind::SoftmaxCe => return Err(Apply::Invalid("set loss = aam first".into())),
            },
            ("model", "aam_scale") => match &mut self.model.loss {
                LossKind::Aam { scale, .. } => *scale = finite(v)?,
                LossKind::SoftmaxCe => return Err(Apply::Invalid("set loss = aam first".into())),
            },

            ("train", "epochs") => self.train.epochs = num(v)?,
            ("train", "batch_size") => self.train.batch_size = num(v)?,
            ("train", "lr") => self.train.lr = finite(v)?,
            ("train", "crop_frames") => self.train.crop_frames = num(v)?,
            ("train", "adapter") => self.train.adapter = AdapterKind::from_str(v)?,
            ("train", "finetune_scope") => self.train.finetune_scope = FinetuneScope::from_str(v)?,

            ("trials", "n_pos") => self.trials.n_pos = num(v)?,
            ("trials", "n_neg") => self.trials.n_neg = num(v)?,
            ("trials", "negatives") => {
                self.trials.negatives = match v {
                    "test" => NegativeGrade::Test,
                    "enroll" => NegativeGrade::Enroll,
                    _ => return Err(Apply::Invalid("expected test or enroll".into())),
                }
            }
            ("trials", "sets") => {
                self.trials.sets = v
                    .split(',')
                    .map(|s| parse_set_name(s).ok_or_else(|| format!("bad set name '{}'", s.trim())))
                    .collect::<std::result::Result<_, _>>()?
            }

            ("corpus", "n_speakers") => self.corpus.n_speakers = num(v)?,
            ("corpus", "grades") => self.corpus.grades = num(v)?,
            ("corpus", "utts_per_grade") => self.corpus.utts_per_grade = num(v)?,
            ("corpus", "duration_s") => self.corpus.duration_s = finite(v)?,
            ("corpus", "eval_speakers") => self.corpus.eval_speakers = num(v)?,
            _ => return Err(Apply::UnknownKey),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Parse {
                        line,
                        msg: "unterminated section header".into(),
                    })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Parse {
                        line,
                        msg: format!("unknown section [{name}]"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                msg: "expected 'key = value'".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| ConfigError::Parse {
                line,
                msg: "key outside of any [section]".into(),
            })?;
            match cfg.apply(sec, key, value) {
                Ok(()) => {}
                Err(Apply::UnknownKey) => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        section: sec.to_string(),
                        key: key.to_string(),
                    })
                }
                Err(Apply::Invalid(msg)) => {
                    return Err(ConfigError::InvalidValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                        msg,
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Cross-field checks against each module's own invariants.
    pub fn validate(&self) -> Result<()> {
        let invalid = |section, msg: String| ConfigError::Invalid { section, msg };
        self.dsp
            .mel_matrix(longsv::dsp::STANDARD_RATE)
            .map_err(|e| invalid("dsp", e.to_string()))?;
        self.augment.validate().map_err(|e| invalid("augment", e.to_string()))?;
        if !(self.saa.denoise >= 0.0) {
            return Err(invalid("saa", "denoise must be non-negative".into()));
        }
        self.model.validate().map_err(|e| invalid("model", e.to_string()))?;
        self.train_config(0, AdapterKind::None)
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        if self.trials.sets.is_empty() {
            return Err(invalid("trials", "no evaluation sets".into()));
        }
        self.corpus.validate().map_err(|e| invalid("corpus", e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64, adapter: AdapterKind) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            crop_frames: self.train.crop_frames,
            seed,
            adapter,
            finetune_scope: self.train.finetune_scope,
            saa_enabled: false,
            augment: self.augment.clone(),
            model: self.model,
            fbank: self.dsp,
        }
    }
}
