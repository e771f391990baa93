//! Deterministic training and fine-tuning.
//!
//! Each epoch visits the manifest in a seeded order. Every utterance is read,
//! augmented with its own derived seed, turned into log-mel features and
//! randomly cropped; the per-sample gradients of a batch are summed in batch
//! order and averaged before one Adam step. Nothing depends on thread
//! scheduling, so a run is fully determined by manifest, config and seed.

mod checkpoint;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::{augment_pipeline, AugmentConfig, AugmentError};
use crate::dsp::{self, log_mel_fbank, DspError, FbankConfig, FeatureMatrix, MelMatrix, Waveform};
use crate::grad::{adam_step, AdamState, Graph, GradError, Tensor};
use crate::manifest::{Manifest, Record};
use crate::model::{
    adapter_of, backbone_embed, classify_loss, embed_features, init_backbone, init_head, insert_adapter,
    ModelConfig, ModelError,
};
use crate::rng::{derive_seed, seeded_rng};
use crate::trials::Embeddings;

pub use crate::model::AdapterKind;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainEcho, CKPT_MAGIC,
    CKPT_VERSION,
};

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("need at least 2 speakers, found {0}")]
    TooFewSpeakers(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: DspError },
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which parameters a fine-tune updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FinetuneScope {
    /// Everything.
    #[default]
    Joint,
    /// Adapter and classifier head; the backbone is frozen.
    AdapterOnly,
}

impl FinetuneScope {
    pub fn name(self) -> &'static str {
        match self {
            FinetuneScope::Joint => "joint",
            FinetuneScope::AdapterOnly => "adapter_only",
        }
    }
}

impl std::str::FromStr for FinetuneScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "joint" => Ok(FinetuneScope::Joint),
            "adapter_only" => Ok(FinetuneScope::AdapterOnly),
            other => Err(format!("unknown finetune scope '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub crop_frames: usize,
    pub seed: u64,
    /// Adapter inserted by [`finetune`]; ignored by [`train`].
    pub adapter: AdapterKind,
    pub finetune_scope: FinetuneScope,
    /// Declares that the manifest already holds SAA copies of its utterances.
    pub saa_enabled: bool,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub fbank: FbankConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 16,
            lr: 1e-3,
            crop_frames: 200,
            seed: 0,
            adapter: AdapterKind::None,
            finetune_scope: FinetuneScope::Joint,
            saa_enabled: false,
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            fbank: FbankConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.crop_frames < 5 {
            return bad(format!("crop_frames {} < 5", self.crop_frames));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.model.n_mels != self.fbank.n_mels {
            return Err(TrainError::DimMismatch(format!(
                "model expects {} mels, front end produces {}",
                self.model.n_mels, self.fbank.n_mels
            )));
        }
        self.model.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    fn echo(&self) -> TrainEcho {
        TrainEcho {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            crop_frames: self.crop_frames,
            seed: self.seed,
            adapter: self.adapter,
            scope: self.finetune_scope,
            saa_enabled: self.saa_enabled,
        }
    }
}

/// Noise and impulse-response pools for online augmentation.
#[derive(Debug, Clone, Default)]
pub struct Pools {
    pub noise: Vec<Waveform>,
    pub rir: Vec<Waveform>,
}

/// `len` consecutive frames starting at `start`, wrapping around the end.
fn wrap_crop(f: &FeatureMatrix, start: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * f.n_mels);
    for t in 0..len {
        out.extend_from_slice(f.row((start + t) % f.n_frames));
    }
    out
}

/// One training example: augmented, featurized and cropped.
fn prepare_example(
    record: &Record,
    cfg: &TrainConfig,
    mel: &MelMatrix,
    pools: &Pools,
    seed: u64,
) -> Result<Vec<f64>> {
    let wave = dsp::read_wav(&record.path).map_err(|source| TrainError::Audio {
        path: record.path.clone(),
        source,
    })?;
    let mut rng = seeded_rng(seed);
    let wave = augment_pipeline(&wave, &cfg.augment, &pools.noise, &pools.rir, &mut rng)?;
    let feats = log_mel_fbank(&wave, &cfg.fbank.frame, mel)?;
    let start = if feats.n_frames > cfg.crop_frames {
        rng.gen_range(0..=feats.n_frames - cfg.crop_frames)
    } else {
        0
    };
    Ok(wrap_crop(&feats, start, cfg.crop_frames))
}

/// Loss and parameter gradients of one example.
fn example_grads(
    ckpt: &Checkpoint,
    x: Vec<f64>,
    label: usize,
    crop: usize,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut g = Graph::new();
    let bound = g.bind(&ckpt.params);
    let x = g.constant(Tensor::new(&[crop, ckpt.model.n_mels], x)?);
    let emb = backbone_embed(&mut g, &bound, x)?;
    let loss = classify_loss(&mut g, &bound, emb, label, ckpt.model.loss)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    Ok((value, g.param_grads(&bound)))
}

fn speaker_labels(manifest: &Manifest) -> Result<Vec<String>> {
    if manifest.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        return Err(TrainError::TooFewSpeakers(speakers.len()));
    }
    Ok(speakers)
}

/// Visiting order of the `n` manifest records in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, &format!("epoch/{epoch}"))));
    order
}

/// Runs `cfg.epochs` epochs over `manifest`, updating `ckpt` in place.
fn run_epochs(ckpt: &mut Checkpoint, manifest: &Manifest, cfg: &TrainConfig, pools: &Pools) -> Result<()> {
    let label_of: BTreeMap<&str, usize> = ckpt
        .speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let first = manifest.records.first().ok_or(TrainError::EmptyManifest)?;
    let rate = dsp::read_wav(&first.path)
        .map_err(|source| TrainError::Audio {
            path: first.path.clone(),
            source,
        })?
        .sample_rate;
    let mel = cfg.fbank.mel_matrix(rate)?;
    let mut adam = AdamState::new(cfg.lr);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(manifest.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let r = &manifest.records[i];
                    let seed = derive_seed(cfg.seed, &format!("example/{epoch}/{}", r.key()));
                    let x = prepare_example(r, cfg, &mel, pools, seed)?;
                    example_grads(ckpt, x, label_of[r.speaker_id.as_str()], cfg.crop_frames)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            for (loss, grads) in &results {
                epoch_loss += loss;
                ckpt.params.accumulate(grads, scale);
            }
            adam_step(&mut ckpt.params, &mut adam);
        }
        let mean = epoch_loss / manifest.len() as f64;
        if !mean.is_finite() {
            return Err(TrainError::NonFiniteLoss(epoch));
        }
        ckpt.loss_history.push(mean);
        ckpt.epoch += 1;
    }
    Ok(())
}

/// Trains a fresh backbone and classifier head on every speaker of `manifest`.
pub fn train(manifest: &Manifest, cfg: &TrainConfig, pools: &Pools) -> Result<Checkpoint> {
    cfg.validate()?;
    let speakers = speaker_labels(manifest)?;
    let mut params = init_backbone(&cfg.model, cfg.seed)?;
    init_head(&mut params, &cfg.model, speakers.len(), cfg.seed);
    let mut ckpt = Checkpoint {
        params,
        model: cfg.model,
        speakers,
        train: TrainEcho {
            adapter: AdapterKind::None,
            ..cfg.echo()
        },
        epoch: 0,
        loss_history: Vec::new(),
    };
    run_epochs(&mut ckpt, manifest, cfg, pools)?;
    Ok(ckpt)
}

/// Continues training `base` on `manifest` with the configured adapter.
///
/// A zero-initialized adapter is inserted unless `base` already carries the
/// same kind; the head is re-initialized when the speaker set differs from
/// the base's; the optimizer starts from scratch. The epoch counter and loss
/// history continue from the base.
pub fn finetune(base: &Checkpoint, manifest: &Manifest, cfg: &TrainConfig, pools: &Pools) -> Result<Checkpoint> {
    cfg.validate()?;
    if base.model != cfg.model {
        return Err(TrainError::DimMismatch(format!(
            "checkpoint model {:?} differs from configured {:?}",
            base.model, cfg.model
        )));
    }
    let existing = adapter_of(&base.params);
    if existing != AdapterKind::None && existing != cfg.adapter {
        return Err(TrainError::InvalidConfig(format!(
            "base already has a {} adapter, cannot add {}",
            existing.name(),
            cfg.adapter.name()
        )));
    }
    if cfg.saa_enabled && !manifest.records.iter().any(|r| r.utterance_id.ends_with("_saa")) {
        return Err(TrainError::InvalidConfig(
            "saa_enabled needs a manifest that includes SAA copies".into(),
        ));
    }
    let speakers = speaker_labels(manifest)?;
    let mut ckpt = base.clone();
    if existing == AdapterKind::None {
        insert_adapter(&mut ckpt.params, &cfg.model, cfg.adapter, derive_seed(cfg.seed, "adapter"));
    }
    if speakers != base.speakers {
        init_head(&mut ckpt.params, &cfg.model, speakers.len(), derive_seed(cfg.seed, "head"));
        ckpt.speakers = speakers;
    }
    let prefix = cfg.adapter.prefix();
    match cfg.finetune_scope {
        FinetuneScope::Joint => ckpt.params.set_trainable(|_| true),
        FinetuneScope::AdapterOnly => ckpt
            .params
            .set_trainable(|n| n.starts_with("head.") || prefix.is_some_and(|p| n.starts_with(p))),
    }
    ckpt.train = cfg.echo();
    run_epochs(&mut ckpt, manifest, cfg, pools)?;
    ckpt.params.set_trainable(|_| true);
    Ok(ckpt)
}

/// Embedding of every manifest utterance from its full, un-augmented
/// feature matrix, keyed by `speaker/grade/utterance`.
pub fn embed_manifest(ckpt: &Checkpoint, manifest: &Manifest, fbank: &FbankConfig) -> Result<Embeddings> {
    if fbank.n_mels != ckpt.model.n_mels {
        return Err(TrainError::DimMismatch(format!(
            "checkpoint expects {} mels, front end produces {}",
            ckpt.model.n_mels, fbank.n_mels
        )));
    }
    let Some(first) = manifest.records.first() else {
        return Ok(Embeddings::new());
    };
    let read = |r: &Record| {
        dsp::read_wav(&r.path).map_err(|source| TrainError::Audio {
            path: r.path.clone(),
            source,
        })
    };
    // Every file must share the first file's rate; log_mel_fbank rejects others.
    let mel = fbank.mel_matrix(read(first)?.sample_rate)?;
    manifest
        .records
        .par_iter()
        .map(|r| {
            let f = log_mel_fbank(&read(r)?, &fbank.frame, &mel)?;
            Ok((r.key(), embed_features(&ckpt.params, &f.data, f.n_frames)?))
        })
        .collect()
}
