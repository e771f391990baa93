//! `CKPT` files: magic, u32 version, u32 tensor count, then per tensor a
//! u16 name length, the UTF-8 name, u8 rank, u32 dims and f64 values, all
//! little-endian; then u32 epoch, u32 loss count and f64 losses.
//!
//! Metadata travels as extra tensors under `meta.`: the model dimensions,
//! the training settings and the speaker list (UTF-8 bytes, one per value).

use std::path::Path;

use super::{AdapterKind, FinetuneScope, Result, TrainError};
use crate::grad::{ParamStore, Tensor};
use crate::model::{LossKind, ModelConfig};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

/// Training settings stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEcho {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub crop_frames: usize,
    pub seed: u64,
    pub adapter: AdapterKind,
    pub scope: FinetuneScope,
    pub saa_enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub model: ModelConfig,
    /// Sorted training speakers; row `i` of the head is speaker `i`.
    pub speakers: Vec<String>,
    pub train: TrainEcho,
    pub epoch: u32,
    pub loss_history: Vec<f64>,
}

fn model_meta(m: &ModelConfig) -> Vec<f64> {
    let (kind, margin, scale) = match m.loss {
        LossKind::SoftmaxCe => (0.0, 0.0, 0.0),
        LossKind::Aam { margin, scale } => (1.0, margin, scale),
    };
    vec![
        m.n_mels as f64,
        m.channels as f64,
        m.attn_dim as f64,
        m.embed_dim as f64,
        m.fta_channels as f64,
        m.fta_kernel as f64,
        kind,
        margin,
        scale,
    ]
}

fn model_from_meta(v: &[f64]) -> Option<ModelConfig> {
    let [n_mels, channels, attn_dim, embed_dim, fta_channels, fta_kernel, kind, margin, scale] = *v else {
        return None;
    };
    let loss = match kind as u8 {
        0 => LossKind::SoftmaxCe,
        1 => LossKind::Aam { margin, scale },
        _ => return None,
    };
    Some(ModelConfig {
        n_mels: n_mels as usize,
        channels: channels as usize,
        attn_dim: attn_dim as usize,
        embed_dim: embed_dim as usize,
        fta_channels: fta_channels as usize,
        fta_kernel: fta_kernel as usize,
        loss,
    })
}

fn train_meta(t: &TrainEcho) -> Vec<f64> {
    vec![
        t.epochs as f64,
        t.batch_size as f64,
        t.lr,
        t.crop_frames as f64,
        (t.seed >> 32) as f64,
        (t.seed & 0xffff_ffff) as f64,
        t.adapter as u8 as f64,
        t.scope as u8 as f64,
        f64::from(u8::from(t.saa_enabled)),
    ]
}

fn train_from_meta(v: &[f64]) -> Option<TrainEcho> {
    let [epochs, batch_size, lr, crop_frames, hi, lo, adapter, scope, saa] = *v else {
        return None;
    };
    Some(TrainEcho {
        epochs: epochs as usize,
        batch_size: batch_size as usize,
        lr,
        crop_frames: crop_frames as usize,
        seed: ((hi as u64) << 32) | lo as u64,
        adapter: match adapter as u8 {
            0 => AdapterKind::None,
            1 => AdapterKind::Ra,
            2 => AdapterKind::Fta,
            _ => return None,
        },
        scope: match scope as u8 {
            0 => FinetuneScope::Joint,
            1 => FinetuneScope::AdapterOnly,
            _ => return None,
        },
        saa_enabled: saa != 0.0,
    })
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut tensors: Vec<(String, Tensor)> = ckpt
        .params
        .params
        .iter()
        .map(|(n, p)| (n.clone(), p.value.clone()))
        .collect();
    tensors.push(("meta.model".into(), Tensor::from_vec(model_meta(&ckpt.model))));
    tensors.push(("meta.train".into(), Tensor::from_vec(train_meta(&ckpt.train))));
    let names = ckpt.speakers.join("\n");
    tensors.push((
        "meta.speakers".into(),
        Tensor::from_vec(names.bytes().map(f64::from).collect()),
    ));
    tensors.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        push_tensor(&mut out, name, t);
    }
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    out.extend_from_slice(&(ckpt.loss_history.len() as u32).to_le_bytes());
    for l in &ckpt.loss_history {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != CKPT_MAGIC {
        return Err(TrainError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(TrainError::VersionMismatch(version));
    }
    let count = r.u32()?;
    let mut params = ParamStore::new();
    let (mut model, mut train, mut speakers) = (None, None, None);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| TrainError::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        // Reject absurd sizes before allocating.
        if n.saturating_mul(8) > bytes.len() - r.pos {
            return Err(TrainError::Truncated(r.pos));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(&shape, data).map_err(|e| TrainError::Corrupt(format!("{name}: {e}")))?;
        match name.as_str() {
            "meta.model" => model = model_from_meta(t.data()),
            "meta.train" => train = train_from_meta(t.data()),
            "meta.speakers" => {
                let raw: Vec<u8> = t.data().iter().map(|&b| b as u8).collect();
                let text =
                    String::from_utf8(raw).map_err(|_| TrainError::Corrupt("speaker list is not UTF-8".into()))?;
                speakers = Some(if text.is_empty() {
                    Vec::new()
                } else {
                    text.split('\n').map(str::to_string).collect()
                });
            }
            _ => params.insert(name, t),
        }
    }
    let epoch = r.u32()?;
    let n_loss = r.u32()? as usize;
    let loss_history = (0..n_loss).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let missing = |what: &str| TrainError::Corrupt(format!("missing or malformed meta.{what}"));
    Ok(Checkpoint {
        params,
        model: model.ok_or_else(|| missing("model"))?,
        speakers: speakers.ok_or_else(|| missing("speakers"))?,
        train: train.ok_or_else(|| missing("train"))?,
        epoch,
        loss_history,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
