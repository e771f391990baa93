//! Feature transform adapter (FTA), its fully connected ablation (RA) and a
//! small dilated-TDNN embedding network with attentive statistics pooling.
//!
//! All parameters live in a [`ParamStore`] under fixed names (`fta.*`, `ra.*`,
//! `tdnn1.*` ... `head.weight`). Forward functions take the per-pass
//! [`Bound`] view of that store and record ops on a [`Graph`].
//!
//! Input features are `T x n_mels` (frame-major). Inside the backbone the
//! activations are channel-major, `C x T`.

mod suite;

use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::grad::{Bound, GradError, Graph, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub use suite::{adapter_identity_suite, composition_suite, IdentityCheck, COMPOSITIONS};

const POOL_EPS: f64 = 1e-9;
/// Kernel sizes and dilations of the three TDNN layers.
const TDNN: [(usize, usize); 3] = [(5, 1), (3, 2), (3, 3)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdapterKind {
    None,
    Ra,
    Fta,
}

impl AdapterKind {
    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::None => "none",
            AdapterKind::Ra => "ra",
            AdapterKind::Fta => "fta",
        }
    }

    /// Parameter name prefix, `None` for no adapter.
    pub fn prefix(self) -> Option<&'static str> {
        match self {
            AdapterKind::None => None,
            AdapterKind::Ra => Some("ra."),
            AdapterKind::Fta => Some("fta."),
        }
    }
}

impl FromStr for AdapterKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(AdapterKind::None),
            "ra" => Ok(AdapterKind::Ra),
            "fta" => Ok(AdapterKind::Fta),
            other => Err(format!("unknown adapter '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    SoftmaxCe,
    /// Additive angular margin on L2-normalized embeddings and class weights.
    Aam { margin: f64, scale: f64 },
}

impl LossKind {
    pub const AAM_DEFAULT: LossKind = LossKind::Aam {
        margin: 0.2,
        scale: 30.0,
    };

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SoftmaxCe => "softmax_ce",
            LossKind::Aam { .. } => "aam",
        }
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "softmax_ce" => Ok(LossKind::SoftmaxCe),
            "aam" => Ok(LossKind::AAM_DEFAULT),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_mels: usize,
    /// TDNN channel count `C_b`.
    pub channels: usize,
    /// Attention hidden size `A`.
    pub attn_dim: usize,
    /// Embedding size `E`.
    pub embed_dim: usize,
    /// FTA convolution channels.
    pub fta_channels: usize,
    /// FTA convolution kernel length (odd).
    pub fta_kernel: usize,
    pub loss: LossKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            channels: 64,
            attn_dim: 32,
            embed_dim: 32,
            fta_channels: 16,
            fta_kernel: 5,
            loss: LossKind::SoftmaxCe,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_mels,
            self.channels,
            self.attn_dim,
            self.embed_dim,
            self.fta_channels,
            self.fta_kernel,
        ];
        if dims.contains(&0) {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        if self.fta_kernel % 2 == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "fta kernel {} must be odd",
                self.fta_kernel
            )));
        }
        Ok(())
    }

    /// Analytic parameter count of an adapter.
    pub fn adapter_param_count(&self, kind: AdapterKind) -> usize {
        let f = self.n_mels;
        let (c, k) = (self.fta_channels, self.fta_kernel);
        match kind {
            AdapterKind::None => 0,
            AdapterKind::Ra => 2 * f + 2 * (f * f + f),
            AdapterKind::Fta => 2 * f + (f * f + f) + (c * k + c) + (c * k + 1),
        }
    }
}

fn kaiming(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = seeded_rng(derive_seed(seed, name));
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("rank <= 3")
}

/// Backbone and attention parameters (no adapter, no head).
pub fn init_backbone(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let c = cfg.channels;
    let mut cin = cfg.n_mels;
    for (i, (k, _)) in TDNN.iter().enumerate() {
        let name = format!("tdnn{}", i + 1);
        let w = format!("{name}.weight");
        store.insert(w.clone(), kaiming(seed, &w, &[c, cin, *k], cin * k));
        store.insert(format!("{name}.bias"), Tensor::zeros(&[c]));
        cin = c;
    }
    store.insert("attn.w1", kaiming(seed, "attn.w1", &[cfg.attn_dim, c], c));
    store.insert("attn.b1", Tensor::zeros(&[cfg.attn_dim, 1]));
    store.insert("attn.w2", kaiming(seed, "attn.w2", &[1, cfg.attn_dim], cfg.attn_dim));
    store.insert(
        "embed.weight",
        kaiming(seed, "embed.weight", &[2 * c, cfg.embed_dim], 2 * c),
    );
    store.insert("embed.bias", Tensor::zeros(&[cfg.embed_dim]));
    Ok(store)
}

/// (Re)initializes the `E x S` classifier head.
pub fn init_head(store: &mut ParamStore, cfg: &ModelConfig, n_speakers: usize, seed: u64) {
    store.insert(
        "head.weight",
        kaiming(seed, "head.weight", &[cfg.embed_dim, n_speakers], cfg.embed_dim),
    );
}

/// Inserts an adapter whose last layer is zero, so it starts as the identity.
pub fn insert_adapter(store: &mut ParamStore, cfg: &ModelConfig, kind: AdapterKind, seed: u64) {
    let f = cfg.n_mels;
    match kind {
        AdapterKind::None => {}
        AdapterKind::Fta => {
            let (c, k) = (cfg.fta_channels, cfg.fta_kernel);
            store.insert("fta.ln_gain", Tensor::full(&[f], 1.0));
            store.insert("fta.ln_bias", Tensor::zeros(&[f]));
            store.insert("fta.fc_weight", kaiming(seed, "fta.fc_weight", &[f, f], f));
            store.insert("fta.fc_bias", Tensor::zeros(&[f]));
            store.insert("fta.conv1_kernel", kaiming(seed, "fta.conv1_kernel", &[c, 1, k], k));
            store.insert("fta.conv1_bias", Tensor::zeros(&[c]));
            store.insert("fta.conv2_kernel", Tensor::zeros(&[1, c, k]));
            store.insert("fta.conv2_bias", Tensor::zeros(&[1]));
        }
        AdapterKind::Ra => {
            store.insert("ra.ln_gain", Tensor::full(&[f], 1.0));
            store.insert("ra.ln_bias", Tensor::zeros(&[f]));
            store.insert("ra.fc1_weight", kaiming(seed, "ra.fc1_weight", &[f, f], f));
            store.insert("ra.fc1_bias", Tensor::zeros(&[f]));
            store.insert("ra.fc2_weight", Tensor::zeros(&[f, f]));
            store.insert("ra.fc2_bias", Tensor::zeros(&[f]));
        }
    }
}

/// Adapter present in `store`.
pub fn adapter_of(store: &ParamStore) -> AdapterKind {
    if store.contains("fta.fc_weight") {
        AdapterKind::Fta
    } else if store.contains("ra.fc1_weight") {
        AdapterKind::Ra
    } else {
        AdapterKind::None
    }
}

/// Per-row affine map `x W + b` for `x: T x in`, `W: in x out`, `b: [out]`.
fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

fn frame_count(g: &Graph, x: Var, n_mels: usize) -> Result<usize> {
    match g.shape(x) {
        [t, f] if *f == n_mels && *t > 0 => Ok(*t),
        s => Err(GradError::ShapeMismatch(format!("expected T x {n_mels} features, got {s:?}")).into()),
    }
}

/// `x + conv2(relu(conv1(fc(layer_norm(x)))))` with both convolutions running
/// along the mel axis of every frame.
pub fn fta_forward(g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    let f = g.shape(p.get("fta.ln_gain")?)[0];
    let t = frame_count(g, x, f)?;
    let ln = g.layer_norm(x, p.get("fta.ln_gain")?, p.get("fta.ln_bias")?, 1)?;
    let fc = linear(g, ln, p.get("fta.fc_weight")?, p.get("fta.fc_bias")?)?;
    let fc = g.reshape(fc, &[t, 1, f])?;
    let c1 = g.conv1d(fc, p.get("fta.conv1_kernel")?, Some(p.get("fta.conv1_bias")?), 1)?;
    let r = g.relu(c1);
    let c2 = g.conv1d(r, p.get("fta.conv2_kernel")?, Some(p.get("fta.conv2_bias")?), 1)?;
    let branch = g.reshape(c2, &[t, f])?;
    Ok(g.add(x, branch)?)
}

/// `x + fc2(relu(fc1(layer_norm(x))))` per frame.
pub fn ra_forward(g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    let f = g.shape(p.get("ra.ln_gain")?)[0];
    frame_count(g, x, f)?;
    let ln = g.layer_norm(x, p.get("ra.ln_gain")?, p.get("ra.ln_bias")?, 1)?;
    let h = linear(g, ln, p.get("ra.fc1_weight")?, p.get("ra.fc1_bias")?)?;
    let h = g.relu(h);
    let branch = linear(g, h, p.get("ra.fc2_weight")?, p.get("ra.fc2_bias")?)?;
    Ok(g.add(x, branch)?)
}

/// Attention weights `softmax_t(w2 tanh(W1 h + b1))` for `h: C x T`, as `1 x T`.
pub fn attention_weights(g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
    let a = g.matmul(p.get("attn.w1")?, h)?;
    let a = g.add(a, p.get("attn.b1")?)?;
    let a = g.tanh(a);
    let e = g.matmul(p.get("attn.w2")?, a)?;
    Ok(g.softmax(e, 1)?)
}

/// Attentive mean and standard deviation of `h: C x T`, as a `2C x 1` column.
pub fn attentive_stats_pool(g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
    let alpha = attention_weights(g, p, h)?;
    let alpha_t = g.transpose(alpha)?;
    let mu = g.matmul(h, alpha_t)?;
    let h2 = g.mul(h, h)?;
    let m2 = g.matmul(h2, alpha_t)?;
    let mu2 = g.mul(mu, mu)?;
    let var = g.sub(m2, mu2)?;
    let var = g.add_scalar(var, POOL_EPS);
    let sigma = g.sqrt(var);
    Ok(g.concat(&[mu, sigma], 0)?)
}

/// `T x n_mels` features to a `1 x E` embedding, running whichever adapter
/// the bound parameters contain.
pub fn backbone_embed(g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    let x = if p.contains("fta.fc_weight") {
        fta_forward(g, p, x)?
    } else if p.contains("ra.fc1_weight") {
        ra_forward(g, p, x)?
    } else {
        x
    };
    let mut h = g.transpose(x)?;
    for (i, (_, dilation)) in TDNN.iter().enumerate() {
        let w = p.get(&format!("tdnn{}.weight", i + 1))?;
        let b = p.get(&format!("tdnn{}.bias", i + 1))?;
        let c = g.conv1d(h, w, Some(b), *dilation)?;
        h = g.relu(c);
    }
    let pooled = attentive_stats_pool(g, p, h)?;
    let row = g.transpose(pooled)?;
    linear(g, row, p.get("embed.weight")?, p.get("embed.bias")?)
}

/// Speaker classification loss of a `1 x E` embedding.
pub fn classify_loss(g: &mut Graph, p: &Bound, emb: Var, label: usize, loss: LossKind) -> Result<Var> {
    let w = p.get("head.weight")?;
    let logits = match loss {
        LossKind::SoftmaxCe => g.matmul(emb, w)?,
        LossKind::Aam { margin, scale } => {
            let e = g.l2_normalize(emb, 1)?;
            let wn = g.l2_normalize(w, 0)?;
            let cos = g.matmul(e, wn)?;
            g.angular_margin(cos, label, margin, scale)?
        }
    };
    Ok(g.cross_entropy(logits, label)?)
}

/// Inference-only embedding of a frame-major `n_frames x n_mels` block.
pub fn embed_features(store: &ParamStore, data: &[f64], n_frames: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = bind_frozen(&mut g, store);
    let n_mels = data.len() / n_frames.max(1);
    let x = g.constant(Tensor::new(&[n_frames, n_mels], data.to_vec())?);
    let e = backbone_embed(&mut g, &bound, x)?;
    Ok(g.value(e).data().to_vec())
}

/// Binds every parameter as a constant so no gradient bookkeeping happens.
fn bind_frozen(g: &mut Graph, store: &ParamStore) -> Bound {
    let vars = store
        .params
        .iter()
        .map(|(n, p)| (n.clone(), g.constant(p.value.clone())))
        .collect();
    Bound { vars }
}

#[cfg(test)]
mod tests;
