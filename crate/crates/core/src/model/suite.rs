//! Finite-difference checks of the adapter and full-network compositions.

use rand::Rng;

use super::{
    backbone_embed, classify_loss, fta_forward, init_backbone, init_head, insert_adapter, ra_forward,
    AdapterKind, LossKind, ModelConfig, Result,
};
use crate::grad::{grad_compare, weighted_sum, Bound, GradError, Graph, OpCheck, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, seeded_rng, SvRng};

/// Compositions exercised by [`composition_suite`].
pub const COMPOSITIONS: &[&str] = &["fta", "ra", "backbone_fta_ce", "backbone_ra_aam"];

fn randomize(store: &mut ParamStore, rng: &mut SvRng) {
    for p in store.params.values_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
}

fn small_config(rng: &mut SvRng) -> ModelConfig {
    ModelConfig {
        n_mels: rng.gen_range(6..=10),
        channels: rng.gen_range(2..=4),
        attn_dim: rng.gen_range(2..=3),
        embed_dim: rng.gen_range(2..=4),
        fta_channels: rng.gen_range(2..=3),
        fta_kernel: [3, 5][rng.gen_range(0..2)],
        loss: LossKind::SoftmaxCe,
    }
}

/// Finite-difference step.
const H: f64 = 1e-5;

/// Redraws allowed per case when a draw is unfit for finite differences.
const MAX_REDRAWS: usize = 50;

fn check_store(
    store: &ParamStore,
    x: Tensor,
    f: impl Fn(&mut Graph, &Bound, Var) -> Result<Var>,
) -> Result<f64> {
    let names: Vec<String> = store.params.keys().cloned().collect();
    let mut inputs = vec![x];
    inputs.extend(store.params.values().map(|p| p.value.clone()));
    let checks = grad_compare(
        |g, vars| {
            let bound = Bound {
                vars: names.iter().cloned().zip(vars[1..].iter().copied()).collect(),
            };
            f(g, &bound, vars[0]).map_err(|e| match e {
                super::ModelError::Grad(e) => e,
                other => crate::grad::GradError::ShapeMismatch(other.to_string()),
            })
        },
        &inputs,
        H,
    )?;
    // Dead relus can cut an input off from the loss entirely. The analytic
    // gradient is then roundoff and there is nothing to compare.
    if let Some(k) = checks.iter().position(|c| c.numeric_norm == 0.0) {
        return Err(GradError::Insensitive(k).into());
    }
    Ok(checks.iter().fold(0.0, |m, c| m.max(c.rel)))
}

fn one_case(name: &str, rng: &mut SvRng) -> Result<f64> {
    let cfg = small_config(rng);
    let t = rng.gen_range(20..=30);
    let x = Tensor::new(
        &[t, cfg.n_mels],
        (0..t * cfg.n_mels).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )?;
    let seed = rng.gen();
    let mut store = ParamStore::new();
    match name {
        "fta" | "ra" => {
            let kind = if name == "fta" { AdapterKind::Fta } else { AdapterKind::Ra };
            insert_adapter(&mut store, &cfg, kind, seed);
            randomize(&mut store, rng);
            check_store(&store, x, move |g, p, x| {
                let y = if kind == AdapterKind::Fta {
                    fta_forward(g, p, x)?
                } else {
                    ra_forward(g, p, x)?
                };
                Ok(weighted_sum(g, y)?)
            })
        }
        _ => {
            let (kind, loss) = if name == "backbone_fta_ce" {
                (AdapterKind::Fta, LossKind::SoftmaxCe)
            } else {
                (AdapterKind::Ra, LossKind::AAM_DEFAULT)
            };
            store = init_backbone(&cfg, seed)?;
            insert_adapter(&mut store, &cfg, kind, seed);
            init_head(&mut store, &cfg, 2, seed);
            randomize(&mut store, rng);
            // The harder label keeps the loss away from saturation, where
            // both gradients underflow and the comparison is pure noise.
            let label = hardest_label(&store, &x, loss)?;
            check_store(&store, x, move |g, p, x| {
                let e = backbone_embed(g, p, x)?;
                classify_loss(g, p, e, label, loss)
            })
        }
    }
}

/// Draws cases until one has no relu input within probing distance of zero
/// and every input influences the loss.
fn fit_case(name: &str, rng: &mut SvRng) -> Result<f64> {
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        match one_case(name, rng) {
            Err(super::ModelError::Grad(
                e @ (GradError::KinkCrossed { .. } | GradError::Insensitive(_)),
            )) => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("at least one draw").into())
}

fn hardest_label(store: &ParamStore, x: &Tensor, loss: LossKind) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for label in 0..2 {
        let mut g = Graph::new();
        let p = g.bind(store);
        let xv = g.constant(x.clone());
        let e = backbone_embed(&mut g, &p, xv)?;
        let l = classify_loss(&mut g, &p, e, label, loss)?;
        if g.value(l).item() > best.1 {
            best = (label, g.value(l).item());
        }
    }
    Ok(best.0)
}

/// Runs `shapes` randomized finite-difference checks of each composition in
/// [`COMPOSITIONS`], with gradients taken with respect to the input features
/// and every parameter.
pub fn composition_suite(seed: u64, shapes: usize) -> Result<Vec<OpCheck>> {
    COMPOSITIONS
        .iter()
        .map(|&name| {
            let mut rng = seeded_rng(derive_seed(seed, name));
            let mut worst = 0.0f64;
            for _ in 0..shapes {
                worst = worst.max(fit_case(name, &mut rng)?);
            }
            Ok(OpCheck { name, shapes, worst })
        })
        .collect()
}

/// Outcome of [`adapter_identity_suite`]; every flag means bit-exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityCheck {
    pub inputs: usize,
    pub fta_forward: bool,
    pub ra_forward: bool,
    pub embedding: bool,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.fta_forward && self.ra_forward && self.embedding
    }
}

/// Checks on `inputs` random feature matrices that freshly inserted adapters
/// return their input unchanged and leave the embedding of a randomly
/// initialized backbone unchanged.
pub fn adapter_identity_suite(cfg: &ModelConfig, seed: u64, inputs: usize) -> Result<IdentityCheck> {
    let mut rng = seeded_rng(derive_seed(seed, "identity"));
    let base = init_backbone(cfg, derive_seed(seed, "backbone"))?;
    let mut out = IdentityCheck {
        inputs,
        fta_forward: true,
        ra_forward: true,
        embedding: true,
    };
    for i in 0..inputs {
        let t = rng.gen_range(min_frames()..=60);
        let x = Tensor::new(
            &[t, cfg.n_mels],
            (0..t * cfg.n_mels).map(|_| rng.gen_range(-12.0..2.0)).collect(),
        )
        .expect("rank 2");
        let e0 = super::embed_features(&base, x.data(), t)?;
        for kind in [AdapterKind::Fta, AdapterKind::Ra] {
            let mut store = base.clone();
            insert_adapter(&mut store, cfg, kind, derive_seed(seed, &format!("adapter/{i}")));
            let mut g = Graph::new();
            let p = g.bind(&store);
            let xv = g.constant(x.clone());
            let y = match kind {
                AdapterKind::Fta => fta_forward(&mut g, &p, xv)?,
                _ => ra_forward(&mut g, &p, xv)?,
            };
            let same = g.value(y).data() == x.data();
            match kind {
                AdapterKind::Fta => out.fta_forward &= same,
                _ => out.ra_forward &= same,
            }
            out.embedding &= super::embed_features(&store, x.data(), t)? == e0;
        }
    }
    Ok(out)
}

/// Shortest input the TDNN stack accepts.
fn min_frames() -> usize {
    super::TDNN.iter().map(|(k, d)| (k - 1) * d).sum::<usize>() + 1
}
