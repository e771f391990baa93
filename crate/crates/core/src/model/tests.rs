use super::*;
use crate::grad::Graph;

fn features(t: usize, f: usize, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    Tensor::new(&[t, f], (0..t * f).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
}

fn full_store(cfg: &ModelConfig, adapter: AdapterKind) -> ParamStore {
    let mut s = init_backbone(cfg, 5).unwrap();
    insert_adapter(&mut s, cfg, adapter, 6);
    init_head(&mut s, cfg, 3, 7);
    s
}

#[test]
fn fta_param_count_matches_analytic() {
    let cfg = ModelConfig::default();
    let mut s = ParamStore::new();
    insert_adapter(&mut s, &cfg, AdapterKind::Fta, 1);
    assert_eq!(s.num_values("fta."), 6817);
    assert_eq!(cfg.adapter_param_count(AdapterKind::Fta), 6817);
    let mut s = ParamStore::new();
    insert_adapter(&mut s, &cfg, AdapterKind::Ra, 1);
    assert_eq!(s.num_values("ra."), cfg.adapter_param_count(AdapterKind::Ra));
}

#[test]
fn zero_init_adapters_are_exact_identities() {
    let cfg = ModelConfig::default();
    for kind in [AdapterKind::Fta, AdapterKind::Ra] {
        let mut s = ParamStore::new();
        insert_adapter(&mut s, &cfg, kind, 3);
        let mut g = Graph::new();
        let p = g.bind(&s);
        let x = g.constant(features(98, 80, 2));
        let y = match kind {
            AdapterKind::Fta => fta_forward(&mut g, &p, x).unwrap(),
            _ => ra_forward(&mut g, &p, x).unwrap(),
        };
        assert_eq!(g.shape(y), &[98, 80]);
        let same = g
            .value(x)
            .data()
            .iter()
            .zip(g.value(y).data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{kind:?}");
    }
}

#[test]
fn identity_adapter_leaves_embedding_unchanged() {
    let cfg = ModelConfig::default();
    let base = full_store(&cfg, AdapterKind::None);
    let x = features(120, 80, 9);
    let e0 = embed_features(&base, x.data(), 120).unwrap();
    for kind in [AdapterKind::Fta, AdapterKind::Ra] {
        let mut s = base.clone();
        insert_adapter(&mut s, &cfg, kind, 4);
        assert_eq!(adapter_of(&s), kind);
        assert_eq!(embed_features(&s, x.data(), 120).unwrap(), e0);
    }
}

#[test]
fn wrong_width_rejected() {
    let cfg = ModelConfig::default();
    let s = full_store(&cfg, AdapterKind::Fta);
    let mut g = Graph::new();
    let p = g.bind(&s);
    let x = g.constant(features(10, 40, 1));
    assert!(matches!(
        fta_forward(&mut g, &p, x),
        Err(ModelError::Grad(GradError::ShapeMismatch(_)))
    ));
}

#[test]
fn embedding_length_for_various_t() {
    let cfg = ModelConfig::default();
    let s = full_store(&cfg, AdapterKind::Fta);
    for t in [5, 98, 300] {
        let x = features(t, 80, t as u64);
        let e = embed_features(&s, x.data(), t).unwrap();
        assert_eq!(e.len(), cfg.embed_dim);
        assert_eq!(e, embed_features(&s, x.data(), t).unwrap());
    }
}

#[test]
fn zero_attention_is_plain_mean_std() {
    let cfg = ModelConfig {
        channels: 3,
        ..ModelConfig::default()
    };
    let mut s = init_backbone(&cfg, 1).unwrap();
    for name in ["attn.w1", "attn.w2"] {
        s.get_mut(name).unwrap().value.data_mut().fill(0.0);
    }
    let h = Tensor::new(&[3, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 0.5, 2.0, 2.0, 2.0, 2.0]).unwrap();
    let mut g = Graph::new();
    let p = g.bind(&s);
    let hv = g.constant(h.clone());
    let alpha = attention_weights(&mut g, &p, hv).unwrap();
    let a = g.value(alpha).data();
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(a.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let pooled = attentive_stats_pool(&mut g, &p, hv).unwrap();
    let out = g.value(pooled).data();
    for c in 0..3 {
        let row = &h.data()[c * 4..(c + 1) * 4];
        let mean = row.iter().sum::<f64>() / 4.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((out[c] - mean).abs() < 1e-12);
        assert!((out[3 + c] - (var + 1e-9).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn single_frame_sigma_is_floor() {
    let cfg = ModelConfig {
        channels: 2,
        ..ModelConfig::default()
    };
    let s = init_backbone(&cfg, 2).unwrap();
    let mut g = Graph::new();
    let p = g.bind(&s);
    let h = g.constant(Tensor::new(&[2, 1], vec![0.7, -3.0]).unwrap());
    let pooled = attentive_stats_pool(&mut g, &p, h).unwrap();
    let out = g.value(pooled).data();
    for &sigma in &out[2..] {
        assert!((sigma - 1e-9f64.sqrt()).abs() < 1e-12);
    }
}

fn loss_for_logits_head(emb: &[f64], head: Tensor, label: usize, loss: LossKind) -> f64 {
    let mut s = ParamStore::new();
    s.insert("head.weight", head);
    let mut g = Graph::new();
    let p = g.bind(&s);
    let e = g.constant(Tensor::new(&[1, emb.len()], emb.to_vec()).unwrap());
    let l = classify_loss(&mut g, &p, e, label, loss).unwrap();
    g.value(l).item()
}

#[test]
fn uniform_logits_give_log_s() {
    let head = Tensor::zeros(&[4, 5]);
    let l = loss_for_logits_head(&[1.0, 2.0, 3.0, 4.0], head, 2, LossKind::SoftmaxCe);
    assert!((l - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_logits_give_near_zero_loss() {
    let mut head = Tensor::zeros(&[2, 3]);
    head.data_mut()[1] = 50.0; // row 0, class 1
    let l = loss_for_logits_head(&[1.0, 0.0], head, 1, LossKind::SoftmaxCe);
    assert!(l < 1e-12);
}

#[test]
fn aam_with_zero_margin_is_normalized_softmax() {
    let mut rng = seeded_rng(3);
    let head = Tensor::new(&[4, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let emb = [0.3, -0.2, 0.9, 0.4];
    let scale = 30.0;
    let aam = loss_for_logits_head(&emb, head.clone(), 1, LossKind::Aam { margin: 0.0, scale });
    // Reference: scaled cosine logits computed directly.
    let en = emb.iter().map(|v| v * v).sum::<f64>().sqrt();
    let logits: Vec<f64> = (0..3)
        .map(|j| {
            let col: Vec<f64> = (0..4).map(|i| head.data()[i * 3 + j]).collect();
            let cn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            scale * emb.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>() / (en * cn)
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    assert!((aam - (lse - logits[1])).abs() < 1e-12);
}

#[test]
fn bad_label_rejected() {
    let head = Tensor::zeros(&[2, 3]);
    let mut s = ParamStore::new();
    s.insert("head.weight", head);
    let mut g = Graph::new();
    let p = g.bind(&s);
    let e = g.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
    assert!(matches!(
        classify_loss(&mut g, &p, e, 3, LossKind::SoftmaxCe),
        Err(ModelError::Grad(GradError::BadLabel { .. }))
    ));
}

#[test]
fn compositions_pass_finite_differences() {
    for check in composition_suite(13, 10).unwrap() {
        assert!(check.worst < 1e-5, "{}: {}", check.name, check.worst);
    }
}

#[test]
fn even_fta_kernel_rejected() {
    let cfg = ModelConfig {
        fta_kernel: 4,
        ..ModelConfig::default()
    };
    assert!(matches!(init_backbone(&cfg, 1), Err(ModelError::InvalidConfig(_))));
}

#[test]
fn identity_suite_is_bit_exact() {
    let r = adapter_identity_suite(&ModelConfig::default(), 3, 4).unwrap();
    assert!(r.passed(), "{r:?}");
}
