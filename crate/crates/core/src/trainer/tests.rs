use std::path::Path;

use super::*;
use crate::synth::{gen_corpus, CorpusLayout, CorpusSpec};
use crate::trials::{build_trials, score_trials, NegativeGrade};

fn toy_corpus(dir: &Path, speakers: usize) -> Manifest {
    let spec = CorpusSpec {
        n_speakers: speakers,
        grades: 2,
        utts_per_grade: 5,
        duration_s: 1.0,
        eval_speakers: 1,
        seed: 11,
    };
    gen_corpus(&spec, dir).unwrap()
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        crop_frames: 60,
        seed: 5,
        augment: AugmentConfig::disabled(),
        model: ModelConfig {
            channels: 24,
            attn_dim: 8,
            embed_dim: 16,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn pools(dir: &Path) -> Pools {
    let layout = CorpusLayout::new(dir);
    Pools {
        noise: crate::augment::load_pool(layout.noise_dir).unwrap(),
        rir: crate::augment::load_pool(layout.rir_dir).unwrap(),
    }
}

#[test]
fn loss_decreases_on_toy_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 4);
    let ckpt = train(&m, &small_cfg(15), &Pools::default()).unwrap();
    assert_eq!(ckpt.epoch, 15);
    assert_eq!(ckpt.loss_history.len(), 15);
    assert!(ckpt.loss_history.iter().all(|l| l.is_finite()));
    assert!(ckpt.loss_history[14] < ckpt.loss_history[0], "{:?}", ckpt.loss_history);
    assert_eq!(ckpt.speakers, m.speakers());
}

#[test]
fn training_is_bit_reproducible_with_augmentation() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 3);
    let cfg = TrainConfig {
        augment: AugmentConfig::default(),
        ..small_cfg(2)
    };
    let p = pools(dir.path());
    let a = encode_checkpoint(&train(&m, &cfg, &p).unwrap());
    let b = encode_checkpoint(&train(&m, &cfg, &p).unwrap());
    assert_eq!(a, b);
    let other = TrainConfig { seed: 6, ..cfg };
    assert_ne!(a, encode_checkpoint(&train(&m, &other, &p).unwrap()));
}

#[test]
fn degenerate_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 2);
    let one = m.filter_speakers(|s| s == "spk00");
    assert!(matches!(train(&one, &small_cfg(1), &Pools::default()), Err(TrainError::TooFewSpeakers(1))));
    assert!(matches!(
        train(&Manifest::default(), &small_cfg(1), &Pools::default()),
        Err(TrainError::EmptyManifest)
    ));
    let bad = TrainConfig { crop_frames: 4, ..small_cfg(1) };
    assert!(matches!(train(&m, &bad, &Pools::default()), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn zero_step_finetune_scores_like_base() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 3);
    let base = train(&m, &small_cfg(1), &Pools::default()).unwrap();
    let fbank = FbankConfig::default();
    let base_emb = embed_manifest(&base, &m, &fbank).unwrap();
    let list = build_trials(&m, 1, 2, 20, 20, NegativeGrade::Test, &mut seeded_rng(1)).unwrap();
    let base_scores = score_trials(&list, &base_emb).unwrap();
    for adapter in [AdapterKind::None, AdapterKind::Ra, AdapterKind::Fta] {
        let cfg = TrainConfig {
            adapter,
            ..small_cfg(0)
        };
        let ft = finetune(&base, &m, &cfg, &Pools::default()).unwrap();
        assert_eq!(adapter_of(&ft.params), adapter);
        let emb = embed_manifest(&ft, &m, &fbank).unwrap();
        assert_eq!(emb, base_emb, "{}", adapter.name());
        assert_eq!(score_trials(&list, &emb).unwrap(), base_scores);
    }
}

#[test]
fn plain_finetune_moves_every_parameter_group() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 3);
    let base = train(&m, &small_cfg(1), &Pools::default()).unwrap();
    let ft = finetune(&base, &m, &small_cfg(1), &Pools::default()).unwrap();
    for (name, p) in &base.params.params {
        assert_ne!(ft.params.get(name).unwrap(), &p.value, "{name} did not move");
    }
    assert_eq!(ft.epoch, 2);
    assert_eq!(ft.loss_history.len(), 2);
}

#[test]
fn adapter_only_freezes_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 3);
    let base = train(&m, &small_cfg(1), &Pools::default()).unwrap();
    let cfg = TrainConfig {
        adapter: AdapterKind::Fta,
        finetune_scope: FinetuneScope::AdapterOnly,
        ..small_cfg(1)
    };
    let ft = finetune(&base, &m, &cfg, &Pools::default()).unwrap();
    for (name, p) in &ft.params.params {
        match base.params.get(name) {
            Some(v) if !name.starts_with("head.") => assert_eq!(v, &p.value, "{name} moved"),
            _ => {}
        }
        assert!(p.trainable);
    }
    assert_ne!(ft.params.get("fta.conv2_kernel").unwrap(), &Tensor::zeros(&[1, 16, 5]));
    assert_ne!(ft.params.get("head.weight"), base.params.get("head.weight"));
}

#[test]
fn head_is_rebuilt_for_new_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 4);
    let first = m.filter_speakers(|s| s < "spk02");
    let rest = m.filter_speakers(|s| s >= "spk01");
    let base = train(&first, &small_cfg(1), &Pools::default()).unwrap();
    assert_eq!(base.params.get("head.weight").unwrap().shape(), &[16, 2]);
    let ft = finetune(&base, &rest, &small_cfg(0), &Pools::default()).unwrap();
    assert_eq!(ft.speakers, vec!["spk01", "spk02", "spk03"]);
    assert_eq!(ft.params.get("head.weight").unwrap().shape(), &[16, 3]);
}

#[test]
fn finetune_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 2);
    let base = train(&m, &small_cfg(0), &Pools::default()).unwrap();
    let wider = TrainConfig {
        model: ModelConfig {
            embed_dim: 20,
            ..small_cfg(0).model
        },
        ..small_cfg(0)
    };
    assert!(matches!(finetune(&base, &m, &wider, &Pools::default()), Err(TrainError::DimMismatch(_))));
    let saa = TrainConfig {
        saa_enabled: true,
        ..small_cfg(0)
    };
    assert!(matches!(finetune(&base, &m, &saa, &Pools::default()), Err(TrainError::InvalidConfig(_))));
    let fta = finetune(&base, &m, &TrainConfig { adapter: AdapterKind::Fta, ..small_cfg(0) }, &Pools::default()).unwrap();
    let ra = TrainConfig {
        adapter: AdapterKind::Ra,
        ..small_cfg(0)
    };
    assert!(matches!(finetune(&fta, &m, &ra, &Pools::default()), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn saa_doubled_manifest_doubles_the_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 2);
    let mut doubled = m.clone();
    for r in &m.records {
        let mut s = r.clone();
        s.utterance_id = format!("{}_saa", r.utterance_id);
        doubled.records.push(s);
    }
    let base = train(&m, &small_cfg(0), &Pools::default()).unwrap();
    let cfg = TrainConfig {
        saa_enabled: true,
        ..small_cfg(1)
    };
    let ft = finetune(&base, &doubled, &cfg, &Pools::default()).unwrap();
    assert_eq!(ft.loss_history.len(), 1);
    let mut order = epoch_order(doubled.len(), cfg.seed, 0);
    assert_eq!(order.len(), 2 * m.len());
    order.sort_unstable();
    assert_eq!(order, (0..2 * m.len()).collect::<Vec<_>>());
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_corpus(dir.path(), 2);
    let base = train(&m, &small_cfg(1), &Pools::default()).unwrap();
    let ckpt = finetune(
        &base,
        &m,
        &TrainConfig {
            adapter: AdapterKind::Fta,
            finetune_scope: FinetuneScope::AdapterOnly,
            seed: u64::MAX - 3,
            ..small_cfg(0)
        },
        &Pools::default(),
    )
    .unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.train.seed, u64::MAX - 3);

    let bytes = encode_checkpoint(&ckpt);
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(
            decode_checkpoint(&bytes[..cut]),
            Err(TrainError::BadMagic | TrainError::Truncated(_))
        ));
    }
    let mut v99 = bytes.clone();
    v99[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&v99), Err(TrainError::VersionMismatch(99))));
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(TrainError::BadMagic)));
}
