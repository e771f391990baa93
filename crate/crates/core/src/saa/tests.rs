use rand::Rng;

use super::*;
use crate::dsp::{mel_filterbank_matrix, stft, istft, Spectrogram};
use crate::seeded_rng;

fn mel80() -> MelMatrix {
    mel_filterbank_matrix(80, 512, 16000, 0.0, 8000.0).unwrap()
}

fn tone(freq: f64, n: usize, amp: f64) -> Waveform {
    Waveform::new(
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect(),
        16000,
    )
}

/// Harmonic buzz with a few partials, light noise and a slow envelope.
fn speechy(rng: &mut impl Rng, n: usize) -> Waveform {
    let f0: f64 = rng.gen_range(120.0..300.0);
    let amps: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let env = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
            let h: f64 = amps
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * std::f64::consts::PI * f0 * (k + 1) as f64 * t).sin())
                .sum();
            0.05 * env * h + 0.01 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    Waveform::new(samples, 16000)
}

#[test]
fn flat_spectrum_inverts_flat_in_interior() {
    let mel = mel80();
    let flat = vec![1.0; mel.n_bins];
    let mut m = vec![0.0; 80];
    mel.apply(&flat, &mut m);
    let lin = mel_to_linear(&m, 1, &mel).unwrap();
    // Interior: away from the outermost two filters on each side, whose
    // half-open slopes at the band edges the least-squares fit cannot match.
    let lo = (mel.center_freqs[1] / 16000.0 * 512.0).ceil() as usize;
    let hi = (mel.center_freqs[77] / 16000.0 * 512.0).floor() as usize;
    for (b, v) in lin.iter().enumerate().take(hi + 1).skip(lo) {
        assert!((v - 1.0).abs() < 0.1, "bin {b}: {v}");
    }
}

#[test]
fn zero_mel_gives_zero_linear_and_dims_checked() {
    let mel = mel80();
    let lin = mel_to_linear(&vec![0.0; 80 * 3], 3, &mel).unwrap();
    assert!(lin.iter().all(|&v| v == 0.0));
    assert!(matches!(
        mel_to_linear(&vec![0.0; 40 * 3], 3, &mel),
        Err(SaaError::DimMismatch(_))
    ));
}

#[test]
fn griffin_lim_converges_on_real_magnitudes() {
    let spec = FrameSpec::default();
    let mut rng = seeded_rng(5);
    for _ in 0..50 {
        let n = rng.gen_range(4000..9000);
        let wave = speechy(&mut rng, n);
        let mut mag = stft(&wave, &spec).unwrap();
        mag.phase = None;
        let c2 = spectral_convergence(&griffin_lim(&mag, 2).unwrap(), &mag).unwrap();
        let c32 = spectral_convergence(&griffin_lim(&mag, 32).unwrap(), &mag).unwrap();
        assert!(c32 <= c2, "{c32} > {c2}");
    }
}

#[test]
fn griffin_lim_edge_cases() {
    let spec = FrameSpec::default();
    let zero = Spectrogram::magnitude_only(vec![0.0; 10 * 257], 10, spec, 16000);
    let out = griffin_lim(&zero, 8).unwrap();
    assert_eq!(out.len(), spec.frames_to_samples(10));
    assert!(out.samples.iter().all(|&v| v == 0.0));

    let mut rng = seeded_rng(1);
    let mut mag = stft(&speechy(&mut rng, 4000), &spec).unwrap();
    mag.phase = None;
    let len = spec.frames_to_samples(mag.n_frames);
    assert_eq!(griffin_lim(&mag, 1).unwrap(), istft(&mag, &spec, len).unwrap());
    assert!(matches!(griffin_lim(&mag, 0), Err(SaaError::InvalidConfig(_))));
}

fn interior_max_err(a: &Waveform, b: &Waveform, spec: &FrameSpec) -> f64 {
    let n = spec.frames_to_samples(spec.num_frames(a.len()).unwrap());
    (spec.win_length..n - spec.win_length)
        .map(|i| (a.samples[i] - b.samples[i]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn denoise_zero_strength_is_identity() {
    let spec = FrameSpec::default();
    let mut rng = seeded_rng(2);
    let wave = speechy(&mut rng, 16000);
    let cfg = DenoiseConfig {
        strength: 0.0,
        bias_spectrum: Some(vec![3.0; 257]),
    };
    let out = denoise(&wave, &cfg, &spec).unwrap();
    assert_eq!(out.len(), wave.len());
    assert!(interior_max_err(&wave, &out, &spec) < 1e-10);
}

#[test]
fn denoise_requires_bias() {
    let spec = FrameSpec::default();
    let wave = tone(440.0, 4000, 0.3);
    assert!(matches!(
        denoise(&wave, &DenoiseConfig::default(), &spec),
        Err(SaaError::MissingBias)
    ));
}

#[test]
fn denoise_removes_backend_bias_signal() {
    let spec = FrameSpec::default();
    let mel = mel80();
    let backend = VocoderBackend::GriffinLim { iterations: 32 };
    let bias_wave = backend
        .vocode(&LogMel::zeros(80, BIAS_FRAMES, 16000), &spec, &mel)
        .unwrap();
    let cfg = DenoiseConfig::for_backend(1.0, &backend, &spec, &mel).unwrap();
    let out = denoise(&bias_wave, &cfg, &spec).unwrap();
    let ratio = out.energy() / bias_wave.energy();
    assert!(ratio < 0.1, "residual energy ratio {ratio}");
}

#[test]
fn small_strength_keeps_speech_energy() {
    let spec = FrameSpec::default();
    let mel = mel80();
    let backend = VocoderBackend::default();
    let cfg = DenoiseConfig::for_backend(0.005, &backend, &spec, &mel).unwrap();
    let mut rng = seeded_rng(3);
    let wave = speechy(&mut rng, 16000);
    let out = denoise(&wave, &cfg, &spec).unwrap();
    let reference = denoise(
        &wave,
        &DenoiseConfig {
            strength: 0.0,
            ..cfg.clone()
        },
        &spec,
    )
    .unwrap();
    let ratio = out.energy() / reference.energy();
    assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        .0
}

#[test]
fn roundtrip_keeps_length_rate_and_tone_bin() {
    let spec = FrameSpec::default();
    let mel = mel80();
    let backend = VocoderBackend::default();
    let cfg = DenoiseConfig::for_backend(0.005, &backend, &spec, &mel).unwrap();
    for (freq, n) in [(440.0, 16000), (1000.0, 12345), (2500.0, 8001)] {
        let wave = tone(freq, n, 0.4);
        let out = saa_roundtrip(&wave, &backend, &cfg, &spec, &mel).unwrap();
        assert_eq!(out.len(), wave.len());
        assert_eq!(out.sample_rate, wave.sample_rate);
        let a = log_mel_fbank(&wave, &spec, &mel).unwrap().mean_frame();
        let b = log_mel_fbank(&out, &spec, &mel).unwrap().mean_frame();
        assert_eq!(argmax(&a), argmax(&b), "{freq} Hz");
    }
}

#[test]
fn roundtrip_is_closer_than_noise() {
    let spec = FrameSpec::default();
    let mel = mel80();
    let backend = VocoderBackend::default();
    let cfg = DenoiseConfig::for_backend(0.005, &backend, &spec, &mel).unwrap();
    let mut rng = seeded_rng(4);
    let wave = speechy(&mut rng, 16000);
    let out = saa_roundtrip(&wave, &backend, &cfg, &spec, &mel).unwrap();
    let noise = Waveform::new((0..16000).map(|_| rng.gen_range(-0.3..0.3)).collect(), 16000);
    let fa = log_mel_fbank(&wave, &spec, &mel).unwrap();
    let dist = |other: &Waveform| {
        let fb = log_mel_fbank(other, &spec, &mel).unwrap();
        fa.data.iter().zip(&fb.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / fa.n_frames as f64
    };
    assert!(dist(&out) < dist(&noise));
}

#[test]
fn mels_message_roundtrip_and_layout() {
    let m = LogMel {
        data: vec![1.5, -2.0, 0.25, 3.0, 4.0, -1.0],
        n_mels: 2,
        n_frames: 3,
        sample_rate: 16000,
    };
    let bytes = encode_mels(&m);
    assert_eq!(&bytes[..4], b"MELS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 16000);
    assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1.5);
    assert_eq!(bytes.len(), 20 + 24);
    assert_eq!(decode_mels(&bytes).unwrap(), m);
    assert!(matches!(decode_mels(&bytes[..30]), Err(SaaError::ProtocolError(_))));
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(decode_mels(&wrong), Err(SaaError::ProtocolError(_))));
}

#[test]
fn external_child_failures() {
    let m = LogMel::zeros(80, 5, 16000);
    let err = external_vocoder_call(&m, "cat >/dev/null; printf 'NOTAWAVEFILE....'").unwrap_err();
    assert!(matches!(err, SaaError::ProtocolError(_)), "{err}");
    let err = external_vocoder_call(&m, "cat >/dev/null; echo boom >&2; exit 1").unwrap_err();
    match err {
        SaaError::ChildNonzeroExit { code, stderr } => {
            assert_eq!(code, Some(1));
            assert_eq!(stderr, "boom");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn backend_parsing() {
    assert_eq!("griffin_lim".parse::<VocoderBackend>().unwrap(), VocoderBackend::default());
    assert_eq!(
        "griffin_lim:8".parse::<VocoderBackend>().unwrap(),
        VocoderBackend::GriffinLim { iterations: 8 }
    );
    assert_eq!(
        "external:my vocoder --x".parse::<VocoderBackend>().unwrap(),
        VocoderBackend::External {
            command: "my vocoder --x".into()
        }
    );
    assert!("griffin_lim:0".parse::<VocoderBackend>().is_err());
    assert!("hifigan".parse::<VocoderBackend>().is_err());
}

#[test]
fn corpus_doubles_and_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FrameSpec::default();
    let mel = mel80();
    let backend = VocoderBackend::GriffinLim { iterations: 4 };
    let cfg = DenoiseConfig::for_backend(0.005, &backend, &spec, &mel).unwrap();
    let mut rng = seeded_rng(6);
    let mut records = Vec::new();
    for (i, spk) in ["a", "b", "c"].iter().enumerate() {
        let path = dir.path().join(format!("{spk}.wav"));
        crate::dsp::write_wav(&path, &speechy(&mut rng, 6000)).unwrap();
        records.push(crate::manifest::Record {
            speaker_id: spk.to_string(),
            grade: i as u32 + 1,
            utterance_id: "u0".into(),
            path,
            duration_s: 6000.0 / 16000.0,
        });
    }
    let manifest = Manifest::new(records).unwrap();
    let run = |out: &Path| saa_corpus(&manifest, &backend, &cfg, &spec, &mel, out).unwrap();
    let out1 = run(&dir.path().join("saa1"));
    assert_eq!(out1.len(), 6);
    assert_eq!(&out1.records[..3], manifest.records.as_slice());
    for (orig, syn) in manifest.records.iter().zip(&out1.records[3..]) {
        assert_eq!(syn.speaker_id, orig.speaker_id);
        assert_eq!(syn.grade, orig.grade);
        assert_eq!(syn.utterance_id, "u0_saa");
        assert!(syn.path.file_name().unwrap().to_string_lossy().ends_with("_saa.wav"));
        assert_eq!(read_wav(&syn.path).unwrap().len(), 6000);
    }
    let out2 = run(&dir.path().join("saa2"));
    for (a, b) in out1.records[3..].iter().zip(&out2.records[3..]) {
        assert_eq!(std::fs::read(&a.path).unwrap(), std::fs::read(&b.path).unwrap());
    }
}

#[test]
fn corpus_reports_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::new(vec![crate::manifest::Record {
        speaker_id: "a".into(),
        grade: 1,
        utterance_id: "u".into(),
        path: dir.path().join("missing.wav"),
        duration_s: 1.0,
    }])
    .unwrap();
    let cfg = DenoiseConfig {
        strength: 0.0,
        bias_spectrum: Some(vec![0.0; 257]),
    };
    let err = saa_corpus(
        &manifest,
        &VocoderBackend::default(),
        &cfg,
        &FrameSpec::default(),
        &mel80(),
        &dir.path().join("out"),
    )
    .unwrap_err();
    assert!(matches!(err, SaaError::Files(ref f) if f.len() == 1), "{err}");
}
