//! Synthetic longitudinal corpus.
//!
//! Each speaker is a formant synthesizer: short voiced stretches (a glottal
//! pulse train at a speaker-specific f0 plus breath noise) alternate with
//! longer noise-excited stretches, and both pass through three second-order
//! resonators. Every grade lowers f0 and the formants by
//! speaker-specific multiplicative factors, so a speaker's voice drifts
//! across grades while staying distinct from other speakers.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dsp::{self, DspError, Waveform, STANDARD_RATE};
use crate::manifest::{Manifest, ManifestError, Record};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("duration {0} s is below the 0.5 s minimum")]
    TooShort(f64),
    #[error("invalid corpus spec: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Relative half-range of the phrase-level f0 contour.
const CONTOUR_DEPTH: f64 = 0.10;
const PEAK: f64 = 0.5;
const MIN_DURATION_S: f64 = 0.5;
/// Duration ranges of voiced and unvoiced stretches, seconds.
const VOICED_S: (f64, f64) = (0.06, 0.12);
const UNVOICED_S: (f64, f64) = (0.2, 0.4);
/// Voicing on/off ramp.
const RAMP_S: f64 = 0.005;
/// Noise level of unvoiced stretches relative to the voiced source.
const FRICATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    /// Hz.
    pub base_f0: f64,
    /// Center frequency and bandwidth in Hz, ascending.
    pub formants: [(f64, f64); 3],
    /// f0 multiplier per grade.
    pub f0_decay: f64,
    /// Formant multiplier per grade.
    pub formant_shift: f64,
    /// Relative per-period f0 perturbation.
    pub jitter: f64,
    /// Aspiration noise level relative to the voiced source.
    pub noise_level: f64,
}

impl SpeakerProfile {
    /// `base_f0 * f0_decay^grade`.
    pub fn f0(&self, grade: u32) -> f64 {
        self.base_f0 * self.f0_decay.powi(grade as i32)
    }

    /// Formants scaled by `formant_shift^grade`; bandwidths are unchanged.
    pub fn formants_at(&self, grade: u32) -> [(f64, f64); 3] {
        let s = self.formant_shift.powi(grade as i32);
        self.formants.map(|(f, b)| (f * s, b))
    }
}

pub fn gen_speaker<R: Rng + ?Sized>(speaker_id: &str, rng: &mut R) -> SpeakerProfile {
    SpeakerProfile {
        speaker_id: speaker_id.to_string(),
        base_f0: rng.gen_range(200.0..320.0),
        formants: [
            (rng.gen_range(650.0..1050.0), rng.gen_range(70.0..120.0)),
            (rng.gen_range(1600.0..2700.0), rng.gen_range(100.0..170.0)),
            (rng.gen_range(3100.0..4300.0), rng.gen_range(150.0..250.0)),
        ],
        f0_decay: rng.gen_range(0.93..0.98),
        formant_shift: rng.gen_range(0.95..0.99),
        jitter: rng.gen_range(0.005..0.02),
        noise_level: rng.gen_range(0.05..0.2),
    }
}

/// Smooth contour in `[-1, 1]` made of three slow sinusoids, with zero mean
/// over the samples where `weight` is set.
fn phrase_contour<R: Rng + ?Sized>(weight: &[bool], sr: f64, rng: &mut R) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.2..1.5), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.3..1.0)))
        .collect();
    let mut c: Vec<f64> = (0..weight.len())
        .map(|i| {
            let t = i as f64 / sr;
            comps.iter().map(|(f, p, a)| a * (2.0 * PI * f * t + p).sin()).sum()
        })
        .collect();
    let count = weight.iter().filter(|&&w| w).count().max(1);
    let mean = c.iter().zip(weight).filter(|(_, &w)| w).map(|(v, _)| v).sum::<f64>() / count as f64;
    c.iter_mut().for_each(|v| *v -= mean);
    let peak = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        c.iter_mut().for_each(|v| *v /= peak);
    }
    c
}

/// Alternating voiced and unvoiced stretches as a voicing gain in `[0, 1]`
/// with short linear ramps at the boundaries.
fn voicing_mask<R: Rng + ?Sized>(n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let mut hard = Vec::with_capacity(n);
    let mut voiced = rng.gen_bool(0.5);
    while hard.len() < n {
        let (lo, hi) = if voiced { VOICED_S } else { UNVOICED_S };
        let len = (rng.gen_range(lo..hi) * sr) as usize;
        hard.extend(std::iter::repeat(if voiced { 1.0 } else { 0.0 }).take(len.min(n - hard.len())));
        voiced = !voiced;
    }
    let ramp = (RAMP_S * sr) as usize;
    let mut mask = hard.clone();
    for i in 1..n {
        if hard[i] != hard[i - 1] {
            let (from, to) = (hard[i - 1], hard[i]);
            for k in 0..ramp.min(n - i) {
                mask[i + k] = from + (to - from) * (k + 1) as f64 / (ramp + 1) as f64;
            }
        }
    }
    mask
}

/// Glottal flow over one period, phase in `[0, 1)`: raised-cosine opening,
/// cosine closing, closed for the last 20%.
fn glottal_flow(phase: f64) -> f64 {
    const OPEN: f64 = 0.6;
    const CLOSE: f64 = 0.8;
    if phase < OPEN {
        0.5 * (1.0 - (PI * phase / OPEN).cos())
    } else if phase < CLOSE {
        (0.5 * PI * (phase - OPEN) / (CLOSE - OPEN)).cos()
    } else {
        0.0
    }
}

/// Second-order resonator with unit gain at DC, in place.
fn resonate(x: &mut [f64], freq: f64, bandwidth: f64, sr: f64) {
    let r = (-PI * bandwidth / sr).exp();
    let a1 = 2.0 * r * (2.0 * PI * freq / sr).cos();
    let a2 = -r * r;
    let gain = 1.0 - a1 - a2;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = gain * *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// One utterance of `profile` at `grade`, peak-normalized to 0.5.
///
/// Voiced stretches are excited by the glottal pulse train (f0 following a
/// phrase contour within +-10%, with per-period jitter) plus breath noise;
/// unvoiced stretches by noise alone. Both go through the same formant
/// resonators.
pub fn synth_utterance<R: Rng + ?Sized>(
    profile: &SpeakerProfile,
    grade: u32,
    duration_s: f64,
    rng: &mut R,
) -> Result<Waveform> {
    if !(duration_s >= MIN_DURATION_S) {
        return Err(SynthError::TooShort(duration_s));
    }
    let sr = f64::from(STANDARD_RATE);
    let n = (duration_s * sr).round() as usize;
    let f0 = profile.f0(grade);
    let mask = voicing_mask(n, sr, rng);
    let voiced_samples: Vec<bool> = mask.iter().map(|&m| m > 0.5).collect();
    let contour = phrase_contour(&voiced_samples, sr, rng);

    let mut phase = rng.gen_range(0.0..1.0);
    let mut jitter = 1.0;
    let mut prev_flow = glottal_flow(phase);
    let mut pulses: Vec<f64> = contour
        .iter()
        .map(|c| {
            phase += f0 * (1.0 + CONTOUR_DEPTH * c) * jitter / sr;
            if phase >= 1.0 {
                phase -= 1.0;
                jitter = 1.0 + profile.jitter * rng.gen_range(-1.0..1.0);
            }
            let flow = glottal_flow(phase);
            // Lip radiation as a first difference of the flow.
            let d = flow - prev_flow;
            prev_flow = flow;
            d
        })
        .collect();
    normalize_rms(&mut pulses);
    let mut noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize_rms(&mut noise);

    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let m = mask[i];
            m * (pulses[i] + profile.noise_level * noise[i]) + (1.0 - m) * FRICATION * noise[i]
        })
        .collect();
    for (f, b) in profile.formants_at(grade) {
        resonate(&mut x, f, b, sr);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Ok(Waveform::new(x, STANDARD_RATE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub grades: u32,
    pub utts_per_grade: usize,
    pub duration_s: f64,
    /// Speakers held out for evaluation; the rest are for training.
    pub eval_speakers: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            grades: 4,
            utts_per_grade: 12,
            duration_s: 3.0,
            eval_speakers: 6,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_speakers < 2 {
            return bad("need at least 2 speakers");
        }
        if self.grades == 0 || self.utts_per_grade == 0 {
            return bad("grades and utts_per_grade must be positive");
        }
        if self.eval_speakers >= self.n_speakers {
            return bad("eval_speakers must leave at least one training speaker");
        }
        if !(self.duration_s >= MIN_DURATION_S) {
            return Err(SynthError::TooShort(self.duration_s));
        }
        Ok(())
    }

    pub fn speaker_id(&self, i: usize) -> String {
        format!("spk{i:02}")
    }

    /// The last `eval_speakers` ids.
    pub fn is_eval_speaker(&self, speaker_id: &str) -> bool {
        (self.n_speakers - self.eval_speakers..self.n_speakers).any(|i| self.speaker_id(i) == speaker_id)
    }
}

/// Paths written by [`gen_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub manifest: PathBuf,
    pub train: PathBuf,
    pub eval: PathBuf,
    pub noise_dir: PathBuf,
    pub rir_dir: PathBuf,
}

impl CorpusLayout {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            manifest: out_dir.join("manifest.csv"),
            train: out_dir.join("train.csv"),
            eval: out_dir.join("eval.csv"),
            noise_dir: out_dir.join("noise"),
            rir_dir: out_dir.join("rir"),
        }
    }
}

const NOISE_FILES: usize = 6;
const RIR_FILES: usize = 6;

/// Colored noise: white noise through a one-pole lowpass of random strength.
fn synth_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Waveform {
    let a: f64 = rng.gen_range(0.0..0.95);
    let mut y = 0.0;
    let x: Vec<f64> = (0..n)
        .map(|_| {
            y = a * y + (1.0 - a) * rng.gen_range(-1.0..1.0);
            y
        })
        .collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Waveform::new(x.iter().map(|v| 0.5 * v / peak).collect(), STANDARD_RATE)
}

/// Exponentially decaying noise tail behind a unit direct path.
fn synth_rir<R: Rng + ?Sized>(rng: &mut R) -> Waveform {
    let sr = f64::from(STANDARD_RATE);
    let rt60: f64 = rng.gen_range(0.15..0.5);
    let n = (rt60 * sr) as usize;
    let pre_delay = rng.gen_range(40..200);
    let decay = (-6.9 / (rt60 * sr)).exp();
    let mut h = vec![0.0; n];
    h[0] = 1.0;
    let mut g = 0.3;
    for v in h.iter_mut().skip(pre_delay) {
        *v = g * rng.gen_range(-1.0..1.0);
        g *= decay;
    }
    Waveform::new(h, STANDARD_RATE)
}

/// Writes the corpus WAVs under `out_dir/wav/<speaker>/g<grade>/`, the
/// manifest with its train/eval speaker split, and small noise and impulse
/// response pools for augmentation. Utterances are synthesized in parallel,
/// each from a seed derived from its key, so the output does not depend on
/// scheduling.
pub fn gen_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let layout = CorpusLayout::new(out_dir);
    let profiles: Vec<SpeakerProfile> = (0..spec.n_speakers)
        .map(|i| {
            let id = spec.speaker_id(i);
            gen_speaker(&id, &mut seeded_rng(derive_seed(spec.seed, &format!("speaker/{id}"))))
        })
        .collect();

    let mut jobs = Vec::new();
    for p in &profiles {
        for g in 1..=spec.grades {
            std::fs::create_dir_all(out_dir.join("wav").join(&p.speaker_id).join(format!("g{g}")))?;
            for u in 0..spec.utts_per_grade {
                jobs.push((p, g, format!("u{u:02}")));
            }
        }
    }
    let records = jobs
        .par_iter()
        .map(|(p, g, utt)| {
            let path = out_dir
                .join("wav")
                .join(&p.speaker_id)
                .join(format!("g{g}"))
                .join(format!("{utt}.wav"));
            let mut rng = seeded_rng(derive_seed(spec.seed, &format!("utt/{}/{g}/{utt}", p.speaker_id)));
            let wave = synth_utterance(p, *g, spec.duration_s, &mut rng)?;
            dsp::write_wav(&path, &wave)?;
            Ok(Record {
                speaker_id: p.speaker_id.clone(),
                grade: *g,
                utterance_id: utt.clone(),
                path,
                duration_s: wave.duration_s(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(records)?;
    manifest.write(&layout.manifest)?;
    manifest
        .filter_speakers(|s| !spec.is_eval_speaker(s))
        .write(&layout.train)?;
    manifest.filter_speakers(|s| spec.is_eval_speaker(s)).write(&layout.eval)?;

    std::fs::create_dir_all(&layout.noise_dir)?;
    std::fs::create_dir_all(&layout.rir_dir)?;
    let mut rng = seeded_rng(derive_seed(spec.seed, "pools"));
    for i in 0..NOISE_FILES {
        let n = rng.gen_range(1..=3) * STANDARD_RATE as usize;
        dsp::write_wav(layout.noise_dir.join(format!("noise{i:02}.wav")), &synth_noise(n, &mut rng))?;
    }
    for i in 0..RIR_FILES {
        dsp::write_wav(layout.rir_dir.join(format!("rir{i:02}.wav")), &synth_rir(&mut rng))?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{log_mel_fbank, mel_filterbank_matrix, FrameSpec};

    fn profile(seed: u64) -> SpeakerProfile {
        gen_speaker("spk", &mut seeded_rng(seed))
    }

    /// Mean f0 over voiced 40 ms frames from the normalized autocorrelation
    /// peak, refined by parabolic interpolation.
    fn mean_f0(wave: &Waveform) -> f64 {
        let sr = f64::from(wave.sample_rate);
        let (win, hop) = (640, 320);
        let (min_lag, max_lag) = ((sr / 500.0) as usize, (sr / 100.0) as usize);
        let x = &wave.samples;
        let mut est = Vec::new();
        let mut start = 0;
        while start + win + max_lag + 1 <= x.len() {
            let ac = |lag: usize| -> f64 {
                let (mut num, mut e0, mut e1) = (0.0, 0.0, 0.0);
                for i in start..start + win {
                    num += x[i] * x[i + lag];
                    e0 += x[i] * x[i];
                    e1 += x[i + lag] * x[i + lag];
                }
                num / (e0 * e1).sqrt().max(1e-12)
            };
            let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(ac).collect();
            let best = r[1..r.len() - 1].iter().fold(f64::MIN, |m, &v| m.max(v));
            // First local peak close to the global one, which guards
            // against subharmonic picks.
            let peak = (1..r.len() - 1).find(|&j| r[j] >= 0.9 * best && r[j] >= r[j - 1] && r[j] >= r[j + 1]);
            if let (true, Some(j)) = (best > 0.8, peak) {
                let (a, b, c) = (r[j - 1], r[j], r[j + 1]);
                let denom = a - 2.0 * b + c;
                let delta = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
                est.push(sr / ((min_lag + j - 1) as f64 + delta));
            }
            start += hop;
        }
        est.iter().sum::<f64>() / est.len() as f64
    }

    #[test]
    fn profiles_are_seeded_and_in_range() {
        assert_eq!(profile(3), profile(3));
        let (a, b) = (profile(3), profile(4));
        assert_ne!(a.base_f0, b.base_f0);
        assert_ne!(a.formants, b.formants);
        for s in 0..200 {
            let p = profile(s);
            assert!((200.0..320.0).contains(&p.base_f0));
            for g in 0..=4 {
                assert!(p.f0(g + 1) < p.f0(g));
                for (f, _) in p.formants_at(g) {
                    assert!(f > 200.0 && f < 7000.0);
                }
            }
        }
    }

    #[test]
    fn utterance_length_peak_and_determinism() {
        let p = profile(1);
        let a = synth_utterance(&p, 2, 3.0, &mut seeded_rng(9)).unwrap();
        assert_eq!(a.len(), 48000);
        assert!((a.peak() - 0.5).abs() < 1e-12);
        let b = synth_utterance(&p, 2, 3.0, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            synth_utterance(&p, 1, 0.4, &mut seeded_rng(9)),
            Err(SynthError::TooShort(_))
        ));
    }

    #[test]
    fn log_mel_peaks_sit_at_shifted_formants() {
        let spec = FrameSpec::default();
        let mel = mel_filterbank_matrix(80, spec.fft_size, STANDARD_RATE, 0.0, 8000.0).unwrap();
        for seed in 0..40 {
            let p = profile(100 + seed);
            for grade in [1, 4] {
                let wave = synth_utterance(&p, grade, 3.0, &mut seeded_rng(seed)).unwrap();
                let v = log_mel_fbank(&wave, &spec, &mel).unwrap().mean_frame();
                for (f, _) in p.formants_at(grade) {
                    let nearest = (0..80)
                        .min_by(|&a, &b| (mel.center_freqs[a] - f).abs().total_cmp(&(mel.center_freqs[b] - f).abs()))
                        .unwrap();
                    let is_max = |j: usize| j > 0 && j < 79 && v[j] >= v[j - 1] && v[j] >= v[j + 1];
                    assert!(
                        (nearest - 1..=nearest + 1).any(is_max),
                        "seed {seed} grade {grade} formant {f:.0} Hz (bin {nearest})"
                    );
                }
            }
        }
    }

    #[test]
    fn f0_decreases_across_grades() {
        for seed in 0..12 {
            let p = profile(200 + seed);
            let means: Vec<f64> = (1..=4)
                .map(|g| {
                    let per_utt: Vec<f64> = (0..3)
                        .map(|u| mean_f0(&synth_utterance(&p, g, 1.5, &mut seeded_rng(u * 10 + g as u64)).unwrap()))
                        .collect();
                    per_utt.iter().sum::<f64>() / per_utt.len() as f64
                })
                .collect();
            for (g, m) in means.iter().enumerate() {
                let expected = p.f0(g as u32 + 1);
                assert!((m / expected - 1.0).abs() < 0.06, "estimate {m} vs {expected}");
            }
            assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
        }
    }

    #[test]
    fn speakers_are_separable() {
        let spec = FrameSpec::default();
        let mel = mel_filterbank_matrix(80, spec.fft_size, STANDARD_RATE, 0.0, 8000.0).unwrap();
        let feats: Vec<Vec<Vec<f64>>> = (0..5)
            .map(|s| {
                let p = profile(300 + s);
                (0..4)
                    .map(|u| {
                        let w = synth_utterance(&p, 2, 1.5, &mut seeded_rng(1000 * s + u)).unwrap();
                        log_mel_fbank(&w, &spec, &mel).unwrap().mean_frame()
                    })
                    .collect()
            })
            .collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for s in 0..feats.len() {
            for t in 0..feats.len() {
                for (i, a) in feats[s].iter().enumerate() {
                    for (j, b) in feats[t].iter().enumerate() {
                        if s == t && i < j {
                            intra.push(dist(a, b));
                        } else if s < t {
                            inter.push(dist(a, b));
                        }
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) < mean(&inter), "{} vs {}", mean(&intra), mean(&inter));
    }

    #[test]
    fn small_corpus_layout_and_rerun() {
        let spec = CorpusSpec {
            n_speakers: 4,
            grades: 2,
            utts_per_grade: 2,
            duration_s: 0.5,
            eval_speakers: 1,
            seed: 3,
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = gen_corpus(&spec, d1.path()).unwrap();
        gen_corpus(&spec, d2.path()).unwrap();
        assert_eq!(m.len(), 16);
        let layout = CorpusLayout::new(d1.path());
        let train = Manifest::read(&layout.train).unwrap();
        let eval = Manifest::read(&layout.eval).unwrap();
        assert_eq!(eval.speakers(), vec!["spk03"]);
        assert!(train.speakers().iter().all(|s| !eval.speakers().contains(s)));
        assert_eq!(train.len() + eval.len(), 16);
        assert_eq!(Manifest::read(&layout.manifest).unwrap(), m);
        assert_eq!(crate::augment::load_pool(&layout.noise_dir).unwrap().len(), NOISE_FILES);
        assert_eq!(crate::augment::load_pool(&layout.rir_dir).unwrap().len(), RIR_FILES);

        let mut files = Vec::new();
        let mut stack = vec![d1.path().to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in std::fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push(p);
                }
            }
        }
        assert_eq!(files.len(), 16 + 3 + NOISE_FILES + RIR_FILES);
        for f in files {
            let rel = f.strip_prefix(d1.path()).unwrap();
            assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(d2.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    #[test]
    fn spec_validation() {
        let ok = CorpusSpec::default();
        assert!(ok.validate().is_ok());
        assert!(CorpusSpec { n_speakers: 1, eval_speakers: 0, ..ok.clone() }.validate().is_err());
        assert!(CorpusSpec { eval_speakers: 20, ..ok.clone() }.validate().is_err());
        assert!(CorpusSpec { duration_s: 0.1, ..ok }.validate().is_err());
    }
}
