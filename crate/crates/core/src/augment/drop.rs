use rand::Rng;
use rustfft::num_complex::Complex64;

use super::{AugmentConfig, AugmentError, Result};
use crate::dsp::stft::{istft_complex, stft_complex};
use crate::dsp::{FrameSpec, Waveform, WindowKind};

/// Analysis frames used by band dropping. A periodic Hann window at a quarter
/// hop has a constant squared-window overlap sum, so after padding every
/// input sample sits in the fully overlapped region and masking bins can only
/// remove energy.
pub const DROP_FREQ_FRAMES: FrameSpec = FrameSpec {
    win_length: 400,
    hop_length: 100,
    fft_size: 512,
    window: WindowKind::Hann,
};

/// Zeroes every STFT bin whose centre frequency lies inside one of `bands`
/// (inclusive, in Hz) and resynthesizes with the original phase.
pub fn drop_freq_bands(wave: &Waveform, bands: &[(f64, f64)]) -> Result<Waveform> {
    let spec = DROP_FREQ_FRAMES;
    if wave.len() < spec.win_length {
        return Err(AugmentError::TooShort {
            len: wave.len(),
            need: spec.win_length,
        });
    }
    let pad = spec.win_length;
    let mut padded = vec![0.0; wave.len() + 2 * pad];
    padded[pad..pad + wave.len()].copy_from_slice(&wave.samples);
    let (mut frames, n_frames) = stft_complex(&padded, &spec)?;
    let n_bins = spec.n_bins();
    let bin_hz = f64::from(wave.sample_rate) / spec.fft_size as f64;
    let masked: Vec<usize> = (0..n_bins)
        .filter(|&k| {
            let f = k as f64 * bin_hz;
            bands.iter().any(|&(lo, hi)| f >= lo && f <= hi)
        })
        .collect();
    for t in 0..n_frames {
        for &k in &masked {
            frames[t * n_bins + k] = Complex64::new(0.0, 0.0);
        }
    }
    let out = istft_complex(&frames, n_frames, &spec, padded.len())?;
    Ok(Waveform::new(
        out[pad..pad + wave.len()].to_vec(),
        wave.sample_rate,
    ))
}

/// Removes between `freq_drop_count_range` random bands of width
/// `freq_drop_width * nyquist`, each lying fully inside (0, nyquist).
pub fn drop_freq<R: Rng + ?Sized>(
    wave: &Waveform,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Waveform> {
    let nyquist = f64::from(wave.sample_rate) / 2.0;
    let width = cfg.freq_drop_width * nyquist;
    let (lo, hi) = cfg.freq_drop_count_range;
    let count = rng.gen_range(lo..=hi);
    let bands: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let c = rng.gen_range(width / 2.0..nyquist - width / 2.0);
            (c - width / 2.0, c + width / 2.0)
        })
        .collect();
    drop_freq_bands(wave, &bands)
}

/// Zeroes a random number of random-length chunks in place. Inputs shorter
/// than the minimum chunk length are returned unchanged.
pub fn drop_chunk<R: Rng + ?Sized>(wave: &Waveform, cfg: &AugmentConfig, rng: &mut R) -> Waveform {
    let mut out = wave.clone();
    let (len_lo, len_hi) = cfg.chunk_length_range;
    if wave.len() < len_lo.max(1) {
        return out;
    }
    let (c_lo, c_hi) = cfg.chunk_count_range;
    let count = rng.gen_range(c_lo..=c_hi);
    for _ in 0..count {
        let len = rng.gen_range(len_lo..=len_hi).min(wave.len());
        let start = rng.gen_range(0..=wave.len() - len);
        out.samples[start..start + len].fill(0.0);
    }
    out
}
