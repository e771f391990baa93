use rustfft::num_complex::Complex64;

use super::{Result, SaaError};
use crate::dsp::stft::{istft_complex, stft_complex};
use crate::dsp::{quantize_pcm16, FrameSpec, MelMatrix, Spectrogram, Waveform};

/// Mel-domain values to per-bin linear values via the clamped least-squares
/// pseudo-inverse of `mel`.
///
/// `mel_values` is mel-major (`n_mels` rows of `n_frames` values); the result
/// is frame-major, `n_frames` rows of `n_bins`.
pub fn mel_to_linear(mel_values: &[f64], n_frames: usize, mel: &MelMatrix) -> Result<Vec<f64>> {
    if mel_values.len() != mel.n_mels * n_frames {
        return Err(SaaError::DimMismatch(format!(
            "{} values for {} mels x {} frames",
            mel_values.len(),
            mel.n_mels,
            n_frames
        )));
    }
    let pinv = mel.pseudo_inverse();
    let (nb, nm) = (mel.n_bins, mel.n_mels);
    let mut out = vec![0.0; n_frames * nb];
    let mut column = vec![0.0; nm];
    for t in 0..n_frames {
        for (m, c) in column.iter_mut().enumerate() {
            *c = mel_values[m * n_frames + t];
        }
        let row = &mut out[t * nb..(t + 1) * nb];
        for (b, o) in row.iter_mut().enumerate() {
            let v: f64 = pinv[b * nm..(b + 1) * nm].iter().zip(&column).map(|(p, c)| p * c).sum();
            *o = v.max(0.0);
        }
    }
    Ok(out)
}

/// `|| |stft(x)| - mag ||_F / || mag ||_F`; zero when both are zero.
pub fn spectral_convergence(x: &Waveform, magnitude: &Spectrogram) -> Result<f64> {
    let (frames, n) = stft_complex(&x.samples, &magnitude.frame_spec)?;
    if n != magnitude.n_frames {
        return Err(SaaError::DimMismatch(format!(
            "{n} frames vs {} in target",
            magnitude.n_frames
        )));
    }
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (c, m) in frames.iter().zip(&magnitude.magnitude) {
        diff += (c.norm() - m).powi(2);
        norm += m * m;
    }
    Ok(if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    })
}

/// Griffin-Lim phase reconstruction from zero initial phase.
///
/// Runs `iterations` inverse transforms, re-estimating the phase from the
/// previous estimate between them. The output spans every frame, i.e.
/// `(T - 1) * hop + win` samples.
pub fn griffin_lim(magnitude: &Spectrogram, iterations: usize) -> Result<Waveform> {
    if iterations == 0 {
        return Err(SaaError::InvalidConfig("griffin-lim needs at least one iteration".into()));
    }
    let spec = &magnitude.frame_spec;
    let n_frames = magnitude.n_frames;
    let len = spec.frames_to_samples(n_frames);
    let mut frames: Vec<Complex64> = magnitude.magnitude.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let mut x = Vec::new();
    for it in 0..iterations {
        x = istft_complex(&frames, n_frames, spec, len)?;
        if it + 1 == iterations {
            break;
        }
        let (est, _) = stft_complex(&x, spec)?;
        for ((f, e), &m) in frames.iter_mut().zip(&est).zip(&magnitude.magnitude) {
            let n = e.norm();
            *f = if n > 0.0 {
                e * (m / n)
            } else {
                Complex64::new(m, 0.0)
            };
        }
    }
    Ok(Waveform::new(x, magnitude.sample_rate))
}

/// Log-mel spectrogram at the vocoder boundary: `f32`, mel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub data: Vec<f32>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
}

impl LogMel {
    /// Transposes frame-major log-mel features into the boundary layout.
    pub fn from_features(data: &[f64], n_frames: usize, n_mels: usize, sample_rate: u32) -> Self {
        let mut out = vec![0.0f32; data.len()];
        for t in 0..n_frames {
            for m in 0..n_mels {
                out[m * n_frames + t] = data[t * n_mels + m] as f32;
            }
        }
        Self {
            data: out,
            n_mels,
            n_frames,
            sample_rate,
        }
    }

    pub fn zeros(n_mels: usize, n_frames: usize, sample_rate: u32) -> Self {
        Self {
            data: vec![0.0; n_mels * n_frames],
            n_mels,
            n_frames,
            sample_rate,
        }
    }
}

/// The in-repo vocoder: exponentiate, invert the filterbank, take the square
/// root to get magnitudes, run Griffin-Lim and round to the PCM16 grid.
pub fn vocode_griffin_lim(
    logmel: &LogMel,
    iterations: usize,
    spec: &FrameSpec,
    mel: &MelMatrix,
) -> Result<Waveform> {
    if logmel.n_mels != mel.n_mels || logmel.sample_rate != mel.sample_rate || spec.n_bins() != mel.n_bins {
        return Err(SaaError::DimMismatch(format!(
            "{} mels @ {} Hz for a {}-mel {} Hz filterbank with {} bins (frame spec {})",
            logmel.n_mels,
            logmel.sample_rate,
            mel.n_mels,
            mel.sample_rate,
            mel.n_bins,
            spec.n_bins()
        )));
    }
    let energies: Vec<f64> = logmel.data.iter().map(|&v| f64::from(v).exp()).collect();
    let power = mel_to_linear(&energies, logmel.n_frames, mel)?;
    let magnitude = power.iter().map(|p| p.sqrt()).collect();
    let mag = Spectrogram::magnitude_only(magnitude, logmel.n_frames, *spec, logmel.sample_rate);
    let wave = griffin_lim(&mag, iterations)?;
    Ok(quantize_pcm16(&wave))
}

/// Strength and bias spectrum of the vocoder denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub strength: f64,
    /// Mean magnitude per bin of the backend's output for an all-zero
    /// log-mel input.
    pub bias_spectrum: Option<Vec<f64>>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            strength: 0.005,
            bias_spectrum: None,
        }
    }
}

impl DenoiseConfig {
    /// Configuration with the bias spectrum of `backend` already measured.
    pub fn for_backend(
        strength: f64,
        backend: &super::VocoderBackend,
        spec: &FrameSpec,
        mel: &MelMatrix,
    ) -> Result<Self> {
        Ok(Self {
            strength,
            bias_spectrum: Some(backend.bias_spectrum(spec, mel)?),
        })
    }
}

/// Mean magnitude spectrum of `wave` over its frames.
pub fn mean_magnitude(wave: &Waveform, spec: &FrameSpec) -> Result<Vec<f64>> {
    let (frames, n) = stft_complex(&wave.samples, spec)?;
    let nb = spec.n_bins();
    let mut acc = vec![0.0; nb];
    for t in 0..n {
        for (a, c) in acc.iter_mut().zip(&frames[t * nb..(t + 1) * nb]) {
            *a += c.norm();
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Spectral subtraction of `strength * bias` from every frame, keeping phase.
pub fn denoise(wave: &Waveform, cfg: &DenoiseConfig, spec: &FrameSpec) -> Result<Waveform> {
    let bias = cfg.bias_spectrum.as_ref().ok_or(SaaError::MissingBias)?;
    if bias.len() != spec.n_bins() {
        return Err(SaaError::DimMismatch(format!(
            "bias has {} bins, frame spec {}",
            bias.len(),
            spec.n_bins()
        )));
    }
    if !(cfg.strength >= 0.0) {
        return Err(SaaError::InvalidConfig(format!("denoise strength {}", cfg.strength)));
    }
    let (mut frames, n) = stft_complex(&wave.samples, spec)?;
    let nb = spec.n_bins();
    for t in 0..n {
        for (c, b) in frames[t * nb..(t + 1) * nb].iter_mut().zip(bias) {
            let m = c.norm();
            if m > 0.0 {
                let target = (m - cfg.strength * b).max(0.0);
                *c *= target / m;
            }
        }
    }
    let out = istft_complex(&frames, n, spec, wave.len())?;
    Ok(Waveform::new(out, wave.sample_rate))
}
