use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{DspError, FrameSpec, Result, Waveform};

/// Short-time spectrum, `n_frames` rows of `n_bins` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Vec<f64>,
    pub phase: Option<Vec<f64>>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub frame_spec: FrameSpec,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn magnitude_only(
        magnitude: Vec<f64>,
        n_frames: usize,
        frame_spec: FrameSpec,
        sample_rate: u32,
    ) -> Self {
        Self {
            magnitude,
            phase: None,
            n_frames,
            n_bins: frame_spec.n_bins(),
            frame_spec,
            sample_rate,
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.magnitude[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Per-bin power `|X|^2`.
    pub fn power(&self) -> Vec<f64> {
        self.magnitude.iter().map(|m| m * m).collect()
    }
}

/// Complex one-sided STFT frames, used by the magnitude/phase wrappers.
pub(crate) fn stft_complex(samples: &[f64], spec: &FrameSpec) -> Result<(Vec<Complex64>, usize)> {
    spec.validate()?;
    let n_frames = spec.num_frames(samples.len()).ok_or(DspError::TooShort {
        len: samples.len(),
        need: spec.win_length,
    })?;
    let window = spec.window_coefficients();
    let n_bins = spec.n_bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(spec.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); spec.fft_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * spec.hop_length;
        let frame = &samples[start..start + spec.win_length];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < spec.win_length {
                Complex64::new(frame[i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf[..n_bins]);
    }
    Ok((out, n_frames))
}

/// Weighted overlap-add of one-sided complex frames with window-squared
/// normalization. Samples not covered by any frame are zero.
pub(crate) fn istft_complex(
    frames: &[Complex64],
    n_frames: usize,
    spec: &FrameSpec,
    out_length: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let n_bins = spec.n_bins();
    if frames.len() != n_frames * n_bins {
        return Err(DspError::DimMismatch(format!(
            "{} values for {} frames of {} bins",
            frames.len(),
            n_frames,
            n_bins
        )));
    }
    let expected = spec.num_frames(out_length).unwrap_or(0);
    if expected.abs_diff(n_frames) > 1 {
        return Err(DspError::DimMismatch(format!(
            "{n_frames} frames cannot produce {out_length} samples (expected {expected} frames)"
        )));
    }
    let n = spec.fft_size;
    let window = spec.window_coefficients();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut acc = vec![0.0; out_length];
    let mut norm = vec![0.0; out_length];
    let scale = 1.0 / n as f64;
    for t in 0..n_frames {
        let half = &frames[t * n_bins..(t + 1) * n_bins];
        buf[..n_bins].copy_from_slice(half);
        for k in 1..n - n_bins + 1 {
            buf[n - k] = half[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * spec.hop_length;
        for i in 0..spec.win_length {
            let pos = start + i;
            if pos >= out_length {
                break;
            }
            acc[pos] += window[i] * buf[i].re * scale;
            norm[pos] += window[i] * window[i];
        }
    }
    for (a, w) in acc.iter_mut().zip(&norm) {
        if *w > 1e-12 {
            *a /= w;
        } else {
            *a = 0.0;
        }
    }
    Ok(acc)
}

/// Magnitude and phase STFT with non-centered frames.
pub fn stft(wave: &Waveform, spec: &FrameSpec) -> Result<Spectrogram> {
    let (frames, n_frames) = stft_complex(&wave.samples, spec)?;
    Ok(Spectrogram {
        magnitude: frames.iter().map(|c| c.norm()).collect(),
        phase: Some(frames.iter().map(|c| c.arg()).collect()),
        n_frames,
        n_bins: spec.n_bins(),
        frame_spec: *spec,
        sample_rate: wave.sample_rate,
    })
}

/// Inverse STFT. A spectrogram without phase is treated as zero-phase.
pub fn istft(spec_in: &Spectrogram, spec: &FrameSpec, out_length: usize) -> Result<Waveform> {
    if spec_in.n_bins != spec.n_bins() {
        return Err(DspError::DimMismatch(format!(
            "{} bins, frame spec has {}",
            spec_in.n_bins,
            spec.n_bins()
        )));
    }
    let frames: Vec<Complex64> = match &spec_in.phase {
        Some(phase) => {
            if phase.len() != spec_in.magnitude.len() {
                return Err(DspError::DimMismatch("phase/magnitude length".into()));
            }
            spec_in
                .magnitude
                .iter()
                .zip(phase)
                .map(|(&m, &p)| Complex64::from_polar(m, p))
                .collect()
        }
        None => spec_in
            .magnitude
            .iter()
            .map(|&m| Complex64::new(m, 0.0))
            .collect(),
    };
    let samples = istft_complex(&frames, spec_in.n_frames, spec, out_length)?;
    Ok(Waveform::new(samples, spec_in.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::WindowKind;
    use rand::Rng;

    fn sine(freq: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    #[test]
    fn frame_count() {
        let s = stft(&Waveform::zeros(16000, 16000), &FrameSpec::default()).unwrap();
        assert_eq!(s.n_frames, 98);
        assert_eq!(s.n_bins, 257);
        assert!(s.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn frame_count_formula_exhaustive() {
        for win in [4usize, 7, 10] {
            for hop in 1..=win {
                let spec = FrameSpec::new(win, hop, 16, WindowKind::Hann).unwrap();
                for n in win..win + 40 {
                    let brute = (0..).take_while(|t| t * hop + win <= n).count();
                    assert_eq!(spec.num_frames(n), Some(brute));
                    let (_, t) = stft_complex(&vec![0.0; n], &spec).unwrap();
                    assert_eq!(t, brute);
                }
            }
        }
    }

    #[test]
    fn sine_peak_bin() {
        let s = stft(&sine(1000.0, 16000), &FrameSpec::default()).unwrap();
        for t in 0..s.n_frames {
            let row = s.frame(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, 32);
        }
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            stft(&Waveform::zeros(399, 16000), &FrameSpec::default()),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn roundtrip_interior() {
        let mut rng = crate::seeded_rng(3);
        for len in [8000usize, 16000, 16123] {
            let x = Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000);
            let spec = FrameSpec::default();
            let y = istft(&stft(&x, &spec).unwrap(), &spec, len).unwrap();
            let covered = spec.frames_to_samples(spec.num_frames(len).unwrap());
            let err = x.samples[..covered]
                .iter()
                .zip(&y.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "err {err}");
        }
    }

    #[test]
    fn zero_spectrogram_gives_zero_wave() {
        let spec = FrameSpec::default();
        let s = Spectrogram::magnitude_only(vec![0.0; 98 * 257], 98, spec, 16000);
        let y = istft(&s, &spec, 16000).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_length() {
        let spec = FrameSpec::default();
        let s = Spectrogram::magnitude_only(vec![0.0; 98 * 257], 98, spec, 16000);
        assert!(istft(&s, &spec, 16000 + 160).is_ok());
        assert!(matches!(
            istft(&s, &spec, 16000 + 2 * 160),
            Err(DspError::DimMismatch(_))
        ));
        assert!(matches!(
            istft(&s, &spec, 8000),
            Err(DspError::DimMismatch(_))
        ));
    }
}
