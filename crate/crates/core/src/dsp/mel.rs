use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::stft::stft_complex;
use super::{DspError, FeatureMatrix, FrameSpec, Result, Waveform};

/// Floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels` rows over `fft_size / 2 + 1` bins.
#[derive(Debug, Clone)]
pub struct MelMatrix {
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub center_freqs: Vec<f64>,
    pinv: OnceLock<Vec<f64>>,
}

impl PartialEq for MelMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.n_mels == other.n_mels
            && self.n_bins == other.n_bins
            && self.sample_rate == other.sample_rate
    }
}

impl MelMatrix {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `n_mels` outputs for one power (or magnitude) frame.
    pub fn apply(&self, frame: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(frame).map(|(w, x)| w * x).sum();
        }
    }

    /// Least-squares pseudo-inverse, `n_bins x n_mels` row-major. Computed once.
    pub fn pseudo_inverse(&self) -> &[f64] {
        self.pinv.get_or_init(|| {
            let m = DMatrix::from_row_slice(self.n_mels, self.n_bins, &self.weights);
            let pinv = m
                .pseudo_inverse(1e-10)
                .expect("pseudo-inverse with non-negative epsilon");
            let mut out = Vec::with_capacity(self.n_bins * self.n_mels);
            for r in 0..self.n_bins {
                for c in 0..self.n_mels {
                    out.push(pinv[(r, c)]);
                }
            }
            out
        })
    }
}

pub fn mel_filterbank_matrix(
    n_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<MelMatrix> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) || n_mels == 0 || fft_size < 2 {
        return Err(DspError::BadRange {
            fmin,
            fmax,
            nyquist,
        });
    }
    let n_bins = fft_size / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / fft_size as f64;
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= c {
                (f - lo) / (c - lo)
            } else if f > c && f < hi {
                (hi - f) / (hi - c)
            } else {
                0.0
            };
            weights[m * n_bins + k] = w;
        }
    }
    Ok(MelMatrix {
        weights,
        n_mels,
        n_bins,
        fmin,
        fmax,
        sample_rate,
        fft_size,
        center_freqs: edges[1..=n_mels].to_vec(),
        pinv: OnceLock::new(),
    })
}

/// `ln(max(mel . |X|^2, 1e-10))` per frame.
pub fn log_mel_fbank(wave: &Waveform, spec: &FrameSpec, mel: &MelMatrix) -> Result<FeatureMatrix> {
    if wave.sample_rate != mel.sample_rate {
        return Err(DspError::RateMismatch {
            expected: mel.sample_rate,
            got: wave.sample_rate,
        });
    }
    if spec.n_bins() != mel.n_bins {
        return Err(DspError::DimMismatch(format!(
            "frame spec has {} bins, mel matrix {}",
            spec.n_bins(),
            mel.n_bins
        )));
    }
    let (frames, n_frames) = stft_complex(&wave.samples, spec)?;
    let n_bins = mel.n_bins;
    let mut data = vec![0.0; n_frames * mel.n_mels];
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        for (p, c) in power.iter_mut().zip(&frames[t * n_bins..(t + 1) * n_bins]) {
            *p = c.norm_sqr();
        }
        let out = &mut data[t * mel.n_mels..(t + 1) * mel.n_mels];
        mel.apply(&power, out);
        out.iter_mut().for_each(|v| *v = v.max(LOG_FLOOR).ln());
    }
    Ok(FeatureMatrix {
        data,
        n_frames,
        n_mels: mel.n_mels,
        frame_spec: *spec,
    })
}
