//! Audio I/O, framing, STFT/iSTFT and log-mel filterbank features.
//!
//! Framing is non-centered: frame `t` covers samples `[t*hop, t*hop + win)`,
//! so a signal of `n >= win` samples yields `(n - win) / hop + 1` frames.

mod fbank_file;
mod mel;
pub(crate) mod stft;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

pub use fbank_file::{decode_fbank, encode_fbank, read_fbank, write_fbank};
pub use mel::{hz_to_mel, log_mel_fbank, mel_filterbank_matrix, mel_to_hz, MelMatrix, LOG_FLOOR};
pub use stft::{istft, stft, Spectrogram};
pub use wav::{decode_wav, encode_wav, quantize_pcm16, read_wav, write_wav};

/// Sample rate of the standard pipeline.
pub const STANDARD_RATE: u32 = 16_000;

#[derive(Error, Debug)]
pub enum DspError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported channel count {0}, expected mono")]
    UnsupportedChannels(u16),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("sample rate mismatch: expected {expected}, got {got}")]
    RateMismatch { expected: u32, got: u32 },
    #[error("signal too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad frequency range: fmin {fmin} fmax {fmax} (nyquist {nyquist})")]
    BadRange { fmin: f64, fmax: f64, nyquist: f64 },
    #[error("invalid frame spec: {0}")]
    InvalidFrameSpec(String),
    #[error("bad magic in {0} file")]
    BadMagic(&'static str),
    #[error("unsupported {format} version {version}")]
    VersionMismatch { format: &'static str, version: u32 },
    #[error("wav: {0}")]
    Wav(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean power `sum(x^2) / n`.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.energy() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    Hann,
    Hamming,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let (a0, a1) = match self {
            WindowKind::Hann => (0.5, 0.5),
            WindowKind::Hamming => (0.54, 0.46),
        };
        (0..n)
            .map(|i| a0 - a1 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
            WindowKind::Hamming => "hamming",
        }
    }
}

impl std::str::FromStr for WindowKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hann" => Ok(WindowKind::Hann),
            "hamming" => Ok(WindowKind::Hamming),
            other => Err(format!("unknown window '{other}'")),
        }
    }
}

/// Frame geometry: 25 ms windows every 10 ms at 16 kHz by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameSpec {
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            win_length: 400,
            hop_length: 160,
            fft_size: 512,
            window: WindowKind::Hamming,
        }
    }
}

impl FrameSpec {
    pub fn new(
        win_length: usize,
        hop_length: usize,
        fft_size: usize,
        window: WindowKind,
    ) -> Result<Self> {
        let spec = Self {
            win_length,
            hop_length,
            fft_size,
            window,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.win_length || self.win_length > self.fft_size
        {
            return Err(DspError::InvalidFrameSpec(format!(
                "need 0 < hop ({}) <= win ({}) <= fft ({})",
                self.hop_length, self.win_length, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of non-centered frames for `n` samples, `None` if `n < win_length`.
    pub fn num_frames(&self, n: usize) -> Option<usize> {
        (n >= self.win_length).then(|| (n - self.win_length) / self.hop_length + 1)
    }

    /// Samples spanned by `t` frames.
    pub fn frames_to_samples(&self, t: usize) -> usize {
        if t == 0 {
            0
        } else {
            (t - 1) * self.hop_length + self.win_length
        }
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        self.window.coefficients(self.win_length)
    }
}

/// Frame geometry plus mel filterbank layout of the feature front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbankConfig {
    pub frame: FrameSpec,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper band edge; the Nyquist frequency when `None`.
    pub fmax: Option<f64>,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            frame: FrameSpec::default(),
            n_mels: 80,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl FbankConfig {
    pub fn mel_matrix(&self, sample_rate: u32) -> Result<MelMatrix> {
        self.frame.validate()?;
        let fmax = self.fmax.unwrap_or(f64::from(sample_rate) / 2.0);
        mel_filterbank_matrix(self.n_mels, self.frame.fft_size, sample_rate, self.fmin, fmax)
    }
}

/// Log-mel energies, `n_frames` rows of `n_mels` values (frame-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub frame_spec: FrameSpec,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_mels)
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.data[t * self.n_mels + m]
    }

    /// Time-averaged log-mel vector.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_mels];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.n_frames.max(1) as f64);
        acc
    }
}
