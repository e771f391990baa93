//! Online waveform augmentation: additive noise at a random SNR, room impulse
//! response convolution, frequency-band dropping and time-chunk dropping.
//!
//! [`augment_pipeline`] applies the enabled stages in the fixed order
//! noise, rir, drop_freq, drop_chunk.

mod drop;
mod noise;

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::dsp::{self, DspError, Waveform};

pub use drop::{drop_chunk, drop_freq, drop_freq_bands, DROP_FREQ_FRAMES};
pub use noise::{apply_rir, convolve_truncated, mix_noise};

#[derive(Error, Debug)]
pub enum AugmentError {
    #[error("noise has zero power")]
    DegenerateNoise,
    #[error("clean signal has zero power")]
    DegenerateClean,
    #[error("sample rate mismatch: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("signal too short: {len} samples, need {need}")]
    TooShort { len: usize, need: usize },
    #[error("{0} stage enabled but its pool is empty")]
    EmptyPool(&'static str),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// Enable flag plus the probability of applying a stage to an utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub enabled: bool,
    pub probability: f64,
}

impl Stage {
    pub const ON: Stage = Stage {
        enabled: true,
        probability: 1.0,
    };
    pub const OFF: Stage = Stage {
        enabled: false,
        probability: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub snr_db_range: (f64, f64),
    pub freq_drop_count_range: (usize, usize),
    /// Band width as a fraction of the Nyquist frequency.
    pub freq_drop_width: f64,
    pub chunk_length_range: (usize, usize),
    pub chunk_count_range: (usize, usize),
    pub noise: Stage,
    pub rir: Stage,
    pub drop_freq: Stage,
    pub drop_chunk: Stage,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            snr_db_range: (0.0, 15.0),
            freq_drop_count_range: (1, 3),
            freq_drop_width: 0.05,
            chunk_length_range: (1000, 2000),
            chunk_count_range: (1, 5),
            noise: Stage::ON,
            rir: Stage::ON,
            drop_freq: Stage::ON,
            drop_chunk: Stage::ON,
        }
    }
}

impl AugmentConfig {
    /// All four stages disabled.
    pub fn disabled() -> Self {
        Self {
            noise: Stage::OFF,
            rir: Stage::OFF,
            drop_freq: Stage::OFF,
            drop_chunk: Stage::OFF,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(AugmentError::InvalidConfig(msg.to_string()));
        let (lo, hi) = self.snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("snr range must be finite with min <= max");
        }
        if self.freq_drop_count_range.0 > self.freq_drop_count_range.1 {
            return bad("freq drop count range is empty");
        }
        if !(self.freq_drop_width > 0.0 && self.freq_drop_width < 1.0) {
            return bad("freq drop width must lie in (0, 1)");
        }
        if self.chunk_length_range.0 > self.chunk_length_range.1 {
            return bad("chunk length range is empty");
        }
        if self.chunk_count_range.0 > self.chunk_count_range.1 {
            return bad("chunk count range is empty");
        }
        for s in [self.noise, self.rir, self.drop_freq, self.drop_chunk] {
            if !(0.0..=1.0).contains(&s.probability) {
                return bad("stage probability must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

fn gate<R: Rng + ?Sized>(stage: Stage, rng: &mut R) -> bool {
    stage.enabled && (stage.probability >= 1.0 || rng.gen::<f64>() < stage.probability)
}

/// Applies the enabled stages in order noise, rir, drop_freq, drop_chunk.
pub fn augment_pipeline<R: Rng + ?Sized>(
    wave: &Waveform,
    cfg: &AugmentConfig,
    noise_pool: &[Waveform],
    rir_pool: &[Waveform],
    rng: &mut R,
) -> Result<Waveform> {
    cfg.validate()?;
    if cfg.noise.enabled && noise_pool.is_empty() {
        return Err(AugmentError::EmptyPool("noise"));
    }
    if cfg.rir.enabled && rir_pool.is_empty() {
        return Err(AugmentError::EmptyPool("rir"));
    }
    let mut out = wave.clone();
    if gate(cfg.noise, rng) {
        let noise = &noise_pool[rng.gen_range(0..noise_pool.len())];
        let (lo, hi) = cfg.snr_db_range;
        let snr = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        out = mix_noise(&out, noise, snr, rng)?;
    }
    if gate(cfg.rir, rng) {
        let rir = &rir_pool[rng.gen_range(0..rir_pool.len())];
        out = apply_rir(&out, rir)?;
    }
    if gate(cfg.drop_freq, rng) {
        out = drop_freq(&out, cfg, rng)?;
    }
    if gate(cfg.drop_chunk, rng) {
        out = drop_chunk(&out, cfg, rng);
    }
    Ok(out)
}

/// Loads every `.wav` file of a directory in sorted filename order.
pub fn load_pool(dir: impl AsRef<Path>) -> Result<Vec<Waveform>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())
        .map_err(DspError::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| dsp::read_wav(p).map_err(AugmentError::from))
        .collect()
}
