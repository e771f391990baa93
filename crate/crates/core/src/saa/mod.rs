//! Synthetic audio augmentation: every utterance is turned into log-mel,
//! re-synthesized by a vocoder backend and lightly denoised, producing a
//! second copy of the training set with the same labels.

mod protocol;
mod vocoder;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

pub use protocol::{decode_mels, encode_mels, external_vocoder_call, MELS_MAGIC, MELS_VERSION};
pub use vocoder::{
    denoise, griffin_lim, mean_magnitude, mel_to_linear, spectral_convergence, vocode_griffin_lim,
    DenoiseConfig, LogMel,
};

use crate::dsp::{log_mel_fbank, read_wav, write_wav, DspError, FrameSpec, MelMatrix, Waveform};
use crate::manifest::{Manifest, Record};

#[derive(Error, Debug)]
pub enum SaaError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("denoiser bias spectrum has not been estimated")]
    MissingBias,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("failed to start vocoder: {0}")]
    SpawnFailed(String),
    #[error("vocoder protocol error: {0}")]
    ProtocolError(String),
    #[error("vocoder exited with status {code:?}: {stderr}")]
    ChildNonzeroExit { code: Option<i32>, stderr: String },
    #[error("{} file(s) failed: {}", .0.len(), .0.iter().map(|(p, e)| format!("{}: {e}", p.display())).collect::<Vec<_>>().join("; "))]
    Files(Vec<(PathBuf, String)>),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SaaError>;

/// Frames of all-zero log-mel used to measure a backend's bias spectrum.
pub const BIAS_FRAMES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VocoderBackend {
    GriffinLim { iterations: usize },
    /// Shell command speaking the `MELS` protocol.
    External { command: String },
}

impl Default for VocoderBackend {
    fn default() -> Self {
        VocoderBackend::GriffinLim { iterations: 32 }
    }
}

impl FromStr for VocoderBackend {
    type Err = String;

    /// `griffin_lim`, `griffin_lim:<iterations>` or `external:<command>`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "griffin_lim" {
            return Ok(Self::default());
        }
        if let Some(n) = s.strip_prefix("griffin_lim:") {
            let iterations = n.parse().map_err(|_| format!("bad iteration count '{n}'"))?;
            if iterations == 0 {
                return Err("griffin_lim needs at least one iteration".into());
            }
            return Ok(VocoderBackend::GriffinLim { iterations });
        }
        if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err("empty external vocoder command".into());
            }
            return Ok(VocoderBackend::External {
                command: cmd.to_string(),
            });
        }
        Err(format!("unknown vocoder backend '{s}'"))
    }
}

impl VocoderBackend {
    pub fn vocode(&self, logmel: &LogMel, spec: &FrameSpec, mel: &MelMatrix) -> Result<Waveform> {
        match self {
            VocoderBackend::GriffinLim { iterations } => vocode_griffin_lim(logmel, *iterations, spec, mel),
            VocoderBackend::External { command } => external_vocoder_call(logmel, command),
        }
    }

    /// Bias spectrum: mean magnitude of the backend's reply to all-zero log-mel.
    pub fn bias_spectrum(&self, spec: &FrameSpec, mel: &MelMatrix) -> Result<Vec<f64>> {
        let zeros = LogMel::zeros(mel.n_mels, BIAS_FRAMES, mel.sample_rate);
        let wave = self.vocode(&zeros, spec, mel)?;
        Ok(mean_magnitude(&wave, spec)?)
    }
}

/// Re-synthesizes `wave` from its log-mel through `backend`, denoises the
/// result and pads or trims it to the input length.
pub fn saa_roundtrip(
    wave: &Waveform,
    backend: &VocoderBackend,
    denoise_cfg: &DenoiseConfig,
    spec: &FrameSpec,
    mel: &MelMatrix,
) -> Result<Waveform> {
    let feats = log_mel_fbank(wave, spec, mel)?;
    let logmel = LogMel::from_features(&feats.data, feats.n_frames, feats.n_mels, wave.sample_rate);
    let synth = backend.vocode(&logmel, spec, mel)?;
    let mut out = if synth.len() >= spec.win_length {
        denoise(&synth, denoise_cfg, spec)?
    } else {
        synth
    };
    out.samples.resize(wave.len(), 0.0);
    Ok(out)
}

/// Writes one `<stem>_saa.wav` per record into `out_dir` and returns the
/// originals followed by the synthetic copies, which keep speaker and grade
/// and get the utterance id `<id>_saa`.
///
/// Failures are collected per file and reported together.
pub fn saa_corpus(
    manifest: &Manifest,
    backend: &VocoderBackend,
    denoise_cfg: &DenoiseConfig,
    spec: &FrameSpec,
    mel: &MelMatrix,
    out_dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<std::result::Result<Record, (PathBuf, String)>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let fail = |e: SaaError| (r.path.clone(), e.to_string());
            let wave = read_wav(&r.path).map_err(|e| fail(e.into()))?;
            let synth = saa_roundtrip(&wave, backend, denoise_cfg, spec, mel).map_err(fail)?;
            let path = out_dir.join(synthetic_file_name(r));
            write_wav(&path, &synth).map_err(|e| fail(e.into()))?;
            Ok(Record {
                speaker_id: r.speaker_id.clone(),
                grade: r.grade,
                utterance_id: format!("{}_saa", r.utterance_id),
                path,
                duration_s: synth.duration_s(),
            })
        })
        .collect();
    let mut synthetic = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => synthetic.push(rec),
            Err(f) => failures.push(f),
        }
    }
    if !failures.is_empty() {
        return Err(SaaError::Files(failures));
    }
    let mut records = manifest.records.clone();
    records.extend(synthetic);
    Manifest::new(records).map_err(|e| SaaError::InvalidConfig(e.to_string()))
}

/// Output name for a record's synthetic copy. The speaker and grade are part
/// of the name because source stems need not be unique across directories.
fn synthetic_file_name(r: &Record) -> String {
    let stem = r
        .path
        .file_stem()
        .map_or_else(|| r.utterance_id.clone(), |s| s.to_string_lossy().into_owned());
    format!("{}_g{}_{}_saa.wav", r.speaker_id, r.grade, stem)
}

#[cfg(test)]
mod tests;
