//! Longitudinal speaker verification toolkit.
//!
//! The crate covers the whole desk-scale pipeline: log-mel filterbank
//! extraction ([`dsp`]), online waveform augmentation ([`augment`]),
//! vocoder-roundtrip synthetic augmentation ([`saa`]), a small reverse-mode
//! autodiff engine ([`grad`]), the feature transform adapter and a TDNN
//! embedding backbone ([`model`]), deterministic training ([`trainer`]),
//! trial construction and EER scoring ([`trials`]) and a synthetic
//! longitudinal corpus generator ([`synth`]).

pub mod augment;
pub mod dsp;
pub mod grad;
pub mod manifest;
pub mod model;
pub mod rng;
pub mod saa;
pub mod synth;
pub mod trainer;
pub mod trials;

pub use dsp::{FbankConfig, FeatureMatrix, FrameSpec, MelMatrix, Spectrogram, Waveform, WindowKind};
pub use rng::{derive_seed, seeded_rng, SvRng};
