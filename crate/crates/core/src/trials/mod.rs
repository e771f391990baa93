//! Longitudinal evaluation: energy VAD, trial construction, cosine scoring,
//! EER / minDCF and tabular reports.

mod build;
mod metrics;
mod oracle;
mod score;
mod vad;

use std::path::PathBuf;

use thiserror::Error;

pub use build::{build_trials, read_trials, write_trials, NegativeGrade, Shortfall, Trial, TrialList};
pub use metrics::{compute_eer, compute_min_dcf, det_points, DetPoint, MIN_DCF_P_TARGET};
pub use oracle::{brute_force_eer, eer_oracle_suite, OracleReport};
pub use score::{
    cosine_score, evaluate, read_embeddings, read_labeled_scores, read_scores, report, score_trials, write_embeddings,
    write_scores, Embeddings, EvalResult, Report, ReportRow, ScoreSet, ScoredTrial,
};
pub use vad::{energy_vad_segments, Segment};

#[derive(Error, Debug)]
pub enum TrialsError {
    #[error("grade {grade} has {found} speaker(s); at least 2 are needed")]
    InsufficientSpeakers { grade: u32, found: usize },
    #[error("need at least one target and one nontarget score")]
    DegenerateLabels,
    #[error("zero vector")]
    ZeroVector,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no embedding for utterance {0}")]
    MissingEmbedding(String),
    #[error("no score for trial {0}")]
    MissingScore(String),
    #[error("{file} line {line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrialsError>;
