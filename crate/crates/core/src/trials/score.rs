use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::metrics::{compute_eer, compute_min_dcf, MIN_DCF_P_TARGET};
use super::{Result, TrialList, TrialsError};

/// Utterance key to embedding vector.
pub type Embeddings = BTreeMap<String, Vec<f64>>;

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_score(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(TrialsError::DimMismatch(e1.len(), e2.len()));
    }
    let dot: f64 = e1.iter().zip(e2).map(|(a, b)| a * b).sum();
    let n1 = e1.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n2 = e2.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(TrialsError::ZeroVector);
    }
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub name: String,
    pub trials: Vec<ScoredTrial>,
}

impl ScoreSet {
    pub fn scores(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.target).collect()
    }
}

/// Scores every trial of `list` in parallel; output order follows the list.
pub fn score_trials(list: &TrialList, embeddings: &Embeddings) -> Result<ScoreSet> {
    let lookup = |key: &str| {
        embeddings
            .get(key)
            .ok_or_else(|| TrialsError::MissingEmbedding(key.to_string()))
    };
    let trials = list
        .trials
        .par_iter()
        .map(|t| {
            let score = cosine_score(lookup(&t.enroll)?, lookup(&t.test)?)?;
            Ok(ScoredTrial {
                target: t.target,
                enroll: t.enroll.clone(),
                test: t.test.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet {
        name: list.name.clone(),
        trials,
    })
}

/// One `<1|0> <enroll> <test> <score>` line per trial, six decimals. The
/// label column matches the trial file format.
pub fn write_scores(path: impl AsRef<Path>, set: &ScoreSet) -> Result<()> {
    let mut out = String::new();
    for t in &set.trials {
        writeln!(out, "{} {} {} {:.6}", u8::from(t.target), t.enroll, t.test, t.score).expect("write to String");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a labeled score file on its own. The set name is the file stem.
pub fn read_labeled_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let trials = parse_scores(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ScoreSet { name, trials })
}

fn parse_scores(path: &Path) -> Result<Vec<ScoredTrial>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| TrialsError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test, score] = fields.as_slice() else {
            return Err(err("expected '<1|0> <enroll> <test> <score>'".into()));
        };
        let target = match *label {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("label must be 1 or 0, got '{other}'"))),
        };
        let score: f64 = score.parse().map_err(|e| err(format!("score: {e}")))?;
        if !score.is_finite() {
            return Err(err("score is not finite".into()));
        }
        out.push(ScoredTrial {
            target,
            enroll: enroll.to_string(),
            test: test.to_string(),
            score,
        });
    }
    Ok(out)
}

/// Reads a score file and takes trial order and labels from `list`. Every
/// trial of the list must have a score; extra score lines are ignored.
pub fn read_scores(path: impl AsRef<Path>, list: &TrialList) -> Result<ScoreSet> {
    let scores: HashMap<(String, String), f64> = parse_scores(path.as_ref())?
        .into_iter()
        .map(|t| ((t.enroll, t.test), t.score))
        .collect();
    let trials = list
        .trials
        .iter()
        .map(|t| {
            let score = scores
                .get(&(t.enroll.clone(), t.test.clone()))
                .copied()
                .ok_or_else(|| TrialsError::MissingScore(format!("{} {}", t.enroll, t.test)))?;
            Ok(ScoredTrial {
                target: t.target,
                enroll: t.enroll.clone(),
                test: t.test.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet {
        name: list.name.clone(),
        trials,
    })
}

/// One `<key> <v1> ... <vE>` line per utterance. Values use the shortest
/// representation that reads back to the same `f64`.
pub fn write_embeddings(path: impl AsRef<Path>, embeddings: &Embeddings) -> Result<()> {
    let mut out = String::new();
    for (key, v) in embeddings {
        out.push_str(key);
        for x in v {
            write!(out, " {x}").expect("write to String");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut out = Embeddings::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(key) = fields.next() else { continue };
        let err = |msg: String| TrialsError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let v = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("value '{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => return Err(err(format!("expected {d} values, got {}", v.len()))),
            _ => {}
        }
        if out.insert(key.to_string(), v).is_some() {
            return Err(err(format!("duplicate key {key}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Percent.
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn evaluate(set: &ScoreSet) -> Result<EvalResult> {
    let scores = set.scores();
    let labels = set.labels();
    let (eer, eer_threshold) = compute_eer(&scores, &labels)?;
    let min_dcf = compute_min_dcf(&scores, &labels, MIN_DCF_P_TARGET, 1.0, 1.0)?;
    let n_target = labels.iter().filter(|&&l| l).count();
    Ok(EvalResult {
        eer,
        eer_threshold,
        min_dcf,
        n_target,
        n_nontarget: labels.len() - n_target,
    })
}

/// EERs of one system, keyed by evaluation-set name.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub results: Vec<(String, EvalResult)>,
}

impl ReportRow {
    /// Mean EER over the named sets that are present.
    pub fn mean_eer(&self, sets: &[&str]) -> Option<f64> {
        let v: Vec<f64> = self
            .results
            .iter()
            .filter(|(n, _)| sets.contains(&n.as_str()))
            .map(|(_, r)| r.eer)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub csv: String,
    pub text: String,
}

/// One row per system, one column per evaluation set (in order of first
/// appearance), EER in percent to two decimals, and a final `mean` column.
/// Missing cells are blank, and so is the mean of a row with any missing.
pub fn report(rows: &[ReportRow]) -> Report {
    let mut columns: Vec<&str> = Vec::new();
    for row in rows {
        for (name, _) in &row.results {
            if !columns.contains(&name.as_str()) {
                columns.push(name);
            }
        }
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut line = vec![row.system.clone()];
            line.extend(columns.iter().map(|c| {
                row.results
                    .iter()
                    .find(|(n, _)| n == c)
                    .map_or_else(String::new, |(_, r)| format!("{:.2}", r.eer))
            }));
            let complete = columns.iter().all(|c| row.results.iter().any(|(n, _)| n == c));
            line.push(match row.mean_eer(&columns) {
                Some(m) if complete => format!("{m:.2}"),
                _ => String::new(),
            });
            line
        })
        .collect();
    let header: Vec<String> = std::iter::once("system".to_string())
        .chain(columns.iter().map(|c| c.to_string()))
        .chain(std::iter::once("mean".to_string()))
        .collect();

    let mut csv = header.join(",");
    csv.push('\n');
    for line in &cells {
        csv.push_str(&line.join(","));
        csv.push('\n');
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|j| {
            std::iter::once(&header)
                .chain(&cells)
                .map(|l| l[j].len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut text = String::new();
    for line in std::iter::once(&header).chain(&cells) {
        let mut parts = Vec::new();
        for (j, cell) in line.iter().enumerate() {
            if j == 0 {
                parts.push(format!("{cell:<w$}", w = widths[j]));
            } else {
                parts.push(format!("{cell:>w$}", w = widths[j]));
            }
        }
        text.push_str(parts.join("  ").trim_end());
        text.push('\n');
    }
    Report { csv, text }
}
