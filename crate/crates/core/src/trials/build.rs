use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Result, TrialsError};
use crate::manifest::{Manifest, Record};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

/// Requested pairs that the pools could not supply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Shortfall {
    pub targets: usize,
    pub nontargets: usize,
}

impl Shortfall {
    pub fn is_empty(&self) -> bool {
        self.targets == 0 && self.nontargets == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    /// Set name such as `G1-G2`.
    pub name: String,
    pub trials: Vec<Trial>,
    pub shortfall: Shortfall,
}

impl TrialList {
    pub fn n_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn n_nontargets(&self) -> usize {
        self.trials.len() - self.n_targets()
    }
}

/// Grade both sides of a nontarget pair are drawn from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NegativeGrade {
    #[default]
    Test,
    Enroll,
}

fn pick<R: Rng + ?Sized>(mut pool: Vec<(String, String)>, n: usize, target: bool, rng: &mut R) -> (Vec<Trial>, usize) {
    pool.shuffle(rng);
    let short = n.saturating_sub(pool.len());
    pool.truncate(n);
    let trials = pool
        .into_iter()
        .map(|(enroll, test)| Trial { target, enroll, test })
        .collect();
    (trials, short)
}

/// Samples target and nontarget pairs for one enrollment/test grade pair.
///
/// Targets pair an enrollment-grade utterance with a test-grade utterance of
/// the same speaker. Nontargets pair two utterances of different speakers,
/// both from the test grade (or the enrollment grade, see [`NegativeGrade`]).
/// Pairs whose two sides are drawn from the same pool are unordered and
/// never repeat; pools too small for the request are emitted whole and the
/// gap is reported in [`TrialList::shortfall`]. The output is sorted.
pub fn build_trials<R: Rng + ?Sized>(
    manifest: &Manifest,
    enroll_grade: u32,
    test_grade: u32,
    n_pos: usize,
    n_neg: usize,
    negatives: NegativeGrade,
    rng: &mut R,
) -> Result<TrialList> {
    let in_grade = |g: u32| -> Vec<&Record> { manifest.records.iter().filter(|r| r.grade == g).collect() };
    let test_pool = in_grade(test_grade);
    let speakers: std::collections::BTreeSet<&str> = test_pool.iter().map(|r| r.speaker_id.as_str()).collect();
    if speakers.len() < 2 {
        return Err(TrialsError::InsufficientSpeakers {
            grade: test_grade,
            found: speakers.len(),
        });
    }
    let enroll_pool = in_grade(enroll_grade);
    let same_pool = enroll_grade == test_grade;

    let mut targets = Vec::new();
    for e in &enroll_pool {
        for t in &test_pool {
            if e.speaker_id != t.speaker_id {
                continue;
            }
            let (ek, tk) = (e.key(), t.key());
            if !same_pool || ek < tk {
                targets.push((ek, tk));
            }
        }
    }

    let neg_pool = match negatives {
        NegativeGrade::Test => &test_pool,
        NegativeGrade::Enroll => &enroll_pool,
    };
    let mut nontargets = Vec::new();
    for (i, a) in neg_pool.iter().enumerate() {
        for b in &neg_pool[i + 1..] {
            if a.speaker_id != b.speaker_id {
                let (ak, bk) = (a.key(), b.key());
                nontargets.push(if ak < bk { (ak, bk) } else { (bk, ak) });
            }
        }
    }
    // Candidate order must not depend on manifest row order.
    targets.sort();
    nontargets.sort();

    let (mut trials, short_t) = pick(targets, n_pos, true, rng);
    let (neg, short_n) = pick(nontargets, n_neg, false, rng);
    trials.extend(neg);
    trials.sort();
    Ok(TrialList {
        name: format!("G{enroll_grade}-G{test_grade}"),
        trials,
        shortfall: Shortfall {
            targets: short_t,
            nontargets: short_n,
        },
    })
}

/// One `<1|0> <enroll_key> <test_key>` line per trial.
pub fn write_trials(path: impl AsRef<Path>, list: &TrialList) -> Result<()> {
    let mut out = String::new();
    for t in &list.trials {
        writeln!(out, "{} {} {}", u8::from(t.target), t.enroll, t.test).expect("write to String");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a trial list; the set name is the file stem.
pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| TrialsError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, enroll, test] = fields.as_slice() else {
            return Err(err("expected '<label> <enroll> <test>'"));
        };
        let target = match *label {
            "1" => true,
            "0" => false,
            _ => return Err(err("label must be 1 or 0")),
        };
        trials.push(Trial {
            target,
            enroll: enroll.to_string(),
            test: test.to_string(),
        });
    }
    Ok(TrialList {
        name: path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        trials,
        shortfall: Shortfall::default(),
    })
}
