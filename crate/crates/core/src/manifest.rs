//! Corpus manifest: one CSV row per utterance with its speaker and grade.
//!
//! Header: `speaker_id,grade,utterance_id,path,duration_s`. Relative paths are
//! resolved against the manifest's directory when read, and written relative
//! to it when they lie underneath.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const HEADER: [&str; 5] = ["speaker_id", "grade", "utterance_id", "path", "duration_s"];

#[derive(Error, Debug)]
pub enum ManifestError {
    #[error("manifest {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("manifest line {line}: {msg}")]
    InvalidRecord { line: u64, msg: String },
    #[error("duplicate utterance key {0}")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ManifestError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub speaker_id: String,
    pub grade: u32,
    pub utterance_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
}

impl Record {
    /// `speaker_id/grade/utterance_id`.
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.speaker_id, self.grade, self.utterance_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = Self { records };
        m.check_unique()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            let key = r.key();
            if !seen.insert(key.clone()) {
                return Err(ManifestError::Duplicate(key));
            }
        }
        Ok(())
    }

    /// Sorted distinct speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.speaker_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Sorted distinct grades.
    pub fn grades(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.grade).collect();
        set.into_iter().collect()
    }

    /// Records whose speaker passes `keep`.
    pub fn filter_speakers(&self, keep: impl Fn(&str) -> bool) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| keep(&r.speaker_id)).cloned().collect(),
        }
    }

    pub fn by_key(&self) -> BTreeMap<String, &Record> {
        self.records.iter().map(|r| (r.key(), r)).collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let csv_err = |source| ManifestError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = reader.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(ManifestError::InvalidRecord {
                line: 1,
                msg: format!("expected header {}", HEADER.join(",")),
            });
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(csv_err)?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |msg: String| ManifestError::InvalidRecord { line, msg };
            let grade = row[1]
                .parse()
                .map_err(|_| bad(format!("grade '{}' is not an integer", &row[1])))?;
            let duration_s: f64 = row[4]
                .parse()
                .map_err(|_| bad(format!("duration '{}' is not a number", &row[4])))?;
            if !(duration_s >= 0.0) {
                return Err(bad(format!("negative duration {duration_s}")));
            }
            let p = PathBuf::from(&row[3]);
            records.push(Record {
                speaker_id: row[0].to_string(),
                grade,
                utterance_id: row[2].to_string(),
                path: if p.is_absolute() { p } else { base.join(p) },
                duration_s,
            });
        }
        Self::new(records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let csv_err = |source| ManifestError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(HEADER).map_err(csv_err)?;
        for r in &self.records {
            let p = relative_to(&r.path, base);
            w.write_record([
                r.speaker_id.as_str(),
                &r.grade.to_string(),
                &r.utterance_id,
                &p.to_string_lossy(),
                &format!("{:.4}", r.duration_s),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    if base.as_os_str().is_empty() {
        return path.to_path_buf();
    }
    path.strip_prefix(base).map_or_else(|_| path.to_path_buf(), Path::to_path_buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, g: u32, u: &str, p: &str) -> Record {
        Record {
            speaker_id: s.into(),
            grade: g,
            utterance_id: u.into(),
            path: PathBuf::from(p),
            duration_s: 3.0,
        }
    }

    #[test]
    fn roundtrip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(vec![
            rec("s1", 1, "u0", &dir.path().join("wav/a.wav").to_string_lossy()),
            rec("s2", 2, "u0", "/abs/b.wav"),
        ])
        .unwrap();
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("speaker_id,grade,utterance_id,path,duration_s\n"));
        assert!(text.contains("s1,1,u0,wav/a.wav,3.0000"));
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let r = rec("s", 1, "u", "a.wav");
        assert!(matches!(
            Manifest::new(vec![r.clone(), r]),
            Err(ManifestError::Duplicate(k)) if k == "s/1/u"
        ));
    }

    #[test]
    fn bad_grade_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "speaker_id,grade,utterance_id,path,duration_s\ns,1,u,a.wav,1\ns,x,v,b.wav,1\n").unwrap();
        assert!(matches!(
            Manifest::read(&path),
            Err(ManifestError::InvalidRecord { line: 3, .. })
        ));
    }

    #[test]
    fn speakers_and_grades_sorted() {
        let m = Manifest::new(vec![rec("b", 3, "u", "x"), rec("a", 1, "u", "y"), rec("b", 1, "u", "z")]).unwrap();
        assert_eq!(m.speakers(), vec!["a", "b"]);
        assert_eq!(m.grades(), vec![1, 3]);
    }
}
