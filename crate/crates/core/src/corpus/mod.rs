//! Report corpora: plain-text directories, BRAT standoff annotations, the
//! line-delimited JSON labeled format, and a templated synthetic generator.

pub mod brat;
pub mod jsonl;
pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{LabelSource, LabeledReport, Report};
use crate::weak::{weak_label_report, RuleSet};

pub use brat::{load_brat, parse_ann, LabelMap, StandoffAnnotation};
pub use jsonl::{read_jsonl, write_jsonl, SentenceRecord};
pub use synthetic::{generate_synthetic_corpus, NoiseConfig, SectionTemplate, SyntheticTemplate};

/// Files in `dir` with extension `ext`, sorted by name.
pub(crate) fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Every `.txt` file of a directory as a segmented report, id = file stem.
pub fn load_text_dir(dir: &Path) -> Result<Vec<Report>> {
    files_with_ext(dir, "txt")?
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok(Report::from_text(stem(&p), brat::normalize_newlines(&text).0))
        })
        .collect()
}

/// Loads a labeled corpus from a `.jsonl` file or a BRAT directory.
pub fn load_labeled_corpus(path: &Path, map: &LabelMap) -> Result<Vec<LabeledReport>> {
    let corpus = if path.is_dir() {
        load_brat(path, map)?
    } else if path.is_file() {
        read_jsonl(path)?
    } else {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    };
    if corpus.iter().all(|r| r.report.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

/// Weak labels for every report of a plain-text directory.
pub fn weak_label_dir(dir: &Path, rules: &RuleSet) -> Result<Vec<LabeledReport>> {
    let reports = load_text_dir(dir)?;
    if reports.iter().all(Report::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let out: Vec<LabeledReport> = reports.iter().map(|r| weak_label_report(r, rules)).collect();
    debug_assert!(out.iter().all(|r| r.source == LabelSource::Weak));
    Ok(out)
}
