//! Line-delimited JSON labeled format: one record per sentence.
//!
//! ```json
//! {"report_id":"r1","index":0,"begin":0,"end":9,"text":"FINDINGS:","label":"Findings","source":"gold"}
//! ```
//!
//! Records of one report may be interleaved with other reports; their indices
//! must form `0..n`. The report's raw text is rebuilt by placing each sentence at its
//! offsets and filling gaps with newlines.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabelSource, LabeledReport, Report, SectionLabel, Sentence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub report_id: String,
    pub index: usize,
    pub begin: usize,
    pub end: usize,
    pub text: String,
    pub label: SectionLabel,
    pub source: LabelSource,
}

pub fn records(reports: &[LabeledReport]) -> Vec<SentenceRecord> {
    reports
        .iter()
        .flat_map(|r| {
            r.report
                .sentences
                .iter()
                .zip(&r.labels)
                .map(|(s, &label)| SentenceRecord {
                    report_id: r.report.id.clone(),
                    index: s.index,
                    begin: s.begin,
                    end: s.end,
                    text: s.text.clone(),
                    label,
                    source: r.source,
                })
        })
        .collect()
}

pub fn write_jsonl(path: &Path, reports: &[LabeledReport]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records(reports) {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn rebuild(id: String, mut recs: Vec<SentenceRecord>, path: &Path) -> Result<LabeledReport> {
    recs.sort_by_key(|r| r.index);
    let bad = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("report {id}: {m}"),
    };
    let mut raw = String::new();
    let mut pos = 0;
    let mut sentences = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        if r.index != i {
            return Err(bad(format!("sentence indices are not 0..{}", recs.len())));
        }
        if r.begin < pos || r.end < r.begin || r.text.chars().count() != r.end - r.begin {
            return Err(bad(format!("sentence {i} has inconsistent offsets")));
        }
        raw.extend(std::iter::repeat('\n').take(r.begin - pos));
        raw.push_str(&r.text);
        pos = r.end;
        sentences.push(Sentence {
            text: r.text.clone(),
            begin: r.begin,
            end: r.end,
            index: i,
        });
    }
    let source = recs.first().map_or(LabelSource::Gold, |r| r.source);
    let labels = recs.iter().map(|r| r.label).collect();
    let report = Report {
        id,
        raw_text: raw,
        sentences,
    };
    Ok(LabeledReport::new(report, labels, source))
}

/// Reads records and groups them into reports in order of first appearance.
pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledReport>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<SentenceRecord>> = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if !groups.contains_key(&rec.report_id) {
            order.push(rec.report_id.clone());
        }
        groups.entry(rec.report_id.clone()).or_default().push(rec);
    }
    order
        .into_iter()
        .map(|id| {
            let recs = groups.remove(&id).expect("grouped");
            rebuild(id, recs, path)
        })
        .collect()
}
