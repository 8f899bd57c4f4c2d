//! BRAT standoff (`.txt` + `.ann`) ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{files_with_ext, stem};
use crate::error::{Error, Result};
use crate::types::{LabelSource, LabeledReport, Report, SectionLabel};

/// A text-bound (`T`) annotation. Offsets are characters of the
/// newline-normalized document; discontinuous spans keep every fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandoffAnnotation {
    pub id: String,
    pub label: String,
    pub fragments: Vec<(usize, usize)>,
    pub text: String,
}

impl StandoffAnnotation {
    pub fn begin(&self) -> usize {
        self.fragments.iter().map(|f| f.0).min().unwrap_or(0)
    }

    fn overlap(&self, begin: usize, end: usize) -> usize {
        self.fragments
            .iter()
            .map(|&(b, e)| e.min(end).saturating_sub(b.max(begin)))
            .sum()
    }
}

/// Maps annotation label strings onto section labels. Keys are compared
/// after lowercasing and collapsing `_`, `-` and whitespace runs to one space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap(pub BTreeMap<String, SectionLabel>);

pub(crate) fn normalize_key(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Default for LabelMap {
    fn default() -> Self {
        use SectionLabel::*;
        let pairs = [
            ("reason", Reason),
            ("reason for visit", Reason),
            ("reason for exam", Reason),
            ("reason for examination", Reason),
            ("history", History),
            ("clinical history", History),
            ("indication", History),
            ("indications", History),
            ("comparison", Comparison),
            ("comparisons", Comparison),
            ("technique", Technique),
            ("procedure", Technique),
            ("type", Technique),
            ("findings", Findings),
            ("impression", Impression),
            ("others", Others),
            ("other", Others),
        ];
        LabelMap(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

impl LabelMap {
    pub fn get(&self, label: &str) -> Option<SectionLabel> {
        let key = normalize_key(label);
        self.0
            .iter()
            .find(|(k, _)| normalize_key(k) == key)
            .map(|(_, v)| *v)
    }

    /// Adds or overrides `raw -> Label` entries from `key = "Label"` TOML.
    pub fn extend_from_toml(&mut self, text: &str) -> Result<()> {
        let extra: BTreeMap<String, String> =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in extra {
            self.0.insert(k, v.parse()?);
        }
        Ok(())
    }
}

/// Converts CRLF and lone CR to LF. Returns the text and, for every
/// original character offset (plus one past the end), its new offset.
pub fn normalize_newlines(text: &str) -> (String, Vec<usize>) {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(chars.len() + 1);
    let mut n = 0;
    let mut i = 0;
    while i < chars.len() {
        map.push(n);
        if chars[i] == '\r' {
            if chars.get(i + 1) == Some(&'\n') {
                map.push(n);
                i += 1;
            }
            out.push('\n');
        } else {
            out.push(chars[i]);
        }
        n += 1;
        i += 1;
    }
    map.push(n);
    (out, map)
}

/// Parses the `T` lines of an `.ann` file; other annotation kinds are ignored.
pub fn parse_ann(path: &Path, content: &str) -> Result<Vec<StandoffAnnotation>> {
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if !line.starts_with('T') {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: m.to_string(),
        };
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or_default().to_string();
        let spec = cols.next().ok_or_else(|| bad("missing label and offsets"))?;
        let text = cols.next().unwrap_or_default().to_string();
        let (label, offsets) = spec
            .split_once(' ')
            .ok_or_else(|| bad("missing offsets"))?;
        let mut fragments = Vec::new();
        for frag in offsets.split(';') {
            let mut it = frag.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(&format!("bad offsets `{frag}`")))
            };
            let b = parse(it.next())?;
            let e = parse(it.next())?;
            if b > e {
                return Err(bad("span begins after it ends"));
            }
            fragments.push((b, e));
        }
        out.push(StandoffAnnotation {
            id,
            label: label.to_string(),
            fragments,
            text,
        });
    }
    Ok(out)
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Label of every sentence: the annotation with the largest character
/// overlap, earlier annotation (by begin, then file order) on ties, Others
/// when nothing overlaps.
pub fn align_labels(report: &Report, annotations: &[(SectionLabel, &StandoffAnnotation)]) -> Vec<SectionLabel> {
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    order.sort_by_key(|&i| (annotations[i].1.begin(), i));
    report
        .sentences
        .iter()
        .map(|s| {
            let mut best = (0usize, SectionLabel::Others);
            for &i in &order {
                let (label, ann) = annotations[i];
                let ov = ann.overlap(s.begin, s.end);
                if ov > best.0 {
                    best = (ov, label);
                }
            }
            best.1
        })
        .collect()
}

fn load_pair(txt: &Path, ann: &Path, map: &LabelMap, unmapped: &mut Vec<String>) -> Result<LabeledReport> {
    let raw = fs::read_to_string(txt).map_err(|e| Error::io(txt, e))?;
    let ann_text = fs::read_to_string(ann).map_err(|e| Error::io(ann, e))?;
    let (text, remap) = normalize_newlines(&raw);
    let chars: Vec<char> = text.chars().collect();
    let mut anns = parse_ann(ann, &ann_text)?;
    for a in &mut anns {
        for f in &mut a.fragments {
            if f.1 >= remap.len() {
                return Err(Error::Annotation {
                    path: ann.to_path_buf(),
                    message: format!("{}: offset {} beyond document length {}", a.id, f.1, remap.len() - 1),
                });
            }
            *f = (remap[f.0], remap[f.1]);
        }
        let covered: Vec<String> = a
            .fragments
            .iter()
            .map(|&(b, e)| chars[b..e].iter().collect())
            .collect();
        if squash(&covered.join(" ")) != squash(&a.text) {
            return Err(Error::Annotation {
                path: ann.to_path_buf(),
                message: format!("{}: covered text does not match the document", a.id),
            });
        }
    }
    let report = Report::from_text(stem(txt), text);
    let mut mapped = Vec::with_capacity(anns.len());
    for a in &anns {
        match map.get(&a.label) {
            Some(l) => mapped.push((l, a)),
            None => unmapped.push(a.label.clone()),
        }
    }
    let labels = align_labels(&report, &mapped);
    Ok(LabeledReport::new(report, labels, LabelSource::Gold))
}

/// Loads every `.txt`/`.ann` pair of `dir` as gold-labeled reports.
pub fn load_brat(dir: &Path, map: &LabelMap) -> Result<Vec<LabeledReport>> {
    let txts = files_with_ext(dir, "txt")?;
    let anns = files_with_ext(dir, "ann")?;
    for a in &anns {
        if !a.with_extension("txt").is_file() {
            return Err(Error::OrphanFile(a.clone()));
        }
    }
    let mut unmapped = Vec::new();
    let mut out = Vec::with_capacity(txts.len());
    for t in &txts {
        let ann = t.with_extension("ann");
        if !ann.is_file() {
            return Err(Error::OrphanFile(t.clone()));
        }
        out.push(load_pair(t, &ann, map, &mut unmapped)?);
    }
    if !unmapped.is_empty() {
        unmapped.sort();
        unmapped.dedup();
        return Err(Error::UnmappedLabels(unmapped));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SectionLabel::*;

    fn write(dir: &Path, name: &str, txt: &str, ann: &str) {
        fs::write(dir.join(format!("{name}.txt")), txt).unwrap();
        fs::write(dir.join(format!("{name}.ann")), ann).unwrap();
    }

    fn slice(t: &str, b: usize, e: usize) -> String {
        t.chars().skip(b).take(e - b).collect()
    }

    #[test]
    fn span_label_covers_contained_sentence() {
        // 400 chars of preamble, a 300-char Findings span, then the rest
        let pre = format!("{}.\n", "a".repeat(398));
        let mid = format!("{}.\n", "b".repeat(298));
        let text = format!("{pre}{mid}Tail.");
        let ann = format!("T1\tFindings 400 700\t{}\n", slice(&text, 400, 700));
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "r", &text, &ann);
        let r = &load_brat(dir.path(), &LabelMap::default()).unwrap()[0];
        assert_eq!(r.report.sentences[1].begin, 400);
        assert_eq!(r.labels, vec![Others, Findings, Others]);
    }

    #[test]
    fn empty_ann_is_all_others() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "r", "FINDINGS:\nClear.", "");
        let r = &load_brat(dir.path(), &LabelMap::default()).unwrap()[0];
        assert_eq!(r.labels, vec![Others, Others]);
    }

    #[test]
    fn overlap_resolution() {
        // sentence "abcdef ghij." spans 0..12
        let text = "abcdef ghij.";
        let rep = Report::from_text("r", text);
        let a = StandoffAnnotation { id: "T1".into(), label: "x".into(), fragments: vec![(0, 4)], text: String::new() };
        let b = StandoffAnnotation { id: "T2".into(), label: "y".into(), fragments: vec![(4, 12)], text: String::new() };
        assert_eq!(align_labels(&rep, &[(Findings, &a), (Impression, &b)]), vec![Impression]);
        let c = StandoffAnnotation { id: "T3".into(), label: "z".into(), fragments: vec![(6, 12)], text: String::new() };
        let d = StandoffAnnotation { id: "T4".into(), label: "w".into(), fragments: vec![(0, 6)], text: String::new() };
        // equal overlap: the annotation starting first wins regardless of file order
        assert_eq!(align_labels(&rep, &[(History, &c), (Technique, &d)]), vec![Technique]);
    }

    #[test]
    fn crlf_offsets_are_remapped() {
        let text = "FINDINGS:\r\nNo fracture.\r\nIMPRESSION:\r\nNormal.";
        // original offsets of "No fracture." are 11..23
        let ann = "T1\tFindings 0 23\tFINDINGS: No fracture.\nT2\tImpression 25 45\tIMPRESSION: Normal.\n";
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "r", text, ann);
        let r = &load_brat(dir.path(), &LabelMap::default()).unwrap()[0];
        assert_eq!(r.labels, vec![Findings, Findings, Impression, Impression]);
        assert!(!r.report.raw_text.contains('\r'));
    }

    #[test]
    fn discontinuous_fragments() {
        let anns = parse_ann(Path::new("x.ann"), "T1\tFindings 0 3;5 9\tabc fghi\nR1\tRel Arg1:T1 Arg2:T1\n").unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].fragments, vec![(0, 3), (5, 9)]);
        assert!(parse_ann(Path::new("x.ann"), "T1\tFindings 9 3\tx").is_err());
        assert!(parse_ann(Path::new("x.ann"), "T1\tFindings\tx").is_err());
    }

    #[test]
    fn errors_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a", "Hello.", "T1\tFindings 0 99\tHello.");
        assert!(matches!(load_brat(dir.path(), &LabelMap::default()), Err(Error::Annotation { .. })));

        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a", "Hello.", "T1\tFindings 0 6\tWorld.");
        assert!(matches!(load_brat(dir.path(), &LabelMap::default()), Err(Error::Annotation { .. })));

        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a", "Hello.", "T1\tMystery 0 6\tHello.\nT2\tEnigma_Label 0 6\tHello.");
        match load_brat(dir.path(), &LabelMap::default()) {
            Err(Error::UnmappedLabels(l)) => assert_eq!(l, vec!["Enigma_Label", "Mystery"]),
            other => panic!("{other:?}"),
        }

        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lonely.txt"), "x").unwrap();
        assert!(matches!(load_brat(dir.path(), &LabelMap::default()), Err(Error::OrphanFile(_))));
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lonely.ann"), "").unwrap();
        assert!(matches!(load_brat(dir.path(), &LabelMap::default()), Err(Error::OrphanFile(_))));
    }

    #[test]
    fn label_map_normalizes_and_extends() {
        let mut m = LabelMap::default();
        assert_eq!(m.get("Reason_for_Visit"), Some(Reason));
        assert_eq!(m.get("INDICATIONS"), Some(History));
        assert_eq!(m.get("Procedure"), Some(Technique));
        assert_eq!(m.get("Addendum"), None);
        m.extend_from_toml("Addendum = \"Others\"\n\"Final Report\" = \"Others\"").unwrap();
        assert_eq!(m.get("addendum"), Some(Others));
        assert!(m.extend_from_toml("x = \"Nope\"").is_err());
    }
}
