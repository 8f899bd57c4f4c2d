//! Keyword-driven weak labeling of report sections.
//!
//! A header is a sentence that starts (case-insensitively) with a section
//! keyword followed by a colon, optionally after whitespace, or by the end of
//! the sentence. Every sentence from one header up to the next inherits the
//! header's label; anything before the first header is `Others`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use regex::{Regex, RegexBuilder};

use crate::error::{Error, Result};
use crate::types::{LabelSource, LabeledReport, LabeledSentence, Report, SectionLabel};

#[derive(Debug, Clone)]
pub struct HeaderPattern {
    pub keyword: String,
    pub label: SectionLabel,
    regex: Regex,
}

impl HeaderPattern {
    pub fn new(keyword: &str, label: SectionLabel) -> Result<Self> {
        let keyword = keyword.trim();
        if keyword.is_empty() {
            return Err(Error::Config("empty header keyword".into()));
        }
        let words: Vec<String> = keyword.split_whitespace().map(regex::escape).collect();
        let pattern = format!(r"^{}(?:\s*:|$)", words.join(r"\s+"));
        let regex = RegexBuilder::new(&pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| Error::Config(format!("bad keyword `{keyword}`: {e}")))?;
        Ok(HeaderPattern {
            keyword: keyword.to_string(),
            label,
            regex,
        })
    }

    pub fn matches(&self, sentence: &str) -> bool {
        self.regex.is_match(sentence.trim())
    }
}

/// Ordered keyword patterns; the first matching pattern labels a header.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub name: String,
    pub patterns: Vec<HeaderPattern>,
}

/// Keyword spellings for reports modelled on the multi-site training corpus.
const MGB_RULES: &str = "\
# mgb-style header keywords
Reason for visit -> Reason
Reason for exam -> Reason
Reason for study -> Reason
Reason -> Reason
Clinical history -> History
History -> History
Indications -> History
Indication -> History
Comparison -> Comparison
Comparisons -> Comparison
Technique -> Technique
Procedure -> Technique
Type -> Technique
Findings -> Findings
Impression -> Impression
";

/// Keyword spellings for emergency-department style reports.
const MIMIC_RULES: &str = "\
# mimic-style header keywords
Reason for this examination -> Reason
Reason for examination -> Reason
Medical condition -> History
Clinical information -> History
Indication -> History
Comparison -> Comparison
Technique -> Technique
Examination -> Technique
Exam -> Technique
Findings -> Findings
Impression -> Impression
Conclusion -> Impression
";

impl RuleSet {
    pub fn new(name: impl Into<String>, patterns: Vec<HeaderPattern>) -> Self {
        RuleSet {
            name: name.into(),
            patterns,
        }
    }

    pub fn mgb_style() -> Self {
        Self::parse("mgb-style", MGB_RULES).expect("builtin rules parse")
    }

    pub fn mimic_style() -> Self {
        Self::parse("mimic-style", MIMIC_RULES).expect("builtin rules parse")
    }

    /// Looks up a shipped rule set by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "mgb-style" | "mgb" => Some(Self::mgb_style()),
            "mimic-style" | "mimic" => Some(Self::mimic_style()),
            _ => None,
        }
    }

    /// Parses `keyword -> Label` lines; blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut patterns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: name.into(),
                line: lineno + 1,
                message,
            };
            let (kw, label) = line
                .split_once("->")
                .ok_or_else(|| err("expected `keyword -> Label`".into()))?;
            let label = SectionLabel::from_str(label).map_err(|e| err(e.to_string()))?;
            patterns.push(HeaderPattern::new(kw, label).map_err(|e| err(e.to_string()))?);
        }
        if patterns.is_empty() {
            return Err(Error::Config(format!("rule set `{name}` has no patterns")));
        }
        Ok(Self::new(name, patterns))
    }

    /// A builtin name, or a path to a rules file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(r) = Self::builtin(spec) {
            return Ok(r);
        }
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        Self::parse(&name, &text)
    }

    pub fn classify(&self, sentence: &str) -> Option<SectionLabel> {
        self.patterns
            .iter()
            .find(|p| p.matches(sentence))
            .map(|p| p.label)
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.patterns {
            writeln!(f, "{} -> {}", p.keyword, p.label)?;
        }
        Ok(())
    }
}

/// Header sentences of `report` with their labels, in sentence order.
pub fn detect_headers(report: &Report, rules: &RuleSet) -> Vec<(usize, SectionLabel)> {
    report
        .sentences
        .iter()
        .filter_map(|s| rules.classify(&s.text).map(|l| (s.index, l)))
        .collect()
}

/// One label per sentence, propagated forward from each header.
pub fn weak_labels(report: &Report, rules: &RuleSet) -> Vec<SectionLabel> {
    let mut current = SectionLabel::Others;
    report
        .sentences
        .iter()
        .map(|s| {
            if let Some(l) = rules.classify(&s.text) {
                current = l;
            }
            current
        })
        .collect()
}

pub fn weak_label(report: &Report, rules: &RuleSet) -> Vec<LabeledSentence> {
    report
        .sentences
        .iter()
        .zip(weak_labels(report, rules))
        .map(|(s, label)| LabeledSentence {
            sentence: s.clone(),
            label,
            source: LabelSource::Weak,
        })
        .collect()
}

pub fn weak_label_report(report: &Report, rules: &RuleSet) -> LabeledReport {
    LabeledReport::new(
        report.clone(),
        weak_labels(report, rules),
        LabelSource::Weak,
    )
}
