//! Shared domain vocabulary: section labels, sentences, reports and splits.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of section categories.
pub const NUM_LABELS: usize = 7;

/// Section category assigned to every sentence of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionLabel {
    Reason,
    History,
    Comparison,
    Technique,
    Findings,
    Impression,
    Others,
}

impl SectionLabel {
    /// All labels in code order.
    pub const ALL: [SectionLabel; NUM_LABELS] = [
        SectionLabel::Reason,
        SectionLabel::History,
        SectionLabel::Comparison,
        SectionLabel::Technique,
        SectionLabel::Findings,
        SectionLabel::Impression,
        SectionLabel::Others,
    ];

    pub const fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            SectionLabel::Reason => "Reason",
            SectionLabel::History => "History",
            SectionLabel::Comparison => "Comparison",
            SectionLabel::Technique => "Technique",
            SectionLabel::Findings => "Findings",
            SectionLabel::Impression => "Impression",
            SectionLabel::Others => "Others",
        }
    }
}

impl fmt::Display for SectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SectionLabel {
    type Err = Error;

    /// Case-insensitive parse of the canonical label names.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// A sentence span inside a report. Offsets count Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub begin: usize,
    pub end: usize,
    pub index: usize,
}

impl Sentence {
    pub fn char_len(&self) -> usize {
        self.end - self.begin
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub raw_text: String,
    pub sentences: Vec<Sentence>,
}

impl Report {
    /// Segments `raw_text` with the default sentence segmenter.
    pub fn from_text(id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let sentences = crate::preprocess::segment_sentences(&raw_text);
        Report {
            id: id.into(),
            raw_text,
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Checks the span invariants: in-bounds, sorted, non-overlapping, gap-free indices,
    /// and that each span reproduces its text.
    pub fn validate(&self) -> Result<()> {
        let chars: Vec<char> = self.raw_text.chars().collect();
        let mut prev_end = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            let bad = |m: &str| Error::Config(format!("report {} sentence {i}: {m}", self.id));
            if s.index != i {
                return Err(bad("index gap"));
            }
            if s.begin >= s.end || s.end > chars.len() {
                return Err(bad("span out of bounds"));
            }
            if s.begin < prev_end {
                return Err(bad("overlapping span"));
            }
            let slice: String = chars[s.begin..s.end].iter().collect();
            if slice != s.text {
                return Err(bad("span text mismatch"));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

/// Where a sentence label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Weak,
    Gold,
    Predicted,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Weak => "weak",
            LabelSource::Gold => "gold",
            LabelSource::Predicted => "predicted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub label: SectionLabel,
    pub source: LabelSource,
}

/// A report together with one label per sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledReport {
    pub report: Report,
    pub labels: Vec<SectionLabel>,
    pub source: LabelSource,
}

impl LabeledReport {
    pub fn new(report: Report, labels: Vec<SectionLabel>, source: LabelSource) -> Self {
        assert_eq!(
            report.sentences.len(),
            labels.len(),
            "one label per sentence"
        );
        LabeledReport {
            report,
            labels,
            source,
        }
    }

    pub fn from_labeled_sentences(report: Report, labeled: &[LabeledSentence]) -> Self {
        let source = labeled.first().map_or(LabelSource::Gold, |l| l.source);
        let labels = labeled.iter().map(|l| l.label).collect();
        Self::new(report, labels, source)
    }

    pub fn labeled_sentences(&self) -> Vec<LabeledSentence> {
        self.report
            .sentences
            .iter()
            .zip(&self.labels)
            .map(|(s, &label)| LabeledSentence {
                sentence: s.clone(),
                label,
                source: self.source,
            })
            .collect()
    }
}

/// Softmax output of a base model: seven non-negative values summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(pub [f64; NUM_LABELS]);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(p: [f64; NUM_LABELS]) -> Result<Self> {
        let v = ProbVector(p);
        if v.is_valid() {
            Ok(v)
        } else {
            Err(Error::Config(format!("not a probability vector: {p:?}")))
        }
    }

    pub fn uniform() -> Self {
        ProbVector([1.0 / NUM_LABELS as f64; NUM_LABELS])
    }

    pub fn one_hot(label: SectionLabel) -> Self {
        let mut p = [0.0; NUM_LABELS];
        p[label.code()] = 1.0;
        ProbVector(p)
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|&x| (0.0..=1.0).contains(&x)) && (sum - 1.0).abs() <= Self::SUM_TOLERANCE
    }

    /// Most probable label, ties to the lowest code.
    pub fn argmax(&self) -> SectionLabel {
        SectionLabel::from_code(argmax(&self.0)).expect("code in range")
    }
}

/// Unnormalized per-class decision scores (stacker sigmoid outputs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub [f64; NUM_LABELS]);

impl ScoreVector {
    /// Highest score, ties to the lowest code.
    pub fn argmax(&self) -> SectionLabel {
        SectionLabel::from_code(argmax(&self.0)).expect("code in range")
    }

    /// Scores rescaled to sum to one, for reporting.
    pub fn normalized(&self) -> ProbVector {
        let sum: f64 = self.0.iter().sum();
        if sum <= 0.0 {
            return ProbVector::uniform();
        }
        let mut p = self.0;
        p.iter_mut().for_each(|x| *x /= sum);
        ProbVector(p)
    }
}

/// Index of the first maximal element.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Report-level partition into training, stacking-holdout and test parts.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<R = Report> {
    pub train: Vec<R>,
    pub stacking_holdout: Vec<R>,
    pub test: Vec<R>,
    pub proportions: [f64; 3],
}

/// Deterministically shuffles `items` and partitions them by `ratios`.
///
/// The holdout and test parts get `floor(n * r)` items; everything left over goes
/// to training, so 856 items under (0.8, 0.1, 0.1) split as 686/85/85.
pub fn split_dataset<R: Clone>(
    items: &[R],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<R>> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(ratios));
    }
    let n = items.len();
    let part = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_hold = part(ratios[1]);
    let n_test = part(ratios[2]);
    let n_train = n - n_hold - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&order[..n_train]),
        stacking_holdout: take(&order[n_train..n_train + n_hold]),
        test: take(&order[n_train + n_hold..]),
        proportions: ratios,
    })
}
