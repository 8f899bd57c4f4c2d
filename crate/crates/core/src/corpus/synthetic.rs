//! Templated synthetic report generator with gold sentence labels.
//!
//! A template lists sections in order, each with header spellings, a
//! rendering style and a sentence bank. Noise knobs drop headers, swap in
//! synonyms and jitter casing. Optional preamble sentences are labeled
//! Others.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::segment_sentences;
use crate::types::{LabelSource, LabeledReport, Report, SectionLabel};

const BENCHMARK: &str = include_str!("../../templates/benchmark.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderStyle {
    /// `HEADER:` (or bare `HEADER`) on its own line.
    OwnLine,
    /// `HEADER: first sentence` on one line.
    Inline,
    /// Either, per report.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionTemplate {
    pub label: SectionLabel,
    pub headers: Vec<String>,
    pub style: HeaderStyle,
    pub bank: String,
    pub min: usize,
    pub max: usize,
    /// Probability that the section appears at all.
    #[serde(default = "one")]
    pub presence: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub header_dropout: f64,
    /// Per-word probability of replacing a word that has synonyms.
    pub synonym_rate: f64,
    /// Per-sentence probability of rendering a body sentence in all caps or
    /// all lowercase.
    pub casing_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreambleTemplate {
    pub bank: String,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftTemplate {
    #[serde(default)]
    pub order: Vec<SectionLabel>,
    #[serde(default)]
    pub headers: BTreeMap<SectionLabel, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTemplate {
    pub name: String,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub preamble: Option<PreambleTemplate>,
    pub sections: Vec<SectionTemplate>,
    pub banks: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, Vec<String>>,
    /// Alternative conventions used by [`SyntheticTemplate::domain_shift`].
    #[serde(default)]
    pub shift: Option<ShiftTemplate>,
}

fn is_single_sentence(text: &str) -> bool {
    let s = segment_sentences(text);
    s.len() == 1 && s[0].text == text
}

impl SyntheticTemplate {
    /// The shipped benchmark template.
    pub fn default_benchmark() -> Self {
        Self::from_toml(BENCHMARK).expect("shipped template is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: SyntheticTemplate = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("template {}: {m}", self.name)));
        if self.sections.is_empty() {
            return bad("needs at least one section".into());
        }
        for (name, bank) in &self.banks {
            if bank.is_empty() {
                return bad(format!("bank `{name}` is empty"));
            }
            if let Some(s) = bank.iter().find(|s| !is_single_sentence(s)) {
                return bad(format!("bank `{name}` entry `{s}` is not exactly one sentence"));
            }
        }
        let check_bank = |b: &str| self.banks.contains_key(b);
        for s in &self.sections {
            if !check_bank(&s.bank) {
                return bad(format!("unknown bank `{}`", s.bank));
            }
            if s.headers.is_empty() || s.headers.iter().any(|h| h.trim().is_empty() || h.contains(['.', ':', '\n'])) {
                return bad(format!("section {} needs non-empty headers without `.` or `:`", s.label));
            }
            if s.min == 0 || s.min > s.max {
                return bad(format!("section {} needs 1 <= min <= max", s.label));
            }
            if !(0.0..=1.0).contains(&s.presence) {
                return bad(format!("section {} presence outside [0, 1]", s.label));
            }
        }
        if let Some(p) = &self.preamble {
            if !check_bank(&p.bank) || p.min > p.max {
                return bad("invalid preamble".into());
            }
        }
        let n = self.noise;
        for (k, v) in [("header_dropout", n.header_dropout), ("synonym_rate", n.synonym_rate), ("casing_jitter", n.casing_jitter)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{k} outside [0, 1]"));
            }
        }
        for alts in self.synonyms.values() {
            if alts.is_empty() || alts.iter().any(|a| a.contains(['.', ':', '\n'])) {
                return bad("synonyms must be non-empty and free of `.`/`:`".into());
            }
        }
        Ok(())
    }

    /// The same template under different header spellings and section order.
    pub fn domain_shift(&self) -> Result<Self> {
        let shift = self
            .shift
            .as_ref()
            .ok_or_else(|| Error::Config(format!("template {} has no [shift] table", self.name)))?;
        let mut sections = self.sections.clone();
        for s in &mut sections {
            if let Some(h) = shift.headers.get(&s.label) {
                s.headers = h.clone();
            }
        }
        if !shift.order.is_empty() {
            let rank = |l: &SectionLabel| shift.order.iter().position(|o| o == l).unwrap_or(usize::MAX);
            sections.sort_by_key(|s| rank(&s.label));
        }
        let t = SyntheticTemplate {
            name: format!("{}-shifted", self.name),
            sections,
            shift: None,
            ..self.clone()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = noise;
        self
    }
}

fn capitalize_like(word: &str, template: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        c.next()
            .map(|f| f.to_uppercase().chain(c).collect())
            .unwrap_or_default()
    } else {
        word.to_string()
    }
}

fn render_sentence(text: &str, t: &SyntheticTemplate, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = Vec::new();
    for w in text.split(' ') {
        let core = w.trim_end_matches('.');
        let tail = &w[core.len()..];
        let alts = t.synonyms.get(&core.to_lowercase());
        match alts {
            Some(a) if t.noise.synonym_rate > 0.0 && rng.gen_bool(t.noise.synonym_rate) => {
                let alt = a.choose(rng).expect("non-empty synonyms");
                words.push(format!("{}{tail}", capitalize_like(alt, core)));
            }
            _ => words.push(w.to_string()),
        }
    }
    let s = words.join(" ");
    let j = t.noise.casing_jitter;
    if j > 0.0 {
        let r: f64 = rng.gen();
        if r < j / 2.0 {
            return s.to_uppercase();
        } else if r < j {
            return s.to_lowercase();
        }
    }
    s
}

fn generate_one(t: &SyntheticTemplate, id: String, rng: &mut ChaCha8Rng) -> LabeledReport {
    let mut raw = String::new();
    let mut labels = Vec::new();
    let line = |raw: &mut String, text: &str| {
        if !raw.is_empty() {
            raw.push('\n');
        }
        raw.push_str(text);
    };
    if let Some(p) = &t.preamble {
        let k = rng.gen_range(p.min..=p.max);
        for s in t.banks[&p.bank].choose_multiple(rng, k) {
            let s = render_sentence(s, t, rng);
            line(&mut raw, &s);
            labels.push(SectionLabel::Others);
        }
    }
    for sec in &t.sections {
        if !rng.gen_bool(sec.presence) {
            continue;
        }
        let with_header = !(t.noise.header_dropout > 0.0 && rng.gen_bool(t.noise.header_dropout));
        let inline = match sec.style {
            HeaderStyle::OwnLine => false,
            HeaderStyle::Inline => true,
            HeaderStyle::Mixed => rng.gen_bool(0.5),
        };
        let count = rng.gen_range(sec.min..=sec.max);
        let body: Vec<String> = t.banks[&sec.bank]
            .choose_multiple(rng, count)
            .map(|s| render_sentence(s, t, rng))
            .collect();
        let mut current = String::new();
        if with_header {
            let h = sec.headers.choose(rng).expect("non-empty headers");
            labels.push(sec.label);
            if inline {
                current = format!("{h}: ");
            } else {
                let colon = if rng.gen_bool(0.8) { ":" } else { "" };
                line(&mut raw, &format!("{h}{colon}"));
            }
        }
        for (i, s) in body.iter().enumerate() {
            labels.push(sec.label);
            if i > 0 && rng.gen_bool(0.5) {
                line(&mut raw, &current);
                current.clear();
            } else if !current.is_empty() && !current.ends_with(' ') {
                current.push(' ');
            }
            current.push_str(s);
        }
        line(&mut raw, &current);
    }
    let report = Report::from_text(id, raw);
    assert_eq!(
        report.sentences.len(),
        labels.len(),
        "template sentences must segment one-to-one"
    );
    LabeledReport::new(report, labels, LabelSource::Gold)
}

/// `n_reports` labeled reports, report `i` drawn from `templates[i % len]`.
/// Deterministic under `seed`.
pub fn generate_synthetic_corpus(
    templates: &[SyntheticTemplate],
    n_reports: usize,
    seed: u64,
) -> Vec<LabeledReport> {
    assert!(!templates.is_empty(), "at least one template");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_reports)
        .map(|i| {
            let t = &templates[i % templates.len()];
            generate_one(t, format!("{}-{i:05}", t.name), &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weak::{weak_labels, RuleSet};

    fn noiseless() -> SyntheticTemplate {
        let t = SyntheticTemplate::default_benchmark();
        let noise = NoiseConfig {
            header_dropout: 0.0,
            ..t.noise
        };
        t.with_noise(noise)
    }

    #[test]
    fn dropout_zero_matches_weak_labels() {
        let rules = RuleSet::mgb_style();
        for r in generate_synthetic_corpus(&[noiseless()], 200, 3) {
            assert_eq!(weak_labels(&r.report, &rules), r.labels, "{}", r.report.raw_text);
        }
    }

    #[test]
    fn dropout_one_removes_all_headers() {
        let t = SyntheticTemplate::default_benchmark();
        let t = t.clone().with_noise(NoiseConfig {
            header_dropout: 1.0,
            ..t.noise
        });
        let rules = RuleSet::mgb_style();
        for r in generate_synthetic_corpus(&[t], 50, 4) {
            assert!(weak_labels(&r.report, &rules).iter().all(|&l| l == SectionLabel::Others));
            assert!(r.labels.iter().any(|&l| l != SectionLabel::Others));
        }
    }

    #[test]
    fn deterministic_and_contiguous() {
        let t = SyntheticTemplate::default_benchmark();
        let a = generate_synthetic_corpus(&[t.clone()], 30, 11);
        assert_eq!(a, generate_synthetic_corpus(&[t], 30, 11));
        for r in &a {
            r.report.validate().unwrap();
            // each label occupies a single block
            let mut seen = Vec::new();
            for w in r.labels.windows(2) {
                if w[0] != w[1] {
                    seen.push(w[0]);
                    assert!(!seen.contains(&w[1]));
                }
            }
        }
    }

    #[test]
    fn shifted_headers_are_unknown_to_source_rules() {
        let shifted = noiseless().domain_shift().unwrap();
        assert_eq!(shifted.sections[0].label, SectionLabel::History);
        let rules = RuleSet::mgb_style();
        for r in generate_synthetic_corpus(&[shifted], 50, 5) {
            assert!(crate::weak::detect_headers(&r.report, &rules).is_empty());
            assert!(
                crate::weak::detect_headers(&r.report, &RuleSet::mimic_style()).len()
                    <= r.report.sentences.len()
            );
        }
    }

    #[test]
    fn template_validation() {
        let t = SyntheticTemplate::default_benchmark();
        let back = SyntheticTemplate::from_toml(&t.to_toml()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        bad.banks.insert("findings".into(), vec!["Dr. Smith reviewed".into()]);
        assert!(bad.validate().is_err());
        let mut bad = t.clone();
        bad.sections.clear();
        assert!(bad.validate().is_err());
        let mut bad = t;
        bad.banks.insert("reason".into(), vec![]);
        assert!(bad.validate().is_err());
        assert!(SyntheticTemplate::from_toml("name = 1").is_err());
    }
}
