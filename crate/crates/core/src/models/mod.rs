//! The three base classifiers, the merged baseline and their inputs.

pub mod features;
pub mod nets;

pub use features::{
    extract_layout_features, report_layout_features, LayoutConfig, LayoutFeatures,
    FEATURE_VERSION, NUM_LAYOUT_FEATURES,
};
pub use nets::{
    Classifier, FocusArch, FocusModel, LayoutArch, LayoutModel, MergedModel, SentenceExample,
    SurroundingArch, SurroundingModel, Trunk,
};

use crate::preprocess::{token_ids, word_tokens, Vocabulary, PAD_ID};
use crate::types::{LabeledReport, Report, SectionLabel};
use crate::weak::{detect_headers, RuleSet};

/// Turns reports into model inputs: token ids for the focus sentence and its
/// neighbours plus layout features from the detected headers.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub vocab: Vocabulary,
    pub rules: RuleSet,
    pub layout: LayoutConfig,
}

impl Featurizer {
    pub fn new(vocab: Vocabulary, rules: RuleSet, layout: LayoutConfig) -> Self {
        Featurizer {
            vocab,
            rules,
            layout,
        }
    }

    /// Examples for every sentence; `labels` default to Others when absent.
    pub fn examples(&self, report: &Report, labels: Option<&[SectionLabel]>) -> Vec<SentenceExample> {
        let ids: Vec<Vec<u32>> = report
            .sentences
            .iter()
            .map(|s| token_ids(&word_tokens(&s.text), &self.vocab))
            .collect();
        let headers = detect_headers(report, &self.rules);
        let layout = report_layout_features(report, &headers, self.layout);
        let pad = vec![PAD_ID];
        (0..ids.len())
            .map(|i| SentenceExample {
                focus: ids[i].clone(),
                prev: if i == 0 { pad.clone() } else { ids[i - 1].clone() },
                next: ids.get(i + 1).cloned().unwrap_or_else(|| pad.clone()),
                layout: layout[i],
                label: labels.map_or(SectionLabel::Others, |l| l[i]),
            })
            .collect()
    }

    pub fn labeled_examples(&self, reports: &[LabeledReport]) -> Vec<SentenceExample> {
        reports
            .iter()
            .flat_map(|r| self.examples(&r.report, Some(&r.labels)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbours_use_pad_at_boundaries() {
        let r = Report::from_text("r", "FINDINGS:\nNo fracture.\nIMPRESSION: normal.");
        let vocab = crate::preprocess::build_vocab(std::slice::from_ref(&r), 1);
        let f = Featurizer::new(vocab, RuleSet::mgb_style(), LayoutConfig::default());
        let ex = f.examples(&r, None);
        assert_eq!(ex.len(), 4);
        assert_eq!(ex[0].prev, vec![PAD_ID]);
        assert_eq!(ex[3].next, vec![PAD_ID]);
        assert_eq!(ex[1].prev, ex[0].focus);
        assert_eq!(ex[1].next, ex[2].focus);
        assert!(ex.iter().all(|e| e.label == SectionLabel::Others));
        // the Findings header is sentence 0, so sentence 1 sits 1/4 after it
        assert_eq!(ex[1].layout.0[7], 0.25);
    }
}
