//! The 17 formatting/layout features of a focus sentence.
//!
//! | index | feature |
//! |-------|---------|
//! | 0–2   | uppercase, lowercase and digit fractions of the sentence characters |
//! | 3–8   | `(focus − header) / n` to the first Reason, History, Technique, Comparison, Findings, Impression header; 2.0 when absent |
//! | 9–14  | ends-with-period / ends-with-colon for previous, current, next sentence |
//! | 15    | `focus / max(n − 1, 1)` |
//! | 16    | first token is uppercase |

use serde::{Deserialize, Serialize};

use crate::types::{Report, SectionLabel};

/// Bumped whenever the feature definitions change; bundles record it.
pub const FEATURE_VERSION: u32 = 1;
pub const NUM_LAYOUT_FEATURES: usize = 17;
/// Relative position used when a header kind does not occur in the report.
pub const ABSENT_HEADER: f32 = 2.0;

/// Header kinds in feature order.
pub const HEADER_FEATURE_ORDER: [SectionLabel; 6] = [
    SectionLabel::Reason,
    SectionLabel::History,
    SectionLabel::Technique,
    SectionLabel::Comparison,
    SectionLabel::Findings,
    SectionLabel::Impression,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutFeatures(pub [f32; NUM_LAYOUT_FEATURES]);

impl Default for LayoutFeatures {
    fn default() -> Self {
        LayoutFeatures([0.0; NUM_LAYOUT_FEATURES])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    /// Emit raw character counts instead of fractions (ablation).
    pub raw_counts: bool,
}

fn ends_with(text: &str, c: char) -> f32 {
    if text.trim_end().ends_with(c) {
        1.0
    } else {
        0.0
    }
}

fn first_token_upper(text: &str) -> f32 {
    let Some(tok) = text.split_whitespace().next() else {
        return 0.0;
    };
    let mut alpha = tok.chars().filter(|c| c.is_alphabetic()).peekable();
    if alpha.peek().is_none() {
        return 0.0;
    }
    if alpha.all(char::is_uppercase) {
        1.0
    } else {
        0.0
    }
}

/// Computes the features of sentence `focus` given the report's detected headers.
pub fn extract_layout_features(
    report: &Report,
    focus: usize,
    headers: &[(usize, SectionLabel)],
    cfg: LayoutConfig,
) -> LayoutFeatures {
    let n = report.sentences.len();
    assert!(focus < n, "focus index {focus} out of range for {n} sentences");
    let text = &report.sentences[focus].text;
    let mut f = [0f32; NUM_LAYOUT_FEATURES];

    let (mut upper, mut lower, mut digit, mut len) = (0usize, 0usize, 0usize, 0usize);
    for c in text.chars() {
        len += 1;
        if c.is_uppercase() {
            upper += 1;
        } else if c.is_lowercase() {
            lower += 1;
        } else if c.is_ascii_digit() {
            digit += 1;
        }
    }
    let norm = if cfg.raw_counts { 1.0 } else { len.max(1) as f64 };
    f[0] = (upper as f64 / norm) as f32;
    f[1] = (lower as f64 / norm) as f32;
    f[2] = (digit as f64 / norm) as f32;

    for (k, kind) in HEADER_FEATURE_ORDER.iter().enumerate() {
        f[3 + k] = headers
            .iter()
            .find(|(_, l)| l == kind)
            .map_or(ABSENT_HEADER, |&(idx, _)| {
                ((focus as f64 - idx as f64) / n as f64) as f32
            });
    }

    let neighbours = [
        focus.checked_sub(1),
        Some(focus),
        (focus + 1 < n).then_some(focus + 1),
    ];
    for (k, idx) in neighbours.iter().enumerate() {
        if let Some(i) = idx {
            let t = &report.sentences[*i].text;
            f[9 + 2 * k] = ends_with(t, '.');
            f[10 + 2 * k] = ends_with(t, ':');
        }
    }

    f[15] = (focus as f64 / (n.saturating_sub(1)).max(1) as f64) as f32;
    f[16] = first_token_upper(text);
    LayoutFeatures(f)
}

/// Features for every sentence of a report.
pub fn report_layout_features(
    report: &Report,
    headers: &[(usize, SectionLabel)],
    cfg: LayoutConfig,
) -> Vec<LayoutFeatures> {
    (0..report.sentences.len())
        .map(|i| extract_layout_features(report, i, headers, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weak::{detect_headers, RuleSet};

    fn report(lines: &[&str]) -> Report {
        Report::from_text("t", lines.join("\n"))
    }

    #[test]
    fn header_sentence_features() {
        let r = report(&["FINDINGS:", "No fracture."]);
        let f = extract_layout_features(&r, 0, &[(0, SectionLabel::Findings)], LayoutConfig::default()).0;
        assert_eq!(f[0], 8.0 / 9.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[16], 1.0);
        assert_eq!((f[11], f[12]), (0.0, 1.0));
        assert_eq!((f[9], f[10]), (0.0, 0.0));
        assert_eq!((f[13], f[14]), (1.0, 0.0));
    }

    #[test]
    fn first_sentence_position_is_zero() {
        let r = report(&["a.", "b.", "c.", "d.", "e."]);
        let f = extract_layout_features(&r, 0, &[], LayoutConfig::default()).0;
        assert_eq!(f[15], 0.0);
        let last = extract_layout_features(&r, 4, &[], LayoutConfig::default()).0;
        assert_eq!(last[15], 1.0);
    }

    #[test]
    fn relative_header_positions() {
        let lines: Vec<String> = (0..10).map(|i| format!("line {i}")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let r = report(&refs);
        let f = extract_layout_features(&r, 4, &[(2, SectionLabel::Findings)], LayoutConfig::default()).0;
        assert!((f[7] - 0.2).abs() < 1e-7);
        for k in [3, 4, 5, 6, 8] {
            assert_eq!(f[k], ABSENT_HEADER);
        }
    }

    #[test]
    fn repeated_header_uses_first_occurrence() {
        let r = report(&["FINDINGS:", "a", "b", "FINDINGS:", "c"]);
        let h = detect_headers(&r, &RuleSet::mgb_style());
        assert_eq!(h.len(), 2);
        let f = extract_layout_features(&r, 4, &h, LayoutConfig::default()).0;
        assert_eq!(f[7], 4.0 / 5.0);
    }

    #[test]
    fn raw_count_ablation() {
        let r = report(&["CT 12 views"]);
        let f = extract_layout_features(&r, 0, &[], LayoutConfig { raw_counts: true }).0;
        assert_eq!(&f[..3], &[2.0, 5.0, 2.0]);
    }

    #[test]
    fn first_token_rules() {
        assert_eq!(first_token_upper("CT scan"), 1.0);
        assert_eq!(first_token_upper("Ct scan"), 0.0);
        assert_eq!(first_token_upper("1. scan"), 0.0);
        assert_eq!(first_token_upper("X-RAY2: ok"), 1.0);
        assert_eq!(first_token_upper(""), 0.0);
    }
}
