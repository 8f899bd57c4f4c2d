//! Character cleaning, sentence segmentation and word-level tokenization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Report, Sentence};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Replaces every character that is not an ASCII letter or digit with a space.
/// The output has the same number of characters as the input.
pub fn clean_text(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
        .collect()
}

/// Lowercased, cleaned, whitespace-separated tokens of `text`.
pub fn word_tokens(text: &str) -> Vec<String> {
    clean_text(&text.to_lowercase())
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Rule-based sentence segmentation.
///
/// A sentence ends at a newline, or at a period or colon that is followed by
/// whitespace or the end of the text (the delimiter stays with the sentence).
/// Spans are trimmed and empty spans dropped; offsets are character offsets.
pub fn segment_sentences(raw_text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = raw_text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 0..n {
        let c = chars[i];
        if c == '\n' || c == '\r' {
            spans.push((start, i));
            start = i + 1;
        } else if (c == '.' || c == ':') && (i + 1 == n || chars[i + 1].is_whitespace()) {
            spans.push((start, i + 1));
            start = i + 1;
        }
    }
    spans.push((start, n));

    let mut out = Vec::new();
    for (mut b, mut e) in spans {
        while b < e && chars[b].is_whitespace() {
            b += 1;
        }
        while e > b && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if b < e {
            out.push(Sentence {
                text: chars[b..e].iter().collect(),
                begin: b,
                end: e,
                index: out.len(),
            });
        }
    }
    out
}

/// Token-to-id map with reserved PAD (0) and UNK (1) entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the non-reserved tokens, in id order starting at 2.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        index.insert(PAD_TOKEN.to_string(), PAD_ID);
        index.insert(UNK_TOKEN.to_string(), UNK_ID);
        for t in tokens {
            let t = t.into();
            if index.contains_key(&t) {
                continue;
            }
            index.insert(t.clone(), all.len() as u32);
            all.push(t);
        }
        Vocabulary { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// One token per line; line `k` holds id `k + 2`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in self.words() {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_tokens(
            s.lines().filter(|l| !l.is_empty()).map(str::to_owned),
        ))
    }
}

/// Counts tokens over every sentence of `corpus` and keeps those seen at least
/// `min_count` times, ordered by descending frequency then lexicographically.
pub fn build_vocab(corpus: &[Report], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for report in corpus {
        for s in &report.sentences {
            for t in word_tokens(&s.text) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub raw: Sentence,
}

pub fn tokenize(sentence: &Sentence, vocab: &Vocabulary) -> TokenizedSentence {
    let tokens = word_tokens(&sentence.text);
    let token_ids = token_ids(&tokens, vocab);
    TokenizedSentence {
        tokens,
        token_ids,
        raw: sentence.clone(),
    }
}

/// Ids for `tokens`; the empty sequence maps to a single PAD.
pub fn token_ids(tokens: &[String], vocab: &Vocabulary) -> Vec<u32> {
    if tokens.is_empty() {
        vec![PAD_ID]
    } else {
        tokens.iter().map(|t| vocab.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent boundary scan: walks the text as bytes-of-chars with a
    /// lookahead window and yields trimmed sentence strings.
    fn oracle_segments(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        let mut it = text.chars().peekable();
        while let Some(c) = it.next() {
            if c == '\n' || c == '\r' {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            cur.push(c);
            if (c == '.' || c == ':') && it.peek().map_or(true, |n| n.is_whitespace()) {
                out.push(std::mem::take(&mut cur));
            }
        }
        out.push(cur);
        out.into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    fn texts(v: &[Sentence]) -> Vec<String> {
        v.iter().map(|s| s.text.clone()).collect()
    }

    #[test]
    fn clean_text_examples() {
        assert_eq!(clean_text("CT scan, 2 views."), "CT scan  2 views ");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("FINDINGS:"), "FINDINGS ");
    }

    #[test]
    fn segment_examples() {
        let t = "FINDINGS: No fracture. Lungs clear.";
        let got = segment_sentences(t);
        assert_eq!(texts(&got), vec!["FINDINGS:", "No fracture.", "Lungs clear."]);
        assert_eq!(texts(&got), oracle_segments(t));
        assert_eq!(segment_sentences("one\n\ntwo").len(), 2);
        let nodule = segment_sentences("3.5 cm nodule.");
        assert_eq!(texts(&nodule), vec!["3.5 cm nodule."]);
        assert_eq!(texts(&nodule), oracle_segments("3.5 cm nodule."));
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("  \n \n").is_empty());
    }

    #[test]
    fn segment_offsets() {
        let t = "  EXAM: CT head\nIMPRESSION: Normal.  ";
        let r = Report::from_text("r", t);
        r.validate().unwrap();
        assert_eq!(texts(&r.sentences), vec!["EXAM:", "CT head", "IMPRESSION:", "Normal."]);
        assert_eq!(r.sentences[0].begin, 2);
    }

    #[test]
    fn tokenize_conventions() {
        let vocab = Vocabulary::from_tokens(["no", "fracture"]);
        let s = |t: &str| Sentence {
            text: t.into(),
            begin: 0,
            end: t.chars().count(),
            index: 0,
        };
        let tk = tokenize(&s("No fracture."), &vocab);
        assert_eq!(tk.tokens, vec!["no", "fracture"]);
        assert_eq!(tk.token_ids, vec![2, 3]);
        let empty = tokenize(&s(""), &vocab);
        assert!(empty.tokens.is_empty());
        assert_eq!(empty.token_ids, vec![PAD_ID]);
        assert_eq!(tokenize(&s("qzxv"), &vocab).token_ids, vec![UNK_ID]);
    }

    #[test]
    fn vocab_threshold_and_order() {
        let text = "chest chest chest chest chest rare";
        let corpus = vec![Report::from_text("a", text)];
        let v = build_vocab(&corpus, 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("chest"), 2);
        assert_eq!(v.id("rare"), UNK_ID);
        assert_eq!(build_vocab(&corpus, 1).len(), 4);
        assert_eq!(build_vocab(&corpus, 2), v);
        assert_eq!(build_vocab(&[], 1).len(), 2);
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let corpus = vec![Report::from_text("a", "zeta alpha mid mid")];
        let v = build_vocab(&corpus, 1);
        assert_eq!(v.words(), &["mid", "alpha", "zeta"]);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::from_tokens(["lung", "clear", "effusion"]);
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    proptest! {
        #[test]
        fn clean_text_is_idempotent_and_length_preserving(s in "\\PC*") {
            let c = clean_text(&s);
            prop_assert_eq!(c.chars().count(), s.chars().count());
            prop_assert!(c.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == ' '));
            prop_assert_eq!(clean_text(&c), c);
        }

        #[test]
        fn segmentation_reconstructs(s in "[a-zA-Z0-9 .:,\\n\\t]{0,120}") {
            let sents = segment_sentences(&s);
            let chars: Vec<char> = s.chars().collect();
            let mut rebuilt = String::new();
            let mut pos = 0;
            for (i, sent) in sents.iter().enumerate() {
                prop_assert_eq!(sent.index, i);
                let gap: String = chars[pos..sent.begin].iter().collect();
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(&gap);
                let span: String = chars[sent.begin..sent.end].iter().collect();
                prop_assert_eq!(&span, &sent.text);
                rebuilt.push_str(&span);
                pos = sent.end;
            }
            let tail: String = chars[pos..].iter().collect();
            prop_assert!(tail.chars().all(char::is_whitespace));
            rebuilt.push_str(&tail);
            prop_assert_eq!(rebuilt, s.clone());
            prop_assert_eq!(texts(&sents), oracle_segments(&s));
        }

        #[test]
        fn tokenization_ids_always_valid(s in "\\PC{0,60}") {
            let vocab = Vocabulary::from_tokens(["the", "a", "lung"]);
            let sent = Sentence { text: s.clone(), begin: 0, end: s.chars().count().max(1), index: 0 };
            let t = tokenize(&sent, &vocab);
            prop_assert!(!t.token_ids.is_empty());
            prop_assert!(t.token_ids.iter().all(|&id| (id as usize) < vocab.len()));
        }
    }
}
