use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::word_tokens;

/// `(feature index, value)` pairs sorted by index.
pub type SparseVector = Vec<(usize, f64)>;

/// Unigram TF-IDF with smooth idf `ln((1+N)/(1+df)) + 1` and L2-normalized rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    terms: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TfidfVectorizer {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let mut toks = word_tokens(d.as_ref());
            toks.sort();
            toks.dedup();
            for t in toks {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let (terms, idf) = df
            .into_iter()
            .map(|(t, c)| (t, ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
            .unzip();
        let mut v = TfidfVectorizer {
            terms,
            idf,
            index: HashMap::new(),
        };
        v.rebuild_index();
        Ok(v)
    }

    /// Restores the lookup table after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index.get(term).map(|&i| self.idf[i])
    }

    /// Raw counts times idf, then L2-normalized; unseen tokens are ignored.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in word_tokens(text) {
            if let Some(&i) = self.index.get(&t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVector = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= norm);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ubiquitous_token_has_unit_idf() {
        let v = TfidfVectorizer::fit(&["lung clear", "lung opacity", "lung"]).unwrap();
        assert_eq!(v.idf("lung"), Some(1.0));
        let x = v.transform("lung");
        assert_eq!(x.len(), 1);
        assert!((x[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_table() {
        let docs = ["a b", "a c c", "b"];
        let v = TfidfVectorizer::fit(&docs).unwrap();
        let idf_a = (4.0f64 / 3.0).ln() + 1.0;
        let idf_b = idf_a;
        let idf_c = (4.0f64 / 2.0).ln() + 1.0;
        assert!((v.idf("c").unwrap() - idf_c).abs() < 1e-12);
        let x = v.transform("a c c");
        let (wa, wc) = (idf_a, 2.0 * idf_c);
        let n = (wa * wa + wc * wc).sqrt();
        assert_eq!(x.len(), 2);
        assert!((x[0].1 - wa / n).abs() < 1e-12);
        assert!((x[1].1 - wc / n).abs() < 1e-12);
        let y = v.transform("b a");
        assert!((y[0].1 - y[1].1).abs() < 1e-12 && idf_b == idf_a);
    }

    #[test]
    fn unseen_and_empty_give_zero_vector() {
        let v = TfidfVectorizer::fit(&["x y"]).unwrap();
        assert!(v.transform("").is_empty());
        assert!(v.transform("qq zz").is_empty());
        assert!(TfidfVectorizer::fit::<&str>(&[]).is_err());
    }

    #[test]
    fn serde_roundtrip_restores_lookup() {
        let v = TfidfVectorizer::fit(&["a b", "b c"]).unwrap();
        let mut w: TfidfVectorizer = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        w.rebuild_index();
        assert_eq!(v, w);
        assert_eq!(v.transform("a c"), w.transform("a c"));
    }
}
