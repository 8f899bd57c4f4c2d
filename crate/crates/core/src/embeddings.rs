//! Word-vector tables and lookup.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::preprocess::{Vocabulary, PAD_ID, UNK_ID};

pub const PRETRAINED_DIM: usize = 300;
pub const DEFAULT_DIM: usize = 50;
const INIT_RANGE: f64 = 0.05;

/// `[vocab_size × dim]` table; row 0 (PAD) is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: Tensor<f32>,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Uniform `[-0.05, 0.05]` initialization for end-to-end training.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        Self::uniform(vocab_size, dim, INIT_RANGE, seed)
    }

    /// Uniform `[-range, range]` rows; the PAD row stays zero.
    pub fn uniform(vocab_size: usize, dim: usize, range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Tensor::zeros(vocab_size.max(2), dim);
        for r in 1..vectors.rows {
            for v in vectors.row_mut(r) {
                *v = rng.gen_range(-range..=range) as f32;
            }
        }
        EmbeddingTable {
            dim,
            vectors,
            trainable: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows
    }

    pub fn row(&self, id: u32) -> &[f32] {
        self.vectors.row(id as usize)
    }
}

/// Loads whitespace-separated `token v1 ... vd` lines. Vocabulary tokens
/// missing from the file get seeded random vectors; UNK gets the mean of
/// every vector read from the file. A leading `count dim` header is skipped.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dim: Option<usize> = None;
    let mut found: Vec<Option<Vec<f32>>> = vec![None; vocab.len()];
    let mut mean: Vec<f64> = Vec::new();
    let mut loaded = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        let is_header = lineno == 0
            && values.len() == 1
            && token.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok();
        if is_header {
            continue;
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::EmbeddingDimension {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: d,
                found: values.len(),
            });
        }
        let vec: Vec<f32> = values
            .iter()
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "non-finite vector entry".into(),
            });
        }
        if mean.is_empty() {
            mean = vec![0.0; d];
        }
        for (m, &x) in mean.iter_mut().zip(&vec) {
            *m += x as f64;
        }
        loaded += 1;
        if let Some(id) = vocab.get(token).or_else(|| vocab.get(&token.to_lowercase())) {
            if id != PAD_ID && found[id as usize].is_none() {
                found[id as usize] = Some(vec);
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no vectors in embedding file".into(),
    })?;

    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    table.trainable = false;
    for (id, v) in found.into_iter().enumerate() {
        if let Some(v) = v {
            table.vectors.row_mut(id).copy_from_slice(&v);
        }
    }
    let unk: Vec<f32> = mean.iter().map(|m| (m / loaded as f64) as f32).collect();
    table.vectors.row_mut(UNK_ID as usize).copy_from_slice(&unk);
    table.vectors.row_mut(PAD_ID as usize).fill(0.0);
    Ok(table)
}

/// Gathers rows: row `i` of the result is table row `ids[i]`.
pub fn embed(ids: &[u32], table: &EmbeddingTable) -> Result<Tensor<f32>> {
    embed_rows(ids, &table.vectors)
}

pub(crate) fn embed_rows<T: Real>(ids: &[u32], table: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(ids.len(), table.cols);
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= table.rows {
            return Err(Error::TokenOutOfRange {
                id,
                size: table.rows,
            });
        }
        out.row_mut(i).copy_from_slice(table.row(id as usize));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_vectors(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn vec_line(tok: &str, dim: usize, base: f32) -> String {
        let vals: Vec<String> = (0..dim).map(|i| format!("{}", base + i as f32 * 0.01)).collect();
        format!("{tok} {}", vals.join(" "))
    }

    #[test]
    fn loads_300_dim_vectors() {
        let vocab = Vocabulary::from_tokens(["lung", "clear", "missing"]);
        let f = write_vectors(&[vec_line("lung", 300, 0.1), vec_line("clear", 300, -0.2), vec_line("other", 300, 0.4)]);
        let t = load_embeddings(f.path(), &vocab, 9).unwrap();
        assert_eq!(t.dim, PRETRAINED_DIM);
        assert_eq!(t.vocab_size(), 5);
        assert!(!t.trainable);
        assert!(t.row(0).iter().all(|&x| x == 0.0));
        assert!((t.row(vocab.id("lung"))[0] - 0.1).abs() < 1e-7);
        // UNK is the mean of all three file vectors.
        assert!((t.row(UNK_ID)[0] - (0.1 - 0.2 + 0.4) / 3.0).abs() < 1e-6);
        let missing = t.row(vocab.id("missing"));
        assert!(missing.iter().all(|x| x.abs() <= 0.05));
        assert_eq!(load_embeddings(f.path(), &vocab, 9).unwrap(), t);
    }

    #[test]
    fn empty_vocab_gives_two_rows() {
        let f = write_vectors(&[vec_line("x", 4, 1.0)]);
        let t = load_embeddings(f.path(), &Vocabulary::default(), 0).unwrap();
        assert_eq!(t.vocab_size(), 2);
        assert!(t.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn inconsistent_dimension_names_line() {
        let f = write_vectors(&[vec_line("a", 4, 0.0), vec_line("b", 3, 0.0)]);
        match load_embeddings(f.path(), &Vocabulary::default(), 0) {
            Err(Error::EmbeddingDimension { line, expected, found, .. }) => {
                assert_eq!((line, expected, found), (2, 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_embeddings(Path::new("/nonexistent/vectors.txt"), &Vocabulary::default(), 0).is_err());
    }

    #[test]
    fn skips_word2vec_header() {
        let f = write_vectors(&["2 3".into(), vec_line("a", 3, 0.0), vec_line("b", 3, 1.0)]);
        let t = load_embeddings(f.path(), &Vocabulary::from_tokens(["a"]), 0).unwrap();
        assert_eq!(t.dim, 3);
    }

    #[test]
    fn embed_gathers_rows() {
        let t = EmbeddingTable::random(6, 4, 3);
        let z = embed(&[0, 0], &t).unwrap();
        assert!(z.data.iter().all(|&x| x == 0.0));
        assert_eq!(embed(&[4], &t).unwrap().row(0), t.row(4));
        let a = embed(&[1, 2, 3], &t).unwrap();
        let b = embed(&[3, 1, 2], &t).unwrap();
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(2), b.row(0));
        assert!(matches!(embed(&[6], &t), Err(Error::TokenOutOfRange { id: 6, size: 6 })));
    }

    proptest! {
        #[test]
        fn gather_property(ids in proptest::collection::vec(0u32..20, 1..30), seed in any::<u64>()) {
            let t = EmbeddingTable::random(20, 5, seed);
            let m = embed(&ids, &t).unwrap();
            for (i, &id) in ids.iter().enumerate() {
                prop_assert_eq!(m.row(i), t.row(id));
            }
        }
    }
}
