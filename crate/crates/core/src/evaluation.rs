//! Confusion matrices, accuracy / macro-F1 and report-level k-fold CV.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SectionLabel, NUM_LABELS};

/// Rows are gold labels, columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_LABELS]; NUM_LABELS]);

impl ConfusionMatrix {
    pub fn from_pairs(predictions: &[SectionLabel], gold: &[SectionLabel]) -> Result<Self> {
        if predictions.len() != gold.len() {
            return Err(Error::LengthMismatch {
                predictions: predictions.len(),
                gold: gold.len(),
            });
        }
        let mut m = ConfusionMatrix::default();
        for (p, g) in predictions.iter().zip(gold) {
            m.0[g.code()][p.code()] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_LABELS).map(|k| self.0[k][k]).sum()
    }

    /// Each non-empty row scaled to sum to 100.
    pub fn row_percentages(&self) -> [[f64; NUM_LABELS]; NUM_LABELS] {
        let mut out = [[0.0; NUM_LABELS]; NUM_LABELS];
        for (r, row) in self.0.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n > 0 {
                for (c, &v) in row.iter().enumerate() {
                    out[r][c] = 100.0 * v as f64 / n as f64;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: SectionLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub percentages: [[f64; NUM_LABELS]; NUM_LABELS],
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsReport {
    /// Metrics from a confusion matrix; 0/0 precision, recall and F1 are 0.
    pub fn from_confusion(m: ConfusionMatrix) -> Self {
        let per_class: Vec<ClassMetrics> = (0..NUM_LABELS)
            .map(|k| {
                let tp = m.0[k][k];
                let predicted: u64 = (0..NUM_LABELS).map(|r| m.0[r][k]).sum();
                let support: u64 = m.0[k].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    label: SectionLabel::ALL[k],
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        MetricsReport {
            accuracy: ratio(m.trace(), m.total()),
            macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / NUM_LABELS as f64,
            per_class,
            confusion: m,
            percentages: m.row_percentages(),
        }
    }
}

/// Accuracy, macro-F1 and the confusion matrix for aligned label sequences.
pub fn score(predictions: &[SectionLabel], gold: &[SectionLabel]) -> Result<MetricsReport> {
    if gold.is_empty() && predictions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(MetricsReport::from_confusion(ConfusionMatrix::from_pairs(predictions, gold)?))
}

fn short(label: SectionLabel) -> &'static str {
    match label {
        SectionLabel::Reason => "Rea",
        SectionLabel::History => "His",
        SectionLabel::Comparison => "Cmp",
        SectionLabel::Technique => "Tec",
        SectionLabel::Findings => "Fnd",
        SectionLabel::Impression => "Imp",
        SectionLabel::Others => "Oth",
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy {:.2}%  macro-F1 {:.2}",
            100.0 * self.accuracy,
            100.0 * self.macro_f1
        )?;
        writeln!(f, "{:<12}{:>10}{:>10}{:>10}{:>9}", "class", "precision", "recall", "f1", "support")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<12}{:>10.4}{:>10.4}{:>10.4}{:>9}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        writeln!(f, "confusion (rows gold, cols predicted, % of row):")?;
        write!(f, "{:<6}", "")?;
        for l in SectionLabel::ALL {
            write!(f, "{:>7}", short(l))?;
        }
        writeln!(f)?;
        for (r, row) in self.percentages.iter().enumerate() {
            write!(f, "{:<6}", short(SectionLabel::ALL[r]))?;
            for v in row {
                write!(f, "{v:>7.1}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `97.0% ± 0.2%` from fractions.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1}% ± {:.1}%", 100.0 * mean, 100.0 * std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<MetricsReport>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

impl CvSummary {
    pub fn from_folds(folds: Vec<MetricsReport>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|m| m.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|m| m.macro_f1).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&acc);
        let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
        CvSummary {
            folds,
            accuracy_mean,
            accuracy_std,
            macro_f1_mean,
            macro_f1_std,
        }
    }
}

impl fmt::Display for CvSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}-fold cross-validation", self.folds.len())?;
        for (i, m) in self.folds.iter().enumerate() {
            writeln!(
                f,
                "  fold {}: accuracy {:.2}%  macro-F1 {:.2}",
                i + 1,
                100.0 * m.accuracy,
                100.0 * m.macro_f1
            )?;
        }
        writeln!(f, "accuracy {}", format_mean_std(self.accuracy_mean, self.accuracy_std))?;
        write!(f, "macro-F1 {}", format_mean_std(self.macro_f1_mean, self.macro_f1_std))
    }
}

/// Deterministic report-level fold assignment: fold `i` holds the shuffled
/// positions congruent to `i` mod `k`.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidFolds { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Runs `run(train, test)` on every fold and summarizes the metrics.
pub fn cross_validate<R, F>(corpus: &[R], k: usize, seed: u64, mut run: F) -> Result<CvSummary>
where
    R: Clone,
    F: FnMut(usize, &[R], &[R]) -> Result<MetricsReport>,
{
    let folds = kfold_indices(corpus.len(), k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for (i, test_idx) in folds.iter().enumerate() {
        let test: Vec<R> = test_idx.iter().map(|&j| corpus[j].clone()).collect();
        let train: Vec<R> = folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != i)
            .flat_map(|(_, idx)| idx.iter().map(|&j| corpus[j].clone()))
            .collect();
        reports.push(run(i, &train, &test)?);
    }
    Ok(CvSummary::from_folds(reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SectionLabel::*;

    fn labels(codes: &[usize]) -> Vec<SectionLabel> {
        codes.iter().map(|&c| SectionLabel::ALL[c]).collect()
    }

    #[test]
    fn perfect_predictions() {
        let g = labels(&[0, 1, 2, 3, 4, 5, 6, 4]);
        let m = score(&g, &g).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn three_class_hand_case() {
        // gold:  F F F I I R
        // pred:  F F I I R R
        let gold = vec![Findings, Findings, Findings, Impression, Impression, Reason];
        let pred = vec![Findings, Findings, Impression, Impression, Reason, Reason];
        let m = score(&pred, &gold).unwrap();
        // F: p=1 r=2/3 → 0.8; I: p=1/2 r=1/2 → 0.5; R: p=1/2 r=1 → 2/3
        let expected = (0.8 + 0.5 + 2.0 / 3.0) / 7.0;
        assert!((m.macro_f1 - expected).abs() < 1e-12);
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.per_class[Technique.code()].f1, 0.0);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(matches!(
            score(&[Findings], &[]),
            Err(Error::LengthMismatch { predictions: 1, gold: 0 })
        ));
    }

    #[test]
    fn mean_std_format() {
        let (m, s) = mean_std(&[0.968, 0.972]);
        assert!((m - 0.970).abs() < 1e-12);
        assert!((s - 0.002).abs() < 1e-12);
        assert_eq!(format_mean_std(m, s), "97.0% ± 0.2%");
    }

    #[test]
    fn folds_partition_and_are_deterministic() {
        let f = kfold_indices(23, 5, 9).unwrap();
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|x| x.len() == 4 || x.len() == 5));
        assert_eq!(f, kfold_indices(23, 5, 9).unwrap());
        assert!(kfold_indices(3, 4, 0).is_err());
        assert!(kfold_indices(3, 1, 0).is_err());
    }

    #[test]
    fn identical_reports_give_zero_std() {
        let corpus = vec![(vec![Findings, Impression], vec![Findings, Findings]); 6];
        let cv = cross_validate(&corpus, 2, 1, |_, _, test| {
            let (p, g): (Vec<_>, Vec<_>) = test
                .iter()
                .flat_map(|(g, p)| p.iter().copied().zip(g.iter().copied()))
                .unzip();
            score(&p, &g)
        })
        .unwrap();
        assert_eq!(cv.folds[0], cv.folds[1]);
        assert_eq!(cv.accuracy_std, 0.0);
        assert!(cv.to_string().contains("50.0% ± 0.0%"));
    }

    proptest! {
        #[test]
        fn accuracy_two_ways_and_percentages(pairs in proptest::collection::vec((0usize..7, 0usize..7), 1..300)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let (p, g) = (labels(&p), labels(&g));
            let m = score(&p, &g).unwrap();
            let direct = p.iter().zip(&g).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
            prop_assert!((m.accuracy - direct).abs() < 1e-12);
            prop_assert_eq!(m.confusion.total(), p.len() as u64);
            for row in &m.percentages {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 100.0).abs() < 0.01);
            }
        }

        #[test]
        fn macro_f1_permutation_invariant(
            pairs in proptest::collection::vec((0usize..7, 0usize..7), 1..200),
            perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = score(&labels(&p), &labels(&g)).unwrap();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let gg: Vec<usize> = g.iter().map(|&c| perm[c]).collect();
            let b = score(&labels(&pp), &labels(&gg)).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        }
    }
}
