use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tfidf::SparseVector;
use crate::error::{Error, Result};
use crate::types::{argmax, SectionLabel, NUM_LABELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 strength used by [`fit_svm`].
    pub alpha: f64,
    /// Candidates tried by [`select_svm`].
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            learning_rate: 0.01,
            epochs: 200,
            alpha: 1e-4,
            alpha_grid: vec![1e-5, 1e-4, 1e-3],
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub alpha: f64,
}

/// `n / (n_present · count_k)` for every present class, 0 for absent ones.
/// With all seven classes present this is `n / (7 · count_k)`.
pub fn balanced_class_weights(labels: &[SectionLabel]) -> [f64; NUM_LABELS] {
    let mut counts = [0usize; NUM_LABELS];
    for l in labels {
        counts[l.code()] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let mut w = [0.0; NUM_LABELS];
    for (wk, &c) in w.iter_mut().zip(&counts) {
        if c > 0 {
            *wk = labels.len() as f64 / (present * c) as f64;
        }
    }
    w
}

/// Per-sample subgradient descent on the class-weighted hinge loss plus
/// `alpha/2 ‖w‖²`. The weight vector is kept as `scale · v` so the L2 shrink
/// is O(1) per step.
pub fn fit_svm(
    xs: &[SparseVector],
    labels: &[SectionLabel],
    dim: usize,
    cfg: &SvmConfig,
) -> Result<LinearSvm> {
    if xs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: xs.len(),
            gold: labels.len(),
        });
    }
    let first = labels.first().ok_or(Error::EmptyTrainingSet)?;
    if labels.iter().all(|l| l == first) {
        return Err(Error::SingleClass(first.code()));
    }
    let cw = balanced_class_weights(labels);
    let eta = cfg.learning_rate;
    let shrink = 1.0 - eta * cfg.alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut v = vec![vec![0.0; dim]; NUM_LABELS];
    let mut scale = [1.0f64; NUM_LABELS];
    let mut b = vec![0.0; NUM_LABELS];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &xs[i];
            let c = cw[labels[i].code()];
            for k in 0..NUM_LABELS {
                let y = if labels[i].code() == k { 1.0 } else { -1.0 };
                let margin = scale[k] * x.iter().map(|&(j, val)| v[k][j] * val).sum::<f64>() + b[k];
                scale[k] *= shrink;
                if y * margin < 1.0 {
                    let step = eta * c * y;
                    for &(j, val) in x {
                        v[k][j] += step * val / scale[k];
                    }
                    b[k] += step;
                }
                if scale[k] < 1e-6 {
                    v[k].iter_mut().for_each(|w| *w *= scale[k]);
                    scale[k] = 1.0;
                }
            }
        }
    }
    for (vk, s) in v.iter_mut().zip(scale) {
        vk.iter_mut().for_each(|w| *w *= s);
    }
    Ok(LinearSvm {
        weights: v,
        biases: b,
        alpha: cfg.alpha,
    })
}

/// Fits one model per `alpha_grid` entry and keeps the best by validation
/// accuracy (earliest candidate on ties).
pub fn select_svm(
    train: (&[SparseVector], &[SectionLabel]),
    val: (&[SparseVector], &[SectionLabel]),
    dim: usize,
    cfg: &SvmConfig,
) -> Result<LinearSvm> {
    let grid = if cfg.alpha_grid.is_empty() {
        vec![cfg.alpha]
    } else {
        cfg.alpha_grid.clone()
    };
    let mut best: Option<(f64, LinearSvm)> = None;
    for alpha in grid {
        let m = fit_svm(train.0, train.1, dim, &SvmConfig { alpha, ..cfg.clone() })?;
        let acc = if val.0.is_empty() {
            m.accuracy(train.0, train.1)
        } else {
            m.accuracy(val.0, val.1)
        };
        debug!("svm alpha {alpha}: validation accuracy {acc:.4}");
        if best.as_ref().map_or(true, |(a, _)| acc > *a) {
            best = Some((acc, m));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

impl LinearSvm {
    pub fn margins(&self, x: &SparseVector) -> [f64; NUM_LABELS] {
        let mut m = [0.0; NUM_LABELS];
        for (k, mk) in m.iter_mut().enumerate() {
            *mk = x.iter().map(|&(j, v)| self.weights[k][j] * v).sum::<f64>() + self.biases[k];
        }
        m
    }

    pub fn predict(&self, x: &SparseVector) -> SectionLabel {
        SectionLabel::from_code(argmax(&self.margins(x))).expect("argmax < 7")
    }

    pub fn accuracy(&self, xs: &[SparseVector], labels: &[SectionLabel]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let hits = xs.iter().zip(labels).filter(|(x, l)| self.predict(x) == **l).count();
        hits as f64 / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separable_two_class_toy() {
        let xs: Vec<SparseVector> = (0..20)
            .map(|i| if i % 2 == 0 { vec![(0, 1.0)] } else { vec![(1, 1.0)] })
            .collect();
        let ys: Vec<_> = (0..20)
            .map(|i| if i % 2 == 0 { SectionLabel::Findings } else { SectionLabel::Impression })
            .collect();
        let m = fit_svm(&xs, &ys, 2, &SvmConfig::default()).unwrap();
        assert_eq!(m.accuracy(&xs, &ys), 1.0);
        assert_eq!(m, fit_svm(&xs, &ys, 2, &SvmConfig::default()).unwrap());
        // the empty vector falls back to the bias argmax
        let _ = m.predict(&Vec::new());
    }

    #[test]
    fn minority_weight() {
        let mut ys = vec![SectionLabel::Findings; 99];
        ys.push(SectionLabel::Reason);
        let w = balanced_class_weights(&ys);
        assert!((w[SectionLabel::Reason.code()] - 50.0).abs() < 1e-12);
        assert!((w[SectionLabel::Findings.code()] - 100.0 / 198.0).abs() < 1e-12);
        assert_eq!(w[SectionLabel::Others.code()], 0.0);
    }

    #[test]
    fn all_classes_present_uses_seven() {
        let ys: Vec<_> = (0..21).map(|i| SectionLabel::ALL[i % 7]).collect();
        let w = balanced_class_weights(&ys);
        assert!(w.iter().all(|&x| (x - 21.0 / (7.0 * 3.0)).abs() < 1e-12));
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![(0, 1.0)]; 3];
        let ys = vec![SectionLabel::Others; 3];
        assert!(matches!(fit_svm(&xs, &ys, 1, &SvmConfig::default()), Err(Error::SingleClass(6))));
    }

    proptest! {
        #[test]
        fn balanced_weights_sum_to_n(codes in proptest::collection::vec(0usize..7, 1..200)) {
            let ys: Vec<_> = codes.iter().map(|&c| SectionLabel::ALL[c]).collect();
            let w = balanced_class_weights(&ys);
            let total: f64 = ys.iter().map(|l| w[l.code()]).sum();
            prop_assert!((total - ys.len() as f64).abs() < 1e-9 * ys.len() as f64);
        }
    }
}
