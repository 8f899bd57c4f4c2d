//! One-vs-rest logistic-regression stacker over the base models' probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax, ProbVector, ScoreVector, SectionLabel, NUM_LABELS};

/// Number of base models feeding the stacker.
pub const NUM_BLOCKS: usize = 3;
pub const STACK_DIM: usize = NUM_BLOCKS * NUM_LABELS;
pub const BLOCK_NAMES: [&str; NUM_BLOCKS] = ["focus", "surrounding", "layout"];

/// Concatenated `[focus | surrounding | layout]` probability vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackingInput(pub [f64; STACK_DIM]);

impl StackingInput {
    pub fn new(focus: &ProbVector, surrounding: &ProbVector, layout: &ProbVector) -> Self {
        let mut x = [0.0; STACK_DIM];
        for (b, p) in [focus, surrounding, layout].into_iter().enumerate() {
            x[b * NUM_LABELS..(b + 1) * NUM_LABELS].copy_from_slice(&p.0);
        }
        StackingInput(x)
    }

    pub fn block(&self, b: usize) -> &[f64] {
        &self.0[b * NUM_LABELS..(b + 1) * NUM_LABELS]
    }

    pub fn is_valid(&self) -> bool {
        (0..NUM_BLOCKS).all(|b| {
            let blk = self.block(b);
            blk.iter().all(|v| (0.0..=1.0).contains(v))
                && (blk.iter().sum::<f64>() - 1.0).abs() <= 1e-6
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackerConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StackerConfig {
    fn default() -> Self {
        StackerConfig {
            l2: 1e-4,
            tolerance: 1e-6,
            max_iterations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackerModel {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// Dataset id of the last fine-tuning run, if any.
    pub finetuned_on: Option<String>,
}

impl Default for StackerModel {
    fn default() -> Self {
        StackerModel {
            weights: vec![vec![0.0; STACK_DIM]; NUM_LABELS],
            biases: vec![0.0; NUM_LABELS],
            finetuned_on: None,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Gradient descent on `mean logloss + l2/2 ‖w‖²` (bias unpenalized) from
/// the given start. The step is `1/L` for the loss's Lipschitz bound `L`.
fn fit_binary(
    xs: &[StackingInput],
    ys: &[bool],
    w: &mut [f64],
    b: &mut f64,
    cfg: &StackerConfig,
) {
    let n = xs.len() as f64;
    let max_sq = xs
        .iter()
        .map(|x| x.0.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (0.25 * (max_sq + 1.0) + cfg.l2);
    let mut gw = [0.0; STACK_DIM];
    for _ in 0..cfg.max_iterations {
        gw.fill(0.0);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let r = sigmoid(dot(w, &x.0) + *b) - if y { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(&x.0) {
                *g += r * v;
            }
            gb += r;
        }
        for (g, wi) in gw.iter_mut().zip(w.iter()) {
            *g = *g / n + cfg.l2 * wi;
        }
        gb /= n;
        let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if norm < cfg.tolerance {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        *b -= step * gb;
    }
}

fn check_set(inputs: &[StackingInput], labels: &[SectionLabel]) -> Result<()> {
    if inputs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: inputs.len(),
            gold: labels.len(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::DegenerateStackingSet("no rows".into()));
    }
    if labels.iter().all(|l| *l == labels[0]) {
        return Err(Error::DegenerateStackingSet(format!(
            "only class {} present",
            labels[0]
        )));
    }
    Ok(())
}

fn descend(
    model: &mut StackerModel,
    inputs: &[StackingInput],
    labels: &[SectionLabel],
    cfg: &StackerConfig,
) {
    for k in 0..NUM_LABELS {
        let ys: Vec<bool> = labels.iter().map(|l| l.code() == k).collect();
        let (w, b) = (&mut model.weights[k], &mut model.biases[k]);
        fit_binary(inputs, &ys, w, b, cfg);
    }
}

/// Fits the seven binary classifiers from zero on the holdout predictions.
pub fn fit_stacker(
    inputs: &[StackingInput],
    labels: &[SectionLabel],
    cfg: &StackerConfig,
) -> Result<StackerModel> {
    check_set(inputs, labels)?;
    let mut model = StackerModel::default();
    descend(&mut model, inputs, labels, cfg);
    Ok(model)
}

/// Continues gradient descent from the current weights on new data only.
pub fn finetune_stacker(
    model: &StackerModel,
    inputs: &[StackingInput],
    labels: &[SectionLabel],
    cfg: &StackerConfig,
    dataset_id: &str,
) -> Result<StackerModel> {
    check_set(inputs, labels)?;
    let mut tuned = model.clone();
    descend(&mut tuned, inputs, labels, cfg);
    tuned.finetuned_on = Some(dataset_id.to_string());
    Ok(tuned)
}

impl StackerModel {
    pub fn scores(&self, x: &StackingInput) -> ScoreVector {
        let mut s = [0.0; NUM_LABELS];
        for k in 0..NUM_LABELS {
            s[k] = sigmoid(dot(&self.weights[k], &x.0) + self.biases[k]);
        }
        ScoreVector(s)
    }
}

/// Sigmoid scores and their argmax (lowest code on ties).
pub fn predict_stacker(model: &StackerModel, x: &StackingInput) -> (SectionLabel, ScoreVector) {
    let s = model.scores(x);
    let label = SectionLabel::from_code(argmax(&s.0)).expect("argmax < 7");
    (label, s)
}

/// Mean |w| per (class, base-model block).
pub fn ensemble_weight_report(model: &StackerModel) -> [[f64; NUM_BLOCKS]; NUM_LABELS] {
    let mut t = [[0.0; NUM_BLOCKS]; NUM_LABELS];
    for (k, row) in t.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            let blk = &model.weights[k][b * NUM_LABELS..(b + 1) * NUM_LABELS];
            *cell = blk.iter().map(|w| w.abs()).sum::<f64>() / NUM_LABELS as f64;
        }
    }
    t
}

/// Renders the weight report as a fixed-width table.
pub fn format_weight_report(t: &[[f64; NUM_BLOCKS]; NUM_LABELS]) -> String {
    let mut s = format!("{:<12}", "class");
    for name in BLOCK_NAMES {
        s.push_str(&format!("{name:>13}"));
    }
    s.push('\n');
    for (k, row) in t.iter().enumerate() {
        s.push_str(&format!("{:<12}", SectionLabel::ALL[k].as_str()));
        for v in row {
            s.push_str(&format!("{v:>13.4}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_prob(rng: &mut ChaCha8Rng) -> ProbVector {
        let raw: Vec<f64> = (0..NUM_LABELS).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let mut a = [0.0; NUM_LABELS];
        for (o, r) in a.iter_mut().zip(&raw) {
            *o = r / s;
        }
        ProbVector(a)
    }

    /// Context blocks are one-hot at the label, layout block is noise.
    fn fixture(n: usize, seed: u64) -> (Vec<StackingInput>, Vec<SectionLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let l = SectionLabel::ALL[i % NUM_LABELS];
            let oh = ProbVector::one_hot(l);
            xs.push(StackingInput::new(&oh, &oh, &random_prob(&mut rng)));
            ys.push(l);
        }
        (xs, ys)
    }

    fn accuracy(m: &StackerModel, xs: &[StackingInput], ys: &[SectionLabel]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| predict_stacker(m, x).0 == **y)
            .count();
        hits as f64 / xs.len() as f64
    }

    fn block_norm(m: &StackerModel, b: usize) -> f64 {
        m.weights
            .iter()
            .flat_map(|w| &w[b * NUM_LABELS..(b + 1) * NUM_LABELS])
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn separable_holdout_is_learned() {
        let (xs, ys) = fixture(140, 1);
        assert!(xs.iter().all(StackingInput::is_valid));
        let m = fit_stacker(&xs, &ys, &StackerConfig::default()).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys), 1.0);
        assert!(block_norm(&m, 2) < block_norm(&m, 0));
        assert!(block_norm(&m, 2) < block_norm(&m, 1));
        let t = ensemble_weight_report(&m);
        for row in &t {
            assert!(row[0] > row[2] && row[1] > row[2]);
        }
    }

    #[test]
    fn zero_model_scores_half_and_picks_code_zero() {
        let m = StackerModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_prob(&mut rng);
        let (label, s) = predict_stacker(&m, &StackingInput::new(&p, &p, &p));
        assert!(s.0.iter().all(|&v| v == 0.5));
        assert_eq!(label, SectionLabel::Reason);
        assert!(ensemble_weight_report(&m).iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_shift_preserves_label() {
        let (xs, ys) = fixture(70, 3);
        let m = fit_stacker(&xs, &ys, &StackerConfig::default()).unwrap();
        for c in [-3.0, 0.5, 7.0] {
            let mut shifted = m.clone();
            shifted.biases.iter_mut().for_each(|b| *b += c);
            for x in &xs {
                assert_eq!(predict_stacker(&m, x).0, predict_stacker(&shifted, x).0);
            }
        }
    }

    #[test]
    fn duplicating_rows_keeps_weights() {
        let (xs, ys) = fixture(35, 5);
        let cfg = StackerConfig {
            max_iterations: 300,
            ..StackerConfig::default()
        };
        let a = fit_stacker(&xs, &ys, &cfg).unwrap();
        // each row twice, in place: the running sums see the same partials doubled
        let xs2: Vec<_> = xs.iter().flat_map(|x| [*x, *x]).collect();
        let ys2: Vec<_> = ys.iter().flat_map(|y| [*y, *y]).collect();
        let b = fit_stacker(&xs2, &ys2, &cfg).unwrap();
        for (wa, wb) in a.weights.iter().flatten().zip(b.weights.iter().flatten()) {
            assert!((wa - wb).abs() < 1e-12, "{wa} vs {wb}");
        }
        assert_eq!(fit_stacker(&xs, &ys, &cfg).unwrap(), a);
    }

    #[test]
    fn degenerate_sets_are_rejected() {
        let (xs, _) = fixture(5, 0);
        let ys = vec![SectionLabel::Findings; 5];
        assert!(matches!(
            fit_stacker(&xs, &ys, &StackerConfig::default()),
            Err(Error::DegenerateStackingSet(_))
        ));
        let m = StackerModel::default();
        assert!(finetune_stacker(&m, &[], &[], &StackerConfig::default(), "x").is_err());
    }

    #[test]
    fn finetune_records_dataset_and_moves_weights() {
        let (xs, ys) = fixture(70, 8);
        let cfg = StackerConfig::default();
        let m = fit_stacker(&xs, &ys, &cfg).unwrap();
        // relabel: the layout block is now the informative one
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shifted: Vec<_> = ys
            .iter()
            .map(|l| {
                let noise = random_prob(&mut rng);
                StackingInput::new(&noise, &noise, &ProbVector::one_hot(*l))
            })
            .collect();
        let before = accuracy(&m, &shifted, &ys);
        let t = finetune_stacker(&m, &shifted, &ys, &cfg, "shifted").unwrap();
        assert_eq!(t.finetuned_on.as_deref(), Some("shifted"));
        assert!(accuracy(&t, &shifted, &ys) > before);
    }
}
