//! Dense, recurrent, pooling and dropout layers with explicit backward passes.
//!
//! Layers own no parameters: they hold [`ParamId`] handles into a
//! [`ParamSet`], and backward passes accumulate into a gradient set of the
//! same layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{affine, axpy, dot, ParamId, ParamSet, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Numerically stable softmax, normalized in f64.
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.f64()));
    let exps: Vec<f64> = z.iter().map(|x| (x.f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| T::of(e / sum)).collect()
}

/// Gradient of `-ln softmax(z)[target]` with respect to the logits `z`.
pub fn softmax_xent_grad<T: Real>(probs: &[T], target: usize) -> Vec<T> {
    let mut g = probs.to_vec();
    g[target] -= T::one();
    g
}

/// `-ln p[target]` with `p` clamped to at least 1e-12.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(1e-12).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    input: Vec<T>,
    output: Vec<T>,
}

impl Dense {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let w = params.add(format!("{name}.w"), Tensor::glorot(input, output, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(1, output));
        Dense {
            w,
            b,
            input,
            output,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn infer<T: Real>(&self, p: &ParamSet<T>, x: &[T]) -> Vec<T> {
        let z = affine(x, p.get(self.w), &p.get(self.b).data);
        match self.activation {
            Activation::Relu => z.into_iter().map(|v| v.max(T::zero())).collect(),
            Activation::Softmax => softmax(&z),
            Activation::None => z,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamSet<T>, x: &[T]) -> (Vec<T>, DenseCache<T>) {
        let y = self.infer(p, x);
        let cache = DenseCache {
            input: x.to_vec(),
            output: y.clone(),
        };
        (y, cache)
    }

    /// Backward from the post-activation gradient `dy`; returns `dx`.
    pub fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        cache: &DenseCache<T>,
        dy: &[T],
        g: &mut ParamSet<T>,
    ) -> Vec<T> {
        let dz: Vec<T> = match self.activation {
            Activation::Relu => dy
                .iter()
                .zip(&cache.output)
                .map(|(&d, &y)| if y > T::zero() { d } else { T::zero() })
                .collect(),
            Activation::None => dy.to_vec(),
            Activation::Softmax => {
                let s = dot(&cache.output, dy);
                cache
                    .output
                    .iter()
                    .zip(dy)
                    .map(|(&y, &d)| y * (d - s))
                    .collect()
            }
        };
        self.backward_preactivation(p, cache, &dz, g)
    }

    /// Backward from the pre-activation gradient `dz` (used by the fused
    /// softmax/cross-entropy head).
    pub fn backward_preactivation<T: Real>(
        &self,
        p: &ParamSet<T>,
        cache: &DenseCache<T>,
        dz: &[T],
        g: &mut ParamSet<T>,
    ) -> Vec<T> {
        if g.is_trainable(self.w) {
            let gw = g.get_mut(self.w);
            for (i, &xi) in cache.input.iter().enumerate() {
                if xi != T::zero() {
                    axpy(xi, dz, gw.row_mut(i));
                }
            }
            axpy(T::one(), dz, &mut g.get_mut(self.b).data);
        }
        let w = p.get(self.w);
        (0..self.input).map(|i| dot(w.row(i), dz)).collect()
    }
}

/// Inverted-dropout mask: each entry is 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct DropoutMask<T>(Option<Vec<T>>);

/// Zeroes entries with probability `rate` and rescales survivors when
/// `rng` is given (training); identity otherwise.
pub fn dropout<T: Real, R: Rng>(
    x: &[T],
    rate: f64,
    rng: Option<&mut R>,
) -> (Vec<T>, DropoutMask<T>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = T::of(1.0 / (1.0 - rate));
            let mask: Vec<T> = x
                .iter()
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            let y = x.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            (y, DropoutMask(Some(mask)))
        }
        _ => (x.to_vec(), DropoutMask(None)),
    }
}

impl<T: Real> DropoutMask<T> {
    pub fn backward(&self, dy: &[T]) -> Vec<T> {
        match &self.0 {
            Some(m) => dy.iter().zip(m).map(|(&d, &k)| d * k).collect(),
            None => dy.to_vec(),
        }
    }
}

/// Columnwise maximum over timesteps, with the winning row per column.
pub fn max_over_time<T: Real>(seq: &Tensor<T>) -> Result<(Vec<T>, Vec<usize>)> {
    if seq.rows == 0 {
        return Err(Error::EmptySequence);
    }
    let mut best = seq.row(0).to_vec();
    let mut arg = vec![0; seq.cols];
    for t in 1..seq.rows {
        for (j, &v) in seq.row(t).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = t;
            }
        }
    }
    Ok((best, arg))
}

pub fn max_over_time_backward<T: Real>(arg: &[usize], dy: &[T], rows: usize) -> Tensor<T> {
    let mut d = Tensor::zeros(rows, dy.len());
    for (j, (&t, &g)) in arg.iter().zip(dy).enumerate() {
        d.data[t * dy.len() + j] += g;
    }
    d
}

/// Columnwise mean over timesteps, accumulated in f64.
pub fn mean_over_time<T: Real>(seq: &Tensor<T>) -> Result<Vec<T>> {
    if seq.rows == 0 {
        return Err(Error::EmptySequence);
    }
    let mut acc = vec![0f64; seq.cols];
    for t in 0..seq.rows {
        for (a, v) in acc.iter_mut().zip(seq.row(t)) {
            *a += v.f64();
        }
    }
    let n = seq.rows as f64;
    Ok(acc.into_iter().map(|a| T::of(a / n)).collect())
}

pub fn mean_over_time_backward<T: Real>(dy: &[T], rows: usize) -> Tensor<T> {
    let scale = T::of(1.0 / rows as f64);
    let row: Vec<T> = dy.iter().map(|&g| g * scale).collect();
    let mut d = Tensor::zeros(rows, dy.len());
    for t in 0..rows {
        d.row_mut(t).copy_from_slice(&row);
    }
    d
}

/// Single-direction LSTM. Gate blocks inside `w`, `u` and `b` are laid out
/// as `[input | forget | candidate | output]`, each `units` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub units: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    x: Tensor<T>,
    /// Post-nonlinearity gates, `[T × 4·units]`.
    gates: Tensor<T>,
    c: Tensor<T>,
    tanh_c: Tensor<T>,
    h: Tensor<T>,
}

impl LstmCell {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        units: usize,
        rng: &mut R,
    ) -> Self {
        let w = params.add(format!("{name}.w"), Tensor::glorot(input, 4 * units, rng));
        let u = params.add(format!("{name}.u"), Tensor::glorot(units, 4 * units, rng));
        let mut bias = Tensor::zeros(1, 4 * units);
        bias.data[units..2 * units].fill(T::one());
        let b = params.add(format!("{name}.b"), bias);
        LstmCell {
            w,
            u,
            b,
            input,
            units,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * (self.input * self.units + self.units * self.units + self.units)
    }

    /// Runs the recurrence from `h_0 = c_0 = 0`; returns hidden states `[T × units]`.
    pub fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, LstmCache<T>)> {
        if x.rows == 0 {
            return Err(Error::EmptySequence);
        }
        if x.cols != self.input {
            return Err(Error::Shape {
                context: "lstm input".into(),
                expected: self.input,
                actual: x.cols,
            });
        }
        let (n, steps) = (self.units, x.rows);
        let (w, u, b) = (p.get(self.w), p.get(self.u), &p.get(self.b).data);
        let mut gates = Tensor::zeros(steps, 4 * n);
        let mut c = Tensor::zeros(steps, n);
        let mut tanh_c = Tensor::zeros(steps, n);
        let mut h = Tensor::zeros(steps, n);
        let mut z = vec![T::zero(); 4 * n];
        for t in 0..steps {
            z.copy_from_slice(b);
            for (i, &xi) in x.row(t).iter().enumerate() {
                if xi != T::zero() {
                    axpy(xi, w.row(i), &mut z);
                }
            }
            if t > 0 {
                for j in 0..n {
                    let hj = h.data[(t - 1) * n + j];
                    axpy(hj, u.row(j), &mut z);
                }
            }
            let g = gates.row_mut(t);
            for k in 0..n {
                g[k] = sigmoid(z[k]);
                g[n + k] = sigmoid(z[n + k]);
                g[2 * n + k] = z[2 * n + k].tanh();
                g[3 * n + k] = sigmoid(z[3 * n + k]);
            }
            for k in 0..n {
                let g = &gates.data[t * 4 * n..(t + 1) * 4 * n];
                let c_prev = if t > 0 { c.data[(t - 1) * n + k] } else { T::zero() };
                let ct = g[n + k] * c_prev + g[k] * g[2 * n + k];
                let tc = ct.tanh();
                c.data[t * n + k] = ct;
                tanh_c.data[t * n + k] = tc;
                h.data[t * n + k] = g[3 * n + k] * tc;
            }
        }
        let out = h.clone();
        Ok((
            out,
            LstmCache {
                x: x.clone(),
                gates,
                c,
                tanh_c,
                h,
            },
        ))
    }

    /// Backpropagation through time. `dh` is the gradient on every output
    /// hidden state; returns the gradient on the inputs.
    pub fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        cache: &LstmCache<T>,
        dh: &Tensor<T>,
        g: &mut ParamSet<T>,
    ) -> Tensor<T> {
        let (n, steps) = (self.units, cache.x.rows);
        let (w, u) = (p.get(self.w), p.get(self.u));
        let trainable = g.is_trainable(self.w);
        let mut dx = Tensor::zeros(steps, self.input);
        let mut dh_next = vec![T::zero(); n];
        let mut dc_next = vec![T::zero(); n];
        let mut dz = vec![T::zero(); 4 * n];
        let one = T::one();
        for t in (0..steps).rev() {
            let gt = cache.gates.row(t);
            for k in 0..n {
                let (i, f, cand, o) = (gt[k], gt[n + k], gt[2 * n + k], gt[3 * n + k]);
                let tc = cache.tanh_c.data[t * n + k];
                let c_prev = if t > 0 {
                    cache.c.data[(t - 1) * n + k]
                } else {
                    T::zero()
                };
                let dht = dh.data[t * n + k] + dh_next[k];
                let dc = dc_next[k] + dht * o * (one - tc * tc);
                dz[k] = dc * cand * i * (one - i);
                dz[n + k] = dc * c_prev * f * (one - f);
                dz[2 * n + k] = dc * i * (one - cand * cand);
                dz[3 * n + k] = dht * tc * o * (one - o);
                dc_next[k] = dc * f;
            }
            if trainable {
                let gw = g.get_mut(self.w);
                for (i, &xi) in cache.x.row(t).iter().enumerate() {
                    if xi != T::zero() {
                        axpy(xi, &dz, gw.row_mut(i));
                    }
                }
                if t > 0 {
                    let gu = g.get_mut(self.u);
                    for j in 0..n {
                        let hj = cache.h.data[(t - 1) * n + j];
                        axpy(hj, &dz, gu.row_mut(j));
                    }
                }
                axpy(one, &dz, &mut g.get_mut(self.b).data);
            }
            let dxt = dx.row_mut(t);
            for (i, d) in dxt.iter_mut().enumerate() {
                *d = dot(w.row(i), &dz);
            }
            for (j, d) in dh_next.iter_mut().enumerate() {
                *d = dot(u.row(j), &dz);
            }
        }
        dx
    }
}

fn reversed<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut r = Tensor::zeros(x.rows, x.cols);
    for t in 0..x.rows {
        r.row_mut(t).copy_from_slice(x.row(x.rows - 1 - t));
    }
    r
}

/// Bidirectional LSTM; each output row is `[forward_t | backward_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<T> {
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
}

impl BiLstm {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        units: usize,
        rng: &mut R,
    ) -> Self {
        BiLstm {
            forward: LstmCell::new(params, &format!("{name}.fwd"), input, units, rng),
            backward: LstmCell::new(params, &format!("{name}.bwd"), input, units, rng),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.units
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count()
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, BiLstmCache<T>)> {
        let (hf, fwd) = self.forward.forward(p, x)?;
        let (hb, bwd) = self.backward.forward(p, &reversed(x))?;
        let n = self.units();
        let steps = x.rows;
        let mut out = Tensor::zeros(steps, 2 * n);
        for t in 0..steps {
            let row = out.row_mut(t);
            row[..n].copy_from_slice(hf.row(t));
            row[n..].copy_from_slice(hb.row(steps - 1 - t));
        }
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        cache: &BiLstmCache<T>,
        dout: &Tensor<T>,
        g: &mut ParamSet<T>,
    ) -> Tensor<T> {
        let n = self.units();
        let steps = dout.rows;
        let mut dhf = Tensor::zeros(steps, n);
        let mut dhb = Tensor::zeros(steps, n);
        for t in 0..steps {
            let row = dout.row(t);
            dhf.row_mut(t).copy_from_slice(&row[..n]);
            dhb.row_mut(steps - 1 - t).copy_from_slice(&row[n..]);
        }
        let mut dx = self.forward.backward(p, &cache.fwd, &dhf, g);
        let dxb = self.backward.backward(p, &cache.bwd, &dhb, g);
        for t in 0..steps {
            axpy(T::one(), dxb.row(steps - 1 - t), dx.row_mut(t));
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut p = ParamSet::<f64>::new();
        let cell = LstmCell::new(&mut p, "l", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        p.zero();
        let x = Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 1.0, 1.0]);
        let (h, _) = cell.forward(&p, &x).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_lstm_step_matches_hand_recomputation() {
        let mut p = ParamSet::<f64>::new();
        let cell = LstmCell::new(&mut p, "l", 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        // W, U, b per gate [i f c o]
        let (wv, uv, bv) = ([0.5, -0.3, 0.8, 0.1], [0.2, 0.4, -0.6, 0.9], [0.1, 1.0, -0.2, 0.05]);
        p.get_mut(cell.w).data.copy_from_slice(&wv);
        p.get_mut(cell.u).data.copy_from_slice(&uv);
        p.get_mut(cell.b).data.copy_from_slice(&bv);
        let xs = [0.7, -1.2];
        let (h, _) = cell
            .forward(&p, &Tensor::from_vec(2, 1, xs.to_vec()))
            .unwrap();
        let (mut hp, mut cp) = (0.0, 0.0);
        for (t, &x) in xs.iter().enumerate() {
            let i = sig(wv[0] * x + uv[0] * hp + bv[0]);
            let f = sig(wv[1] * x + uv[1] * hp + bv[1]);
            let c_tilde = (wv[2] * x + uv[2] * hp + bv[2]).tanh();
            let o = sig(wv[3] * x + uv[3] * hp + bv[3]);
            cp = f * cp + i * c_tilde;
            hp = o * cp.tanh();
            assert!((h.data[t] - hp).abs() < 1e-14);
        }
    }

    #[test]
    fn bilstm_backward_direction_is_forward_on_reversed() {
        let mut p = ParamSet::<f64>::new();
        let bi = BiLstm::new(&mut p, "bi", 2, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let x = Tensor::from_vec(3, 2, vec![0.1, 0.2, -0.4, 0.9, 1.5, -0.3]);
        let (out, _) = bi.forward(&p, &x).unwrap();
        let (hb, _) = bi.backward.forward(&p, &reversed(&x)).unwrap();
        for t in 0..3 {
            assert_eq!(&out.row(t)[3..], hb.row(2 - t));
        }
    }

    #[test]
    fn lstm_rejects_bad_input() {
        let mut p = ParamSet::<f32>::new();
        let cell = LstmCell::new(&mut p, "l", 3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            cell.forward(&p, &Tensor::zeros(0, 3)),
            Err(Error::EmptySequence)
        ));
        assert!(matches!(
            cell.forward(&p, &Tensor::zeros(2, 4)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn pooling_examples() {
        let one = Tensor::from_vec(1, 2, vec![2.0f64, -1.0]);
        assert_eq!(max_over_time(&one).unwrap().0, vec![2.0, -1.0]);
        assert_eq!(mean_over_time(&one).unwrap(), vec![2.0, -1.0]);
        let two = Tensor::from_vec(2, 2, vec![1.0f64, 3.0, 5.0, -1.0]);
        assert_eq!(max_over_time(&two).unwrap().0, vec![5.0, 3.0]);
        assert_eq!(mean_over_time(&two).unwrap(), vec![3.0, 1.0]);
        assert!(matches!(
            max_over_time(&Tensor::<f64>::zeros(0, 2)),
            Err(Error::EmptySequence)
        ));
        assert!(mean_over_time(&Tensor::<f64>::zeros(0, 2)).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let x = vec![1.0f32, 2.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dropout(&x, 0.0, Some(&mut rng)).0, x);
        assert_eq!(dropout::<f32, ChaCha8Rng>(&x, 0.5, None).0, x);
    }

    #[test]
    fn dropout_statistics() {
        let x = vec![1.0f64; 100_000];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (y, _) = dropout(&x, 0.5, Some(&mut rng));
        let survivors: Vec<f64> = y.iter().copied().filter(|&v| v != 0.0).collect();
        let frac = survivors.len() as f64 / y.len() as f64;
        assert!((frac - 0.5).abs() <= 0.02, "survivor fraction {frac}");
        assert!(survivors.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = [1.0 / 7.0; 7];
        assert!((cross_entropy(&uniform, 3) - 7f64.ln()).abs() < 1e-12);
        let mut onehot = [0.0; 7];
        onehot[2] = 1.0;
        assert_eq!(cross_entropy(&onehot, 2), 0.0);
        assert!((cross_entropy(&onehot, 1) - (1e12f64).ln()).abs() < 1e-9);
        let mut q = [0.125; 7];
        q[0] = 0.25;
        assert!((cross_entropy(&q, 0) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0f32, -5.0, 3.0, 0.0]);
        let s: f64 = p.iter().map(|&x| x as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&x| x >= 0.0));
    }
}
