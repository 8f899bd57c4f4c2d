//! Focus-context, surrounding-context, layout and merged classifiers.
//!
//! Each model is a *trunk* that encodes a [`SentenceExample`] into a hidden
//! vector, followed by a 7-way softmax head. The merged baseline concatenates
//! the three trunks' penultimate vectors into a single head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{LayoutFeatures, NUM_LAYOUT_FEATURES};
use crate::embeddings::{embed_rows, EmbeddingTable};
use crate::error::Result;
use crate::nn::layers::{
    cross_entropy, dropout, max_over_time, max_over_time_backward, mean_over_time,
    mean_over_time_backward, softmax_xent_grad, Activation, BiLstm, BiLstmCache, Dense,
    DenseCache, DropoutMask,
};
use crate::nn::tensor::{axpy, ParamId, ParamSet, Real, Tensor};
use crate::nn::train::{Labeled, Network};
use crate::preprocess::PAD_ID;
use crate::types::{ProbVector, SectionLabel, NUM_LABELS};

/// Everything any of the models needs to classify one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceExample {
    pub focus: Vec<u32>,
    pub prev: Vec<u32>,
    pub next: Vec<u32>,
    pub layout: LayoutFeatures,
    pub label: SectionLabel,
}

impl Labeled for SentenceExample {
    fn target(&self) -> usize {
        self.label.code()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocusArch {
    pub lstm_units: usize,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for FocusArch {
    fn default() -> Self {
        FocusArch {
            lstm_units: 64,
            hidden: vec![100, 30, 16],
            dropout: vec![0.5, 0.5, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurroundingArch {
    pub focus_units: usize,
    pub context_units: usize,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for SurroundingArch {
    fn default() -> Self {
        SurroundingArch {
            focus_units: 64,
            context_units: 16,
            hidden: vec![50, 10],
            dropout: vec![0.5, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutArch {
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for LayoutArch {
    fn default() -> Self {
        LayoutArch {
            hidden: vec![100, 16],
            dropout: vec![0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Embedding {
    id: ParamId,
}

impl Embedding {
    fn new<T: Real>(params: &mut ParamSet<T>, name: &str, table: &EmbeddingTable) -> Self {
        let id = params.add(format!("{name}.emb"), table.vectors.cast());
        params.set_trainable(id, table.trainable);
        Embedding { id }
    }

    fn forward<T: Real>(&self, p: &ParamSet<T>, ids: &[u32]) -> Result<Tensor<T>> {
        embed_rows(ids, p.get(self.id))
    }

    fn backward<T: Real>(&self, ids: &[u32], dx: &Tensor<T>, g: &mut ParamSet<T>) {
        if !g.is_trainable(self.id) {
            return;
        }
        let ge = g.get_mut(self.id);
        for (t, &id) in ids.iter().enumerate() {
            if id != PAD_ID {
                axpy(T::one(), dx.row(t), ge.row_mut(id as usize));
            }
        }
    }

    fn zero_pad<T: Real>(&self, p: &mut ParamSet<T>) {
        p.get_mut(self.id).row_mut(PAD_ID as usize).fill(T::zero());
    }
}

/// ReLU dense layers, each followed by dropout.
#[derive(Debug, Clone)]
struct HiddenStack {
    layers: Vec<Dense>,
    rates: Vec<f64>,
}

pub struct StackCache<T> {
    dense: Vec<DenseCache<T>>,
    masks: Vec<DropoutMask<T>>,
}

impl HiddenStack {
    fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        sizes: &[usize],
        rates: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert_eq!(sizes.len(), rates.len(), "one dropout rate per hidden layer");
        let mut layers = Vec::new();
        let mut fan_in = input;
        for (i, &s) in sizes.iter().enumerate() {
            layers.push(Dense::new(
                params,
                &format!("{name}.dense{i}"),
                fan_in,
                s,
                Activation::Relu,
                rng,
            ));
            fan_in = s;
        }
        HiddenStack {
            layers,
            rates: rates.to_vec(),
        }
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<T>, StackCache<T>) {
        let mut h = x.to_vec();
        let mut dense = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (layer, &rate) in self.layers.iter().zip(&self.rates) {
            let (y, c) = layer.forward(p, &h);
            let (y, m) = dropout(&y, rate, rng.as_deref_mut());
            dense.push(c);
            masks.push(m);
            h = y;
        }
        (h, StackCache { dense, masks })
    }

    fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        cache: &StackCache<T>,
        dy: &[T],
        g: &mut ParamSet<T>,
    ) -> Vec<T> {
        let mut d = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            d = cache.masks[i].backward(&d);
            d = self.layers[i].backward(p, &cache.dense[i], &d, g);
        }
        d
    }
}

/// Encodes an example into the penultimate hidden vector.
pub trait Trunk {
    type Cache<T>;

    fn output_dim(&self) -> usize;

    /// Parameters excluding embedding tables.
    fn param_count(&self) -> usize;

    fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, Self::Cache<T>)>;

    fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        cache: &Self::Cache<T>,
        dh: &[T],
        g: &mut ParamSet<T>,
    );

    fn after_update<T: Real>(&self, _p: &mut ParamSet<T>) {}
}

/// Bi-LSTM over the focus sentence, max+mean pooled, then dense layers.
#[derive(Debug, Clone)]
pub struct FocusTrunk {
    emb: Embedding,
    lstm: BiLstm,
    stack: HiddenStack,
}

pub struct FocusCache<T> {
    lstm: BiLstmCache<T>,
    steps: usize,
    argmax: Vec<usize>,
    stack: StackCache<T>,
}

impl FocusTrunk {
    fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        emb: Embedding,
        emb_dim: usize,
        arch: &FocusArch,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lstm = BiLstm::new(params, &format!("{name}.lstm"), emb_dim, arch.lstm_units, rng);
        let stack = HiddenStack::new(
            params,
            name,
            2 * lstm.output_dim(),
            &arch.hidden,
            &arch.dropout,
            rng,
        );
        FocusTrunk { emb, lstm, stack }
    }
}

impl Trunk for FocusTrunk {
    type Cache<T> = FocusCache<T>;

    fn output_dim(&self) -> usize {
        self.stack.output_dim()
    }

    fn param_count(&self) -> usize {
        self.lstm.param_count() + self.stack.param_count()
    }

    fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, FocusCache<T>)> {
        let e = self.emb.forward(p, &x.focus)?;
        let (h, lstm) = self.lstm.forward(p, &e)?;
        let (mut enc, argmax) = max_over_time(&h)?;
        enc.extend(mean_over_time(&h)?);
        let (out, stack) = self.stack.forward(p, &enc, rng);
        Ok((
            out,
            FocusCache {
                lstm,
                steps: h.rows,
                argmax,
                stack,
            },
        ))
    }

    fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        cache: &FocusCache<T>,
        dh: &[T],
        g: &mut ParamSet<T>,
    ) {
        let d_enc = self.stack.backward(p, &cache.stack, dh, g);
        let width = self.lstm.output_dim();
        let mut d_seq = max_over_time_backward(&cache.argmax, &d_enc[..width], cache.steps);
        let d_mean = mean_over_time_backward(&d_enc[width..], cache.steps);
        axpy(T::one(), &d_mean.data, &mut d_seq.data);
        let dx = self.lstm.backward(p, &cache.lstm, &d_seq, g);
        self.emb.backward(&x.focus, &dx, g);
    }

    fn after_update<T: Real>(&self, p: &mut ParamSet<T>) {
        self.emb.zero_pad(p);
    }
}

/// Separate Bi-LSTMs over the focus, previous and next sentences, each max
/// pooled and concatenated as `[focus | prev | next]`.
#[derive(Debug, Clone)]
pub struct SurroundingTrunk {
    emb: Embedding,
    focus: BiLstm,
    prev: BiLstm,
    next: BiLstm,
    stack: HiddenStack,
}

pub struct SurroundingCache<T> {
    branches: [(BiLstmCache<T>, usize, Vec<usize>); 3],
    stack: StackCache<T>,
}

impl SurroundingTrunk {
    fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        emb: Embedding,
        emb_dim: usize,
        arch: &SurroundingArch,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let focus = BiLstm::new(params, &format!("{name}.focus"), emb_dim, arch.focus_units, rng);
        let prev = BiLstm::new(params, &format!("{name}.prev"), emb_dim, arch.context_units, rng);
        let next = BiLstm::new(params, &format!("{name}.next"), emb_dim, arch.context_units, rng);
        let width = focus.output_dim() + prev.output_dim() + next.output_dim();
        let stack = HiddenStack::new(params, name, width, &arch.hidden, &arch.dropout, rng);
        SurroundingTrunk {
            emb,
            focus,
            prev,
            next,
            stack,
        }
    }

    fn branches<'a>(&'a self, x: &'a SentenceExample) -> [(&'a BiLstm, &'a [u32]); 3] {
        [
            (&self.focus, &x.focus),
            (&self.prev, &x.prev),
            (&self.next, &x.next),
        ]
    }
}

impl Trunk for SurroundingTrunk {
    type Cache<T> = SurroundingCache<T>;

    fn output_dim(&self) -> usize {
        self.stack.output_dim()
    }

    fn param_count(&self) -> usize {
        self.focus.param_count()
            + self.prev.param_count()
            + self.next.param_count()
            + self.stack.param_count()
    }

    fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, SurroundingCache<T>)> {
        let mut enc = Vec::new();
        let mut caches = Vec::with_capacity(3);
        for (lstm, ids) in self.branches(x) {
            let e = self.emb.forward(p, ids)?;
            let (h, c) = lstm.forward(p, &e)?;
            let (pooled, arg) = max_over_time(&h)?;
            enc.extend(pooled);
            caches.push((c, h.rows, arg));
        }
        let (out, stack) = self.stack.forward(p, &enc, rng);
        let branches: [_; 3] = caches.try_into().ok().expect("three branches");
        Ok((out, SurroundingCache { branches, stack }))
    }

    fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        cache: &SurroundingCache<T>,
        dh: &[T],
        g: &mut ParamSet<T>,
    ) {
        let d_enc = self.stack.backward(p, &cache.stack, dh, g);
        let mut offset = 0;
        for ((lstm, ids), (c, steps, arg)) in self.branches(x).into_iter().zip(&cache.branches) {
            let w = lstm.output_dim();
            let d_seq = max_over_time_backward(arg, &d_enc[offset..offset + w], *steps);
            offset += w;
            let dx = lstm.backward(p, c, &d_seq, g);
            self.emb.backward(ids, &dx, g);
        }
    }

    fn after_update<T: Real>(&self, p: &mut ParamSet<T>) {
        self.emb.zero_pad(p);
    }
}

/// Dense layers over the 17 layout features.
#[derive(Debug, Clone)]
pub struct LayoutTrunk {
    stack: HiddenStack,
}

impl LayoutTrunk {
    fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        arch: &LayoutArch,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        LayoutTrunk {
            stack: HiddenStack::new(
                params,
                name,
                NUM_LAYOUT_FEATURES,
                &arch.hidden,
                &arch.dropout,
                rng,
            ),
        }
    }
}

impl Trunk for LayoutTrunk {
    type Cache<T> = StackCache<T>;

    fn output_dim(&self) -> usize {
        self.stack.output_dim()
    }

    fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    fn forward<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &SentenceExample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, StackCache<T>)> {
        let input: Vec<T> = x.layout.0.iter().map(|&v| T::of(v as f64)).collect();
        Ok(self.stack.forward(p, &input, rng))
    }

    fn backward<T: Real>(
        &self,
        p: &ParamSet<T>,
        _x: &SentenceExample,
        cache: &StackCache<T>,
        dh: &[T],
        g: &mut ParamSet<T>,
    ) {
        self.stack.backward(p, cache, dh, g);
    }
}

/// A trunk followed by a 7-way softmax head.
#[derive(Debug, Clone)]
pub struct Classifier<T, K> {
    params: ParamSet<T>,
    trunk: K,
    head: Dense,
}

pub type FocusModel<T = f32> = Classifier<T, FocusTrunk>;
pub type SurroundingModel<T = f32> = Classifier<T, SurroundingTrunk>;
pub type LayoutModel<T = f32> = Classifier<T, LayoutTrunk>;

fn head<T: Real>(params: &mut ParamSet<T>, name: &str, input: usize, rng: &mut ChaCha8Rng) -> Dense {
    Dense::new(
        params,
        &format!("{name}.head"),
        input,
        NUM_LABELS,
        Activation::Softmax,
        rng,
    )
}

impl<T: Real> Classifier<T, FocusTrunk> {
    pub fn new(table: &EmbeddingTable, arch: &FocusArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let emb = Embedding::new(&mut params, "focus", table);
        let trunk = FocusTrunk::new(&mut params, "focus", emb, table.dim, arch, &mut rng);
        let head = head(&mut params, "focus", trunk.output_dim(), &mut rng);
        Classifier {
            params,
            trunk,
            head,
        }
    }
}

impl<T: Real> Classifier<T, SurroundingTrunk> {
    pub fn new(table: &EmbeddingTable, arch: &SurroundingArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let emb = Embedding::new(&mut params, "surrounding", table);
        let trunk =
            SurroundingTrunk::new(&mut params, "surrounding", emb, table.dim, arch, &mut rng);
        let head = head(&mut params, "surrounding", trunk.output_dim(), &mut rng);
        Classifier {
            params,
            trunk,
            head,
        }
    }
}

impl<T: Real> Classifier<T, LayoutTrunk> {
    pub fn new(arch: &LayoutArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let trunk = LayoutTrunk::new(&mut params, "layout", arch, &mut rng);
        let head = head(&mut params, "layout", trunk.output_dim(), &mut rng);
        Classifier {
            params,
            trunk,
            head,
        }
    }
}

impl<T: Real, K: Trunk> Classifier<T, K> {
    /// Parameters excluding embedding tables.
    pub fn architecture_param_count(&self) -> usize {
        self.trunk.param_count() + self.head.param_count()
    }

    pub fn predict_proba(&self, x: &SentenceExample) -> ProbVector {
        to_prob(&self.predict(x))
    }
}

fn to_prob(p: &[f64]) -> ProbVector {
    let mut a = [0.0; NUM_LABELS];
    a.copy_from_slice(p);
    ProbVector(a)
}

fn head_backprop<T: Real>(
    head: &Dense,
    p: &ParamSet<T>,
    h: &[T],
    target: usize,
    g: &mut ParamSet<T>,
) -> (f64, Vec<T>) {
    let (probs, cache) = head.forward(p, h);
    let probs64: Vec<f64> = probs.iter().map(|v| v.f64()).collect();
    let loss = cross_entropy(&probs64, target);
    let dz = softmax_xent_grad(&probs, target);
    (loss, head.backward_preactivation(p, &cache, &dz, g))
}

impl<T: Real, K: Trunk> Network<T> for Classifier<T, K> {
    type Sample = SentenceExample;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn predict(&self, x: &SentenceExample) -> Vec<f64> {
        let (h, _) = self
            .trunk
            .forward(&self.params, x, None)
            .expect("example token ids are valid and non-empty");
        self.head
            .infer(&self.params, &h)
            .into_iter()
            .map(Real::f64)
            .collect()
    }

    fn backprop(
        &self,
        x: &SentenceExample,
        g: &mut ParamSet<T>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let (h, cache) = self
            .trunk
            .forward(&self.params, x, rng)
            .expect("example token ids are valid and non-empty");
        let (loss, dh) = head_backprop(&self.head, &self.params, &h, x.target(), g);
        self.trunk.backward(&self.params, x, &cache, &dh, g);
        loss
    }

    fn after_update(&mut self) {
        self.trunk.after_update(&mut self.params);
    }
}

/// Late-fusion baseline: the three trunks' penultimate vectors feed one
/// softmax head and everything trains jointly. Focus and surrounding
/// trunks share one embedding table.
#[derive(Debug, Clone)]
pub struct MergedModel<T = f32> {
    params: ParamSet<T>,
    emb: Embedding,
    focus: FocusTrunk,
    surrounding: SurroundingTrunk,
    layout: LayoutTrunk,
    head: Dense,
}

impl<T: Real> MergedModel<T> {
    pub fn new(
        table: &EmbeddingTable,
        focus: &FocusArch,
        surrounding: &SurroundingArch,
        layout: &LayoutArch,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let emb = Embedding::new(&mut params, "merged", table);
        let f = FocusTrunk::new(&mut params, "merged.focus", emb, table.dim, focus, &mut rng);
        let s = SurroundingTrunk::new(
            &mut params,
            "merged.surrounding",
            emb,
            table.dim,
            surrounding,
            &mut rng,
        );
        let l = LayoutTrunk::new(&mut params, "merged.layout", layout, &mut rng);
        let width = f.output_dim() + s.output_dim() + l.output_dim();
        let head = head(&mut params, "merged", width, &mut rng);
        MergedModel {
            params,
            emb,
            focus: f,
            surrounding: s,
            layout: l,
            head,
        }
    }

    pub fn architecture_param_count(&self) -> usize {
        self.focus.param_count()
            + self.surrounding.param_count()
            + self.layout.param_count()
            + self.head.param_count()
    }

    pub fn penultimate_width(&self) -> usize {
        self.head.input
    }

    pub fn predict_proba(&self, x: &SentenceExample) -> ProbVector {
        to_prob(&self.predict(x))
    }
}

impl<T: Real> Network<T> for MergedModel<T> {
    type Sample = SentenceExample;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn predict(&self, x: &SentenceExample) -> Vec<f64> {
        let p = &self.params;
        let mut h = self.focus.forward(p, x, None).expect("valid example").0;
        h.extend(self.surrounding.forward(p, x, None).expect("valid example").0);
        h.extend(self.layout.forward(p, x, None).expect("valid example").0);
        self.head.infer(p, &h).into_iter().map(Real::f64).collect()
    }

    fn backprop(
        &self,
        x: &SentenceExample,
        g: &mut ParamSet<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let p = &self.params;
        let (hf, cf) = self.focus.forward(p, x, rng.as_deref_mut()).expect("valid example");
        let (hs, cs) = self
            .surrounding
            .forward(p, x, rng.as_deref_mut())
            .expect("valid example");
        let (hl, cl) = self.layout.forward(p, x, rng.as_deref_mut()).expect("valid example");
        let (nf, ns) = (hf.len(), hs.len());
        let mut h = hf;
        h.extend(hs);
        h.extend(hl);
        let (loss, dh) = head_backprop(&self.head, p, &h, x.target(), g);
        self.focus.backward(p, x, &cf, &dh[..nf], g);
        self.surrounding.backward(p, x, &cs, &dh[nf..nf + ns], g);
        self.layout.backward(p, x, &cl, &dh[nf + ns..], g);
        loss
    }

    fn after_update(&mut self) {
        self.emb.zero_pad(&mut self.params);
    }
}
