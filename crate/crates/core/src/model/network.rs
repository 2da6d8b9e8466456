use std::collections::BTreeMap;

use rand::Rng;

use super::lstm::{axpy, backprop_layer, dot, run_layer, sigmoid, LayerTrace};
use super::{InputSequence, ModelError, ModelParams};
use crate::par::{self, Execution};
use crate::seed;

/// Probabilities are clamped to `[LOSS_EPS, 1 − LOSS_EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Inverted dropout active.
    Train,
    /// Dropout disabled; deterministic.
    Eval,
}

/// Per-class loss weights, indexed by label.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassWeights(pub [f64; 2]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0, 1.0])
    }

    /// `n / (2·n_c)` for each class; a class that never occurs gets weight 1.
    pub fn inverse_frequency(labels: &[u8]) -> Self {
        let n = labels.len() as f64;
        let mut w = [1.0; 2];
        for (c, slot) in w.iter_mut().enumerate() {
            let count = labels.iter().filter(|&&l| usize::from(l) == c).count();
            if count > 0 {
                *slot = n / (2.0 * count as f64);
            }
        }
        Self(w)
    }

    fn of(&self, label: u8) -> f64 {
        self.0[usize::from(label.min(1))]
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Weighted mean binary cross-entropy: `(1/N) Σ w_y · BCE(p, y)`.
pub fn loss(probs: &[f64], labels: &[u8], weights: ClassWeights) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| example_loss(p, y, weights))
        .sum::<f64>()
        / n
}

fn example_loss(p: f64, y: u8, weights: ClassWeights) -> f64 {
    let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    let y = f64::from(y);
    -weights.of(y as u8) * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d(example loss)/d(logit), scaled by `1/n`. Zero where the clamp is active.
fn logit_grad(p: f64, y: u8, weights: ClassWeights, n: usize) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if !(LOSS_EPS..=1.0 - LOSS_EPS).contains(&p) {
        return 0.0;
    }
    weights.of(y) * (p - f64::from(y)) / n as f64
}

/// Everything the backward pass needs from one example's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleTrace {
    len: usize,
    layer1: LayerTrace,
    layer1_reverse: Option<LayerTrace>,
    /// `[len][width1]` dropout scale factors; empty in eval mode.
    mask1: Vec<f64>,
    /// `[len][width1]` layer-2 inputs (layer-1 outputs after dropout).
    inputs2: Vec<f64>,
    layer2: LayerTrace,
    mask2: Vec<f64>,
    /// Final layer-2 state after dropout, fed to the dense head.
    head_input: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

impl ExampleTrace {
    /// Layer-1 output at step `t` before dropout (`[h_fwd ⧺ h_bwd]` when bidirectional).
    pub fn layer1_output(&self, t: usize) -> Vec<f64> {
        let mut out = self.layer1.h_at(t).to_vec();
        if let Some(rev) = &self.layer1_reverse {
            out.extend_from_slice(rev.h_at(self.len - 1 - t));
        }
        out
    }

    /// Layer-2 input at step `t`, i.e. the layer-1 output after dropout.
    pub fn layer2_input(&self, t: usize) -> &[f64] {
        let w = self.inputs2.len() / self.len.max(1);
        &self.inputs2[t * w..(t + 1) * w]
    }

    /// Reverse-direction hidden state in its own processing order.
    pub fn reverse_hidden(&self, s: usize) -> Option<&[f64]> {
        self.layer1_reverse.as_ref().map(|r| r.h_at(s))
    }

    pub fn forward_hidden(&self, t: usize) -> &[f64] {
        self.layer1.h_at(t)
    }
}

fn dropout_mask(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

fn check_input<S: InputSequence>(seqs: &[S], p: &ModelParams) -> Result<(), ModelError> {
    for s in seqs {
        if s.input_dim() != p.layer1.input_dim {
            return Err(ModelError::VocabMismatch { expected: p.layer1.input_dim, found: s.input_dim() });
        }
    }
    Ok(())
}

/// Forward pass for one example. `rng_seed` drives the dropout masks in train mode.
pub(crate) fn forward_example<S: InputSequence>(seq: &S, p: &ModelParams, mode: Mode, rng_seed: u64) -> ExampleTrace {
    let len = seq.length();
    let l1 = &p.layer1;
    let w1 = l1.width();
    let layer1 = run_layer(l1, len, |t, z| {
        seq.for_each_active(t, |d, x| axpy(x, &l1.w_input[d * w1..(d + 1) * w1], z))
    });
    let layer1_reverse = p.layer1_reverse.as_ref().map(|rev| {
        run_layer(rev, len, |s, z| {
            seq.for_each_active(len - 1 - s, |d, x| axpy(x, &rev.w_input[d * w1..(d + 1) * w1], z))
        })
    });

    let h1 = l1.hidden;
    let width1 = p.layer1_width();
    let mut inputs2 = vec![0.0; len * width1];
    for t in 0..len {
        let row = &mut inputs2[t * width1..(t + 1) * width1];
        row[..h1].copy_from_slice(layer1.h_at(t));
        if let Some(rev) = &layer1_reverse {
            row[h1..].copy_from_slice(rev.h_at(len - 1 - t));
        }
    }

    let rate = p.dropout_rate;
    let (mask1, mask2) = match mode {
        Mode::Eval => (Vec::new(), Vec::new()),
        Mode::Train => {
            let mut rng = seed::rng(rng_seed, "dropout", 0);
            (dropout_mask(len * width1, rate, &mut rng), dropout_mask(p.layer2.hidden, rate, &mut rng))
        }
    };
    if !mask1.is_empty() {
        inputs2.iter_mut().zip(&mask1).for_each(|(a, m)| *a *= m);
    }

    let l2 = &p.layer2;
    let w2 = l2.width();
    let layer2 = run_layer(l2, len, |t, z| {
        for (d, &a) in inputs2[t * width1..(t + 1) * width1].iter().enumerate() {
            axpy(a, &l2.w_input[d * w2..(d + 1) * w2], z);
        }
    });

    let mut head_input = if len > 0 { layer2.h_at(len - 1).to_vec() } else { vec![0.0; l2.hidden] };
    if !mask2.is_empty() {
        head_input.iter_mut().zip(&mask2).for_each(|(u, m)| *u *= m);
    }
    let logit = dot(&p.dense_w, &head_input) + p.dense_b;
    ExampleTrace {
        len,
        layer1,
        layer1_reverse,
        mask1,
        inputs2,
        layer2,
        mask2,
        head_input,
        logit,
        prob: sigmoid(logit),
    }
}

/// Gradient contribution of one example. The first-layer input weights are kept as
/// sparse rows since one-hot inputs touch only a handful of them.
pub(crate) struct ExampleGrads {
    dense: ModelParams,
    rows1: Vec<(usize, Vec<f64>)>,
    rows1_reverse: Vec<(usize, Vec<f64>)>,
}

fn sparse_rows<S: InputSequence>(seq: &S, dz: &[f64], width: usize, reversed: bool) -> Vec<(usize, Vec<f64>)> {
    let len = seq.length();
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in 0..len {
        let t = if reversed { len - 1 - s } else { s };
        let dz_s = &dz[s * width..(s + 1) * width];
        seq.for_each_active(t, |d, x| axpy(x, dz_s, rows.entry(d).or_insert_with(|| vec![0.0; width])));
    }
    rows.into_iter().collect()
}

pub(crate) fn backward_example<S: InputSequence>(seq: &S, tr: &ExampleTrace, dlogit: f64, p: &ModelParams) -> ExampleGrads {
    let mut g = ModelParams {
        layer1: super::LstmLayerParams { w_input: Vec::new(), ..super::LstmLayerParams::zeros(0, p.layer1.hidden) },
        layer1_reverse: p
            .layer1_reverse
            .as_ref()
            .map(|r| super::LstmLayerParams { w_input: Vec::new(), ..super::LstmLayerParams::zeros(0, r.hidden) }),
        layer2: super::LstmLayerParams::zeros(p.layer2.input_dim, p.layer2.hidden),
        dense_w: vec![0.0; p.dense_w.len()],
        dense_b: 0.0,
        dropout_rate: p.dropout_rate,
    };
    let len = tr.len;

    axpy(dlogit, &tr.head_input, &mut g.dense_w);
    g.dense_b = dlogit;
    if len == 0 {
        return ExampleGrads { dense: g, rows1: Vec::new(), rows1_reverse: Vec::new() };
    }

    let h2 = p.layer2.hidden;
    let mut dh2 = vec![0.0; len * h2];
    for k in 0..h2 {
        let m = tr.mask2.get(k).copied().unwrap_or(1.0);
        dh2[(len - 1) * h2 + k] = dlogit * p.dense_w[k] * m;
    }
    let dz2 = backprop_layer(&p.layer2, &tr.layer2, &dh2, &mut g.layer2);

    let width1 = p.layer1_width();
    let w2 = p.layer2.width();
    let h1 = p.layer1.hidden;
    let mut dh1 = vec![0.0; len * h1];
    let mut dh1_rev = vec![0.0; if p.layer1_reverse.is_some() { len * h1 } else { 0 }];
    for t in 0..len {
        let dz_t = &dz2[t * w2..(t + 1) * w2];
        let a_t = &tr.inputs2[t * width1..(t + 1) * width1];
        for d in 0..width1 {
            let row = d * w2..(d + 1) * w2;
            axpy(a_t[d], dz_t, &mut g.layer2.w_input[row.clone()]);
            let mut da = dot(&p.layer2.w_input[row], dz_t);
            if let Some(m) = tr.mask1.get(t * width1 + d) {
                da *= m;
            }
            if d < h1 {
                dh1[t * h1 + d] = da;
            } else {
                dh1_rev[(len - 1 - t) * h1 + (d - h1)] = da;
            }
        }
    }

    let w1 = p.layer1.width();
    let dz1 = backprop_layer(&p.layer1, &tr.layer1, &dh1, &mut g.layer1);
    let rows1 = sparse_rows(seq, &dz1, w1, false);
    let rows1_reverse = match (&p.layer1_reverse, &tr.layer1_reverse, &mut g.layer1_reverse) {
        (Some(rev), Some(rev_tr), Some(rev_g)) => {
            let dz = backprop_layer(rev, rev_tr, &dh1_rev, rev_g);
            sparse_rows(seq, &dz, w1, true)
        }
        _ => Vec::new(),
    };
    ExampleGrads { dense: g, rows1, rows1_reverse }
}

/// Adds one example's gradient into a full-shape accumulator.
pub(crate) fn accumulate(total: &mut ModelParams, ex: &ExampleGrads) {
    fn add_layer(total: &mut super::LstmLayerParams, part: &super::LstmLayerParams, rows: &[(usize, Vec<f64>)]) {
        axpy(1.0, &part.w_recurrent, &mut total.w_recurrent);
        axpy(1.0, &part.bias, &mut total.bias);
        let w = total.width();
        for (d, row) in rows {
            axpy(1.0, row, &mut total.w_input[d * w..(d + 1) * w]);
        }
    }
    add_layer(&mut total.layer1, &ex.dense.layer1, &ex.rows1);
    if let (Some(t), Some(part)) = (&mut total.layer1_reverse, &ex.dense.layer1_reverse) {
        add_layer(t, part, &ex.rows1_reverse);
    }
    axpy(1.0, &ex.dense.layer2.w_input, &mut total.layer2.w_input);
    axpy(1.0, &ex.dense.layer2.w_recurrent, &mut total.layer2.w_recurrent);
    axpy(1.0, &ex.dense.layer2.bias, &mut total.layer2.bias);
    axpy(1.0, &ex.dense.dense_w, &mut total.dense_w);
    total.dense_b += ex.dense.dense_b;
}

/// Activations from [`forward`], consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub traces: Vec<ExampleTrace>,
}

/// Dropout stream for example `index` of a batch run under `rng_seed`.
pub(crate) fn example_seed(rng_seed: u64, index: usize) -> u64 {
    seed::derive(rng_seed, "example", index as u64)
}

/// Runs the network on every sequence, returning `P(label = 1)` per example.
///
/// Only each sequence's real steps are processed and the second layer's state is
/// read at the last real step, so padding never influences the result.
pub fn forward<S: InputSequence + Sync>(
    seqs: &[S],
    p: &ModelParams,
    mode: Mode,
    rng_seed: u64,
    exec: Execution,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    p.validate()?;
    check_input(seqs, p)?;
    let traces = par::map_indexed(exec, seqs, |i, s| forward_example(s, p, mode, example_seed(rng_seed, i)));
    if let Some(i) = traces.iter().position(|t| !t.logit.is_finite()) {
        return Err(ModelError::NonFiniteActivation(i));
    }
    let probs = traces.iter().map(|t| t.prob).collect();
    Ok((probs, ForwardCache { mode, traces }))
}

/// [`forward`] for a model whose first layer is bidirectional.
pub fn forward_bidirectional<S: InputSequence + Sync>(
    seqs: &[S],
    p: &ModelParams,
    mode: Mode,
    rng_seed: u64,
    exec: Execution,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    if !p.is_bidirectional() {
        return Err(ModelError::InvalidInput("model has no reverse first layer".into()));
    }
    forward(seqs, p, mode, rng_seed, exec)
}

/// Exact gradient of [`loss`] with respect to every parameter, using the dropout
/// masks recorded in `cache`.
pub fn backward<S: InputSequence + Sync>(
    seqs: &[S],
    cache: &ForwardCache,
    labels: &[u8],
    weights: ClassWeights,
    p: &ModelParams,
    exec: Execution,
) -> Result<ModelParams, ModelError> {
    if seqs.len() != cache.traces.len() || labels.len() != seqs.len() {
        return Err(ModelError::InvalidInput(format!(
            "{} sequences, {} traces, {} labels",
            seqs.len(),
            cache.traces.len(),
            labels.len()
        )));
    }
    let n = seqs.len();
    let pairs: Vec<(&S, &ExampleTrace)> = seqs.iter().zip(&cache.traces).collect();
    let parts = par::map_indexed(exec, &pairs, |i, (s, tr)| {
        backward_example(*s, tr, logit_grad(tr.prob, labels[i], weights, n), p)
    });
    let mut total = p.zeros_like();
    for part in &parts {
        accumulate(&mut total, part);
    }
    Ok(total)
}

/// One fused forward/backward pass over a training batch. Returns the probabilities
/// and the summed gradient.
pub(crate) fn batch_gradient<S: InputSequence + Sync>(
    batch: &[&S],
    labels: &[u8],
    weights: ClassWeights,
    p: &ModelParams,
    rng_seed: u64,
    exec: Execution,
) -> (Vec<f64>, ModelParams) {
    let n = batch.len();
    let parts = par::map_indexed(exec, batch, |i, s| {
        let tr = forward_example(*s, p, Mode::Train, example_seed(rng_seed, i));
        let g = backward_example(*s, &tr, logit_grad(tr.prob, labels[i], weights, n), p);
        (tr.prob, g)
    });
    let mut total = p.zeros_like();
    let mut probs = Vec::with_capacity(n);
    for (prob, part) in &parts {
        probs.push(*prob);
        accumulate(&mut total, part);
    }
    (probs, total)
}

/// Eval-mode classification: label 1 iff `prob ≥ threshold`.
pub fn predict<S: InputSequence + Sync>(
    p: &ModelParams,
    seqs: &[S],
    threshold: f64,
    exec: Execution,
) -> Result<Vec<(u8, f64)>, ModelError> {
    let (probs, _) = forward(seqs, p, Mode::Eval, 0, exec)?;
    Ok(probs.into_iter().map(|q| (u8::from(q >= threshold), q)).collect())
}

#[cfg(test)]
mod tests {
    use super::super::{Architecture, DenseSequence, LstmLayerParams};
    use super::*;

    fn random_seqs(n: usize, dim: usize, max_t: usize, seed: u64) -> Vec<DenseSequence> {
        let mut rng = seed::rng(seed, "seqs", 0);
        (0..n)
            .map(|i| {
                let length = rng.random_range(1..=max_t);
                let steps = (0..max_t).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                DenseSequence { steps, length, label: Some((i % 2) as u8) }
            })
            .collect()
    }

    fn small_arch(bidirectional: bool) -> Architecture {
        Architecture { input_dim: 5, hidden1: 4, hidden2: 3, bidirectional, dropout_rate: 0.4 }
    }

    #[test]
    fn zero_params_give_half() {
        let p = ModelParams::zeros(&small_arch(false));
        let seqs = random_seqs(3, 5, 4, 1);
        let (probs, _) = forward(&seqs, &p, Mode::Train, 7, Execution::default()).unwrap();
        assert_eq!(probs, vec![0.5; 3]);
        let pb = ModelParams::zeros(&small_arch(true));
        let (probs, _) = forward_bidirectional(&seqs, &pb, Mode::Eval, 0, Execution::default()).unwrap();
        assert_eq!(probs, vec![0.5; 3]);
        assert!(forward_bidirectional(&seqs, &p, Mode::Eval, 0, Execution::default()).is_err());
    }

    #[test]
    fn eval_is_deterministic_train_is_seeded() {
        let p = ModelParams::init(&small_arch(false), 2);
        let seqs = random_seqs(4, 5, 6, 3);
        let run = |mode, s| forward(&seqs, &p, mode, s, Execution::default()).unwrap().0;
        assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 99));
        assert_eq!(run(Mode::Train, 5), run(Mode::Train, 5));
        assert_ne!(run(Mode::Train, 5), run(Mode::Train, 6));
    }

    #[test]
    fn loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((loss(&[0.5], &[1], ClassWeights::uniform()) - ln2).abs() < 1e-15);
        assert!(loss(&[1.0 - 1e-15], &[1], ClassWeights::uniform()) < 1e-11);
        let l = loss(&[0.5, 0.5], &[0, 1], ClassWeights([1.0, 6.0]));
        assert!((l - 7.0 * ln2 / 2.0).abs() < 1e-15);
        assert!(loss(&[0.0, 1.0], &[1, 0], ClassWeights::uniform()).is_finite());
    }

    #[test]
    fn inverse_frequency_weights() {
        let w = ClassWeights::inverse_frequency(&[0, 0, 0, 0, 0, 0, 1]);
        assert!((w.0[0] - 7.0 / 12.0).abs() < 1e-15);
        assert!((w.0[1] - 3.5).abs() < 1e-15);
        assert_eq!(ClassWeights::inverse_frequency(&[0, 1]).0, [1.0, 1.0]);
    }

    #[test]
    fn predict_threshold_rules() {
        let p = ModelParams::zeros(&small_arch(false));
        let seqs = random_seqs(2, 5, 3, 4);
        assert_eq!(predict(&p, &seqs, 0.5, Execution::default()).unwrap(), vec![(1, 0.5); 2]);
        assert_eq!(predict(&p, &seqs, 1.1, Execution::default()).unwrap(), vec![(0, 0.5); 2]);
        let wrong = random_seqs(1, 6, 3, 4);
        assert!(matches!(
            predict(&p, &wrong, 0.5, Execution::default()),
            Err(ModelError::VocabMismatch { expected: 5, found: 6 })
        ));
    }

    #[test]
    fn all_keep_mask_equals_no_dropout() {
        let mut p = ModelParams::init(&small_arch(true), 8);
        let seqs = random_seqs(3, 5, 5, 9);
        let labels = [0, 1, 1];
        let w = ClassWeights::uniform();
        let (_, eval_cache) = forward(&seqs, &p, Mode::Eval, 0, Execution::Sequential).unwrap();
        let g_eval = backward(&seqs, &eval_cache, &labels, w, &p, Execution::Sequential).unwrap();
        p.dropout_rate = 0.0;
        let (_, train_cache) = forward(&seqs, &p, Mode::Train, 3, Execution::Sequential).unwrap();
        let mut g_train = backward(&seqs, &train_cache, &labels, w, &p, Execution::Sequential).unwrap();
        g_train.dropout_rate = g_eval.dropout_rate;
        assert_eq!(g_train, g_eval);
    }

    #[test]
    fn palindrome_symmetry_with_tied_directions() {
        let arch = small_arch(true);
        let mut p = ModelParams::init(&arch, 11);
        p.layer1_reverse = Some(p.layer1.clone());
        let base = random_seqs(1, 5, 3, 12).remove(0);
        let mut steps = base.steps[..3].to_vec();
        steps.push(steps[1].clone());
        steps.push(steps[0].clone());
        let seq = DenseSequence { length: 5, steps, label: None };
        let tr = forward_example(&seq, &p, Mode::Eval, 0);
        for t in 0..5 {
            assert_eq!(tr.forward_hidden(t), tr.reverse_hidden(t).unwrap());
            let out = tr.layer1_output(t);
            assert_eq!(&out[4..], tr.forward_hidden(4 - t));
        }
    }

    #[test]
    fn dropout_matches_eval_times_mask() {
        let p = ModelParams::init(&small_arch(false), 21);
        let seq = random_seqs(1, 5, 6, 22).remove(0);
        let eval = forward_example(&seq, &p, Mode::Eval, 0);
        let train = forward_example(&seq, &p, Mode::Train, 77);
        let keep = 1.0 / (1.0 - p.dropout_rate);
        for t in 0..seq.length {
            let e = eval.layer1_output(t);
            for (k, &a) in train.layer2_input(t).iter().enumerate() {
                assert!(a == 0.0 || a == e[k] * keep, "{a} vs {}", e[k]);
            }
        }
    }

    #[test]
    fn layer_with_zero_hidden_is_rejected() {
        let mut p = ModelParams::zeros(&small_arch(false));
        p.layer2 = LstmLayerParams::zeros(4, 0);
        assert!(forward(&random_seqs(1, 5, 2, 1), &p, Mode::Eval, 0, Execution::default()).is_err());
    }
}
