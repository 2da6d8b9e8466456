//! Stacked-LSTM binary classifier.
//!
//! Topology: LSTM (64 units, every step emitted) → dropout → LSTM (8 units, state at
//! each example's last real step) → dropout → dense → sigmoid. The first layer can be
//! bidirectional, in which case the second layer sees 128-wide inputs.
//!
//! Gate blocks are ordered `(input, forget, candidate, output)`. Weight matrices are
//! stored input-major: row `d` of `w_input` is the `4H`-wide contribution of input
//! `d`, which makes one-hot inputs a sum of three rows.

mod checkpoint;
mod lstm;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use lstm::lstm_cell;
pub use network::{
    backward, forward, forward_bidirectional, loss, predict, ClassWeights, ExampleTrace, ForwardCache, Mode,
    LOSS_EPS,
};
pub use train::{history_csv, train, Adam, EpochRecord, TrainConfig, TrainOutcome};

use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::EncodedSequence;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sequence dimension {found} does not match model input dimension {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("non-finite activation in example {0}")]
    NonFiniteActivation(usize),
    #[error("training example {0} has no label")]
    MissingLabel(usize),
    #[error("{0}")]
    InvalidInput(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, last_good: Box<TrainOutcome> },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("checkpoint was trained with vocabulary {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

/// A sequence the network can consume: `length` real steps, each a sparse vector.
pub trait InputSequence {
    fn input_dim(&self) -> usize;
    fn length(&self) -> usize;
    /// Calls `f(index, value)` for each non-zero entry of step `t < length`.
    fn for_each_active(&self, t: usize, f: impl FnMut(usize, f64));
    fn label(&self) -> Option<u8>;
}

impl InputSequence for EncodedSequence {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn length(&self) -> usize {
        self.indices.len()
    }

    fn for_each_active(&self, t: usize, mut f: impl FnMut(usize, f64)) {
        for i in self.indices[t] {
            f(i, 1.0);
        }
    }

    fn label(&self) -> Option<u8> {
        self.label
    }
}

/// Real-valued input sequence; used for gradient checks and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSequence {
    pub steps: Vec<Vec<f64>>,
    /// Steps at or beyond this index are padding and never read.
    pub length: usize,
    pub label: Option<u8>,
}

impl InputSequence for DenseSequence {
    fn input_dim(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    fn length(&self) -> usize {
        self.length
    }

    fn for_each_active(&self, t: usize, mut f: impl FnMut(usize, f64)) {
        for (i, &x) in self.steps[t].iter().enumerate() {
            if x != 0.0 {
                f(i, x);
            }
        }
    }

    fn label(&self) -> Option<u8> {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// `[input_dim][4·hidden]`.
    pub w_input: Vec<f64>,
    /// `[hidden][4·hidden]`.
    pub w_recurrent: Vec<f64>,
    /// `[4·hidden]`.
    pub bias: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_input: vec![0.0; input_dim * 4 * hidden],
            w_recurrent: vec![0.0; hidden * 4 * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform Glorot-style input weights, orthogonal recurrent weights, forget bias 1.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let limit = (6.0 / (input_dim + 4 * hidden) as f64).sqrt();
        let u = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        p.w_input.iter_mut().for_each(|w| *w = rng.sample(u));
        p.w_recurrent = orthonormal_rows(hidden, 4 * hidden, rng);
        p.bias[hidden..2 * hidden].fill(1.0);
        p
    }

    pub fn width(&self) -> usize {
        4 * self.hidden
    }

    fn check(&self, name: &str) -> Result<(), ModelError> {
        let w = self.width();
        if self.hidden == 0
            || self.w_input.len() != self.input_dim * w
            || self.w_recurrent.len() != self.hidden * w
            || self.bias.len() != w
        {
            return Err(ModelError::DimensionMismatch(format!(
                "{name}: input_dim {} hidden {} with arrays {}/{}/{}",
                self.input_dim,
                self.hidden,
                self.w_input.len(),
                self.w_recurrent.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// `rows` orthonormal vectors of length `cols` (`rows ≤ cols`), by modified
/// Gram-Schmidt on Gaussian draws.
fn orthonormal_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut m: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..rows {
        for j in 0..i {
            let (done, rest) = m.split_at_mut(i * cols);
            let prev = &done[j * cols..(j + 1) * cols];
            let cur = &mut rest[..cols];
            let d: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
            cur.iter_mut().zip(prev).for_each(|(c, p)| *c -= d * p);
        }
        let row = &mut m[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    m
}

/// Layer sizes and regularization of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub bidirectional: bool,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim, hidden1: 64, hidden2: 8, bidirectional: false, dropout_rate: 0.4 }
    }

    fn layer2_input(&self) -> usize {
        self.hidden1 * if self.bidirectional { 2 } else { 1 }
    }
}

/// All weights of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layer1: LstmLayerParams,
    /// Reverse-direction first layer, present for the bidirectional variant.
    pub layer1_reverse: Option<LstmLayerParams>,
    pub layer2: LstmLayerParams,
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
    pub dropout_rate: f64,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layer1: LstmLayerParams::zeros(arch.input_dim, arch.hidden1),
            layer1_reverse: arch.bidirectional.then(|| LstmLayerParams::zeros(arch.input_dim, arch.hidden1)),
            layer2: LstmLayerParams::zeros(arch.layer2_input(), arch.hidden2),
            dense_w: vec![0.0; arch.hidden2],
            dense_b: 0.0,
            dropout_rate: arch.dropout_rate,
        }
    }

    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = crate::seed::rng(seed, "init", 0);
        let layer1 = LstmLayerParams::init(arch.input_dim, arch.hidden1, &mut rng);
        let layer1_reverse = arch
            .bidirectional
            .then(|| LstmLayerParams::init(arch.input_dim, arch.hidden1, &mut rng));
        let layer2 = LstmLayerParams::init(arch.layer2_input(), arch.hidden2, &mut rng);
        let limit = (6.0 / (arch.hidden2 + 1) as f64).sqrt();
        let u = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let dense_w = (0..arch.hidden2).map(|_| rng.sample(u)).collect();
        Self { layer1, layer1_reverse, layer2, dense_w, dense_b: 0.0, dropout_rate: arch.dropout_rate }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.layer1.input_dim,
            hidden1: self.layer1.hidden,
            hidden2: self.layer2.hidden,
            bidirectional: self.is_bidirectional(),
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.layer1_reverse.is_some()
    }

    /// Output width of the first layer.
    pub fn layer1_width(&self) -> usize {
        self.layer1.hidden * if self.is_bidirectional() { 2 } else { 1 }
    }

    /// A zeroed copy with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.architecture())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.layer1.check("layer1")?;
        if let Some(rev) = &self.layer1_reverse {
            rev.check("layer1_reverse")?;
            if rev.input_dim != self.layer1.input_dim || rev.hidden != self.layer1.hidden {
                return Err(ModelError::DimensionMismatch("reverse layer differs from forward layer".into()));
            }
        }
        self.layer2.check("layer2")?;
        if self.layer2.input_dim != self.layer1_width() {
            return Err(ModelError::DimensionMismatch(format!(
                "layer2 input {} but layer1 emits {}",
                self.layer2.input_dim,
                self.layer1_width()
            )));
        }
        if self.dense_w.len() != self.layer2.hidden {
            return Err(ModelError::DimensionMismatch(format!(
                "dense weights {} for {} hidden units",
                self.dense_w.len(),
                self.layer2.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::DimensionMismatch(format!("dropout rate {}", self.dropout_rate)));
        }
        Ok(())
    }

    /// Every parameter array in a fixed order, with a name.
    pub fn named_blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("layer1.w_input", &self.layer1.w_input),
            ("layer1.w_recurrent", &self.layer1.w_recurrent),
            ("layer1.bias", &self.layer1.bias),
        ];
        if let Some(rev) = &self.layer1_reverse {
            out.push(("layer1_reverse.w_input", &rev.w_input));
            out.push(("layer1_reverse.w_recurrent", &rev.w_recurrent));
            out.push(("layer1_reverse.bias", &rev.bias));
        }
        out.push(("layer2.w_input", &self.layer2.w_input));
        out.push(("layer2.w_recurrent", &self.layer2.w_recurrent));
        out.push(("layer2.bias", &self.layer2.bias));
        out.push(("dense.w", &self.dense_w));
        out.push(("dense.b", std::slice::from_ref(&self.dense_b)));
        out
    }

    /// Mutable view of the blocks, in the order of [`named_blocks`](Self::named_blocks).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.layer1.w_input,
            &mut self.layer1.w_recurrent,
            &mut self.layer1.bias,
        ];
        if let Some(rev) = &mut self.layer1_reverse {
            out.push(&mut rev.w_input);
            out.push(&mut rev.w_recurrent);
            out.push(&mut rev.bias);
        }
        out.push(&mut self.layer2.w_input);
        out.push(&mut self.layer2.w_recurrent);
        out.push(&mut self.layer2.bias);
        out.push(&mut self.dense_w);
        out.push(std::slice::from_mut(&mut self.dense_b));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.named_blocks().iter().map(|(_, b)| b.len()).sum()
    }
}
