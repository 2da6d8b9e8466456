use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{batch_gradient, loss, ClassWeights, Mode};
use super::{forward, Architecture, InputSequence, ModelError, ModelParams};
use crate::par::Execution;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// `None` means inverse class frequency over the training set.
    pub class_weights: Option<[f64; 2]>,
    pub validation_fraction: f64,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub early_stop_patience: Option<usize>,
    pub dropout_rate: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub bidirectional: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            class_weights: None,
            validation_fraction: 0.4,
            early_stop_patience: Some(10),
            dropout_rate: 0.4,
            hidden1: 64,
            hidden2: 8,
            bidirectional: false,
            execution: Execution::default(),
        }
    }
}

/// Adam with bias correction over every parameter block.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        let shapes: Vec<Vec<f64>> = params.named_blocks().iter().map(|(_, b)| vec![0.0; b.len()]).collect();
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let grads = grads.named_blocks();
        for (((theta, (_, g)), m), v) in params.blocks_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub class_weights: ClassWeights,
}

/// `epoch,train_loss,train_acc,val_loss,val_acc` with shortest round-trip floats.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc));
    }
    out
}

fn labels_of<S: InputSequence>(seqs: &[S], offset: usize) -> Result<Vec<u8>, ModelError> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| s.label().ok_or(ModelError::MissingLabel(offset + i)))
        .collect()
}

fn evaluate<S: InputSequence + Sync>(
    seqs: &[S],
    labels: &[u8],
    params: &ModelParams,
    weights: ClassWeights,
    exec: Execution,
) -> Result<(f64, f64), ModelError> {
    if seqs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (probs, _) = forward(seqs, params, Mode::Eval, 0, exec)?;
    let correct = probs.iter().zip(labels).filter(|(&p, &y)| u8::from(p >= 0.5) == y).count();
    Ok((loss(&probs, labels, weights), correct as f64 / seqs.len() as f64))
}

/// Mini-batch Adam training with seeded shuffling and dropout.
///
/// Metrics are measured in eval mode after every epoch. The returned parameters are
/// those of the best validation-accuracy epoch (training accuracy when `val` is
/// empty). Identical inputs and seed give bitwise-identical results under either
/// execution mode.
pub fn train<S: InputSequence + Sync>(train: &[S], val: &[S], config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    let Some(first) = train.first() else {
        return Err(ModelError::InvalidInput("empty training set".into()));
    };
    if config.batch_size == 0 {
        return Err(ModelError::InvalidInput("batch size must be positive".into()));
    }
    let train_labels = labels_of(train, 0)?;
    let val_labels = labels_of(val, train.len())?;
    let arch = Architecture {
        input_dim: first.input_dim(),
        hidden1: config.hidden1,
        hidden2: config.hidden2,
        bidirectional: config.bidirectional,
        dropout_rate: config.dropout_rate,
    };
    let mut params = ModelParams::init(&arch, seed::derive(config.seed, "init", 0));
    params.validate()?;
    let weights = config
        .class_weights
        .map(ClassWeights)
        .unwrap_or_else(|| ClassWeights::inverse_frequency(&train_labels));
    let exec = config.execution;
    let mut adam = Adam::new(&params, config);

    let mut outcome = TrainOutcome {
        params: params.clone(),
        history: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        class_weights: weights,
    };
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(config.seed, "shuffle", epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&S> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train_labels[i]).collect();
            let rng_seed = seed::derive(config.seed, "batch", step);
            let (_, grads) = batch_gradient(&batch, &labels, weights, &params, rng_seed, exec);
            if !grads.is_finite() {
                return Err(ModelError::Diverged { epoch, last_good: Box::new(outcome) });
            }
            adam.step(&mut params, &grads);
            step += 1;
        }

        let diverged = |outcome: TrainOutcome| ModelError::Diverged { epoch, last_good: Box::new(outcome) };
        let Ok((train_loss, train_acc)) = evaluate(train, &train_labels, &params, weights, exec) else {
            return Err(diverged(outcome));
        };
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(diverged(outcome));
        }
        let (val_loss, val_acc) = evaluate(val, &val_labels, &params, weights, exec).map_err(|_| diverged(outcome.clone()))?;
        outcome.history.push(EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc });
        log::info!("epoch {epoch}: train loss {train_loss:.4} acc {train_acc:.4}, val loss {val_loss:.4} acc {val_acc:.4}");

        let selection = if val.is_empty() { train_acc } else { val_acc };
        if selection > best_acc {
            best_acc = selection;
            outcome.params = params.clone();
            outcome.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.early_stop_patience.is_some_and(|p| since_best >= p) {
            outcome.stopped_early = true;
            break;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::super::DenseSequence;
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let arch = Architecture { input_dim: 2, hidden1: 1, hidden2: 1, bidirectional: false, dropout_rate: 0.0 };
        let mut p = ModelParams::zeros(&arch);
        let mut g = p.zeros_like();
        g.dense_b = 0.3;
        g.dense_w[0] = -2.0;
        let mut adam = Adam::new(&p, &TrainConfig::default());
        adam.step(&mut p, &g);
        assert!((p.dense_b + 1e-3).abs() < 1e-9);
        assert!((p.dense_w[0] - 1e-3).abs() < 1e-9);
        assert_eq!(p.layer1.bias, vec![0.0; 4]);
    }

    #[test]
    fn history_csv_layout() {
        let h = [EpochRecord { epoch: 1, train_loss: 0.5, train_acc: 1.0, val_loss: 0.25, val_acc: 0.75 }];
        assert_eq!(history_csv(&h), "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.5,1,0.25,0.75\n");
    }

    #[test]
    fn rejects_unlabelled_and_empty() {
        let s = DenseSequence { steps: vec![vec![1.0]], length: 1, label: None };
        assert!(matches!(train(std::slice::from_ref(&s), &[], &TrainConfig::default()), Err(ModelError::MissingLabel(0))));
        let empty: [DenseSequence; 0] = [];
        assert!(train(&empty, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn diverges_cleanly_on_non_finite_input() {
        let bad = DenseSequence { steps: vec![vec![f64::NAN, 1.0]], length: 1, label: Some(1) };
        let good = DenseSequence { steps: vec![vec![0.5, 1.0]], length: 1, label: Some(0) };
        let cfg = TrainConfig { epochs: 2, hidden1: 3, hidden2: 2, ..TrainConfig::default() };
        match train(&[good, bad], &[], &cfg) {
            Err(ModelError::Diverged { epoch: 1, last_good }) => assert!(last_good.params.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
