use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{ClassWeightSpec, Settings};
use super::metrics::{evaluate, Metrics};
use super::split::split_indices;
use super::HarnessError;
use crate::encode::{build_vocab, encode_sequence, pad_batch, EncodedSequence, Vocabularies};
use crate::midi_io::write_smf;
use crate::model::{self, load_checkpoint, save_checkpoint, ModelError, TrainConfig};
use crate::par::{self, Execution};
use crate::preprocess::{note_name, preprocess_midi, FeatureRow, PreprocessConfig, Prepared, DEFAULT_GRID};
use crate::synth::{self, SynthConfig};

pub const MANIFEST: &str = "manifest.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const FEATURES: &str = "features.jsonl";
pub const ENCODED: &str = "encoded.jsonl";
pub const PREPARE_REPORT: &str = "prepare_report.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const HISTORY: &str = "history.csv";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const METRICS: &str = "metrics.json";
pub const PREDICTIONS: &str = "predictions.jsonl";

/// Grid-occupancy gap between the labels above which `prepare` flags a timing shortcut.
pub const DISPARITY_THRESHOLD: f64 = 0.05;

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(path, text)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    write(path, out)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| HarnessError::Data { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the corpus directory.
    pub path: String,
    pub label: u8,
    pub seed: u64,
    pub bpm: u32,
    pub index: usize,
}

pub fn synth_config(s: &Settings) -> SynthConfig {
    SynthConfig { seed: s.seed, n_label0: s.n_label0, n_label1: s.n_label1, ..SynthConfig::default() }
}

/// Writes `label0/*.mid`, `label1/*.mid` and `manifest.jsonl` under the output directory.
pub fn run_synth(s: &Settings, exec: Execution) -> Result<Vec<ManifestEntry>, HarnessError> {
    let config = synth_config(s);
    let mut manifest = Vec::with_capacity(config.n_label0 + config.n_label1);
    for g in synth::generate(&config, exec) {
        let path = format!("label{}/{:05}.mid", g.label, g.index);
        write(&s.out_dir.join(&path), write_smf(&g.file)?)?;
        manifest.push(ManifestEntry { path, label: g.label, seed: config.seed, bpm: g.bpm, index: g.index });
    }
    write_jsonl(&s.out_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// `(relative path, label)` for every file of a corpus: the manifest when present,
/// otherwise the sorted `*.mid` files of `label0/` and `label1/`.
pub fn load_corpus(dir: &Path) -> Result<Vec<(String, u8)>, HarnessError> {
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let entries: Vec<ManifestEntry> = read_jsonl(&manifest)?;
        for e in &entries {
            if e.label > 1 {
                return Err(HarnessError::Data { path: manifest, message: format!("{}: label {}", e.path, e.label) });
            }
        }
        return Ok(entries.into_iter().map(|e| (e.path, e.label)).collect());
    }
    let mut out = Vec::new();
    for label in [0u8, 1] {
        let sub = format!("label{label}");
        let Ok(listing) = fs::read_dir(dir.join(&sub)) else { continue };
        let mut names: Vec<String> = listing
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| is_midi_name(n))
            .collect();
        names.sort();
        out.extend(names.into_iter().map(|n| (format!("{sub}/{n}"), label)));
    }
    if out.is_empty() {
        return Err(HarnessError::Data {
            path: dir.to_path_buf(),
            message: format!("no {MANIFEST} and no label0/ or label1/ MIDI files"),
        });
    }
    Ok(out)
}

fn is_midi_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".mid") || lower.ends_with(".midi")
}

pub fn preprocess_config(s: &Settings) -> PreprocessConfig {
    if s.no_quantize {
        PreprocessConfig::unquantized(s.grid)
    } else {
        PreprocessConfig::quantized(s.grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub source_id: String,
    pub label: u8,
    pub split: String,
    pub beats_per_bar: f64,
    pub bars: usize,
    pub short: bool,
    pub rows: Vec<FeatureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub source_id: String,
    pub label: u8,
    pub split: String,
    pub padded_len: usize,
    pub indices: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub files: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejected>,
    pub warnings: Vec<String>,
    pub quantized: bool,
    pub step: f64,
    pub occupancy_grid: f64,
    /// Fraction of note onsets on the occupancy grid, per label.
    pub grid_occupancy: [f64; 2],
    pub occupancy_disparity: f64,
    /// The labels differ in grid occupancy enough for a model to separate them by
    /// timing alone.
    pub disparity_flag: bool,
    pub train: usize,
    pub val: usize,
    pub truncated: usize,
    pub input_dim: usize,
    pub max_len: usize,
    pub vocab_digest: String,
}

/// Parses, preprocesses, splits and encodes a corpus.
///
/// The vocabulary is built from the training split only; validation sequences are
/// encoded against it. Files that fail to parse or encode are reported, not fatal.
pub fn run_prepare(s: &Settings, exec: Execution) -> Result<PrepareReport, HarnessError> {
    let corpus = load_corpus(&s.data_dir)?;
    let cfg = preprocess_config(s);
    let results: Vec<Result<Prepared, String>> = par::map_indexed(exec, &corpus, |_, (path, _)| {
        let bytes = read(&s.data_dir.join(path)).map_err(|e| e.to_string())?;
        preprocess_midi(&bytes, path, &cfg).map_err(|e| e.to_string())
    });

    let mut rejected = Vec::new();
    let mut warnings = Vec::new();
    let mut kept: Vec<(u8, Prepared)> = Vec::new();
    for ((path, label), result) in corpus.iter().zip(results) {
        match result {
            Ok(p) => {
                warnings.extend(p.warnings.iter().map(|w| format!("{path}: {w}")));
                kept.push((*label, p));
            }
            Err(error) => {
                log::warn!("{path}: {error}");
                rejected.push(Rejected { path: path.clone(), error });
            }
        }
    }
    let labels: Vec<u8> = kept.iter().map(|(l, _)| *l).collect();
    let (train_idx, _) = split_indices(&labels, s.val_fraction, s.seed)?;
    let mut is_train = vec![false; kept.len()];
    for &i in &train_idx {
        is_train[i] = true;
    }
    let train_seqs: Vec<_> = train_idx.iter().map(|&i| kept[i].1.sequence.clone()).collect();
    let bpb = train_seqs.iter().map(|q| q.beats_per_bar).fold(0.0, f64::max);
    let vocab = build_vocab(&train_seqs, cfg.step, bpb)?;

    let mut features = Vec::new();
    let mut encoded = Vec::new();
    let mut records: Vec<(String, u8, &str)> = Vec::new();
    let (mut on_grid, mut rows) = ([0usize; 2], [0usize; 2]);
    for (i, (label, p)) in kept.iter().enumerate() {
        let split = if is_train[i] { "train" } else { "val" };
        let id = &p.sequence.source_id;
        match encode_sequence(&p.sequence, &vocab) {
            Ok(e) => {
                encoded.push(e.with_label(*label));
                records.push((id.clone(), *label, split));
            }
            Err(e) => {
                log::warn!("{id}: {e}");
                rejected.push(Rejected { path: id.clone(), error: e.to_string() });
                continue;
            }
        }
        on_grid[usize::from(*label)] += p.on_grid;
        rows[usize::from(*label)] += p.sequence.rows.len();
        features.push(FeatureRecord {
            source_id: id.clone(),
            label: *label,
            split: split.into(),
            beats_per_bar: p.sequence.beats_per_bar,
            bars: p.sequence.bars,
            short: p.sequence.short,
            rows: p.sequence.rows.clone(),
        });
    }
    let batch = pad_batch(encoded, vocab.max_len);
    let encoded: Vec<EncodedRecord> = records
        .into_iter()
        .zip(batch.sequences)
        .map(|((source_id, label, split), e)| EncodedRecord {
            source_id,
            label,
            split: split.into(),
            padded_len: e.padded_len,
            indices: e.indices,
        })
        .collect();

    let occupancy = [0, 1].map(|l| if rows[l] == 0 { 0.0 } else { on_grid[l] as f64 / rows[l] as f64 });
    let disparity = (occupancy[0] - occupancy[1]).abs();
    let report = PrepareReport {
        files: corpus.len(),
        accepted: encoded.len(),
        rejected,
        warnings,
        quantized: cfg.is_quantized(),
        step: cfg.step,
        occupancy_grid: cfg.occupancy_grid,
        grid_occupancy: occupancy,
        occupancy_disparity: disparity,
        disparity_flag: disparity > DISPARITY_THRESHOLD,
        train: encoded.iter().filter(|r| r.split == "train").count(),
        val: encoded.iter().filter(|r| r.split == "val").count(),
        truncated: batch.truncated,
        input_dim: vocab.dim(),
        max_len: vocab.max_len,
        vocab_digest: vocab.digest(),
    };
    if report.disparity_flag {
        log::warn!(
            "grid occupancy differs between labels ({:.3} vs {:.3}); timing alone may separate them",
            occupancy[0],
            occupancy[1]
        );
    }
    write(&s.out_dir.join(VOCAB), vocab.to_json())?;
    write_jsonl(&s.out_dir.join(FEATURES), &features)?;
    write_jsonl(&s.out_dir.join(ENCODED), &encoded)?;
    write_json(&s.out_dir.join(PREPARE_REPORT), &report)?;
    Ok(report)
}

/// The output of `prepare`, read back.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabularies,
    pub records: Vec<EncodedRecord>,
}

impl PreparedData {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let vocab_path = dir.join(VOCAB);
        let vocab = Vocabularies::from_json(&read_text(&vocab_path)?)
            .map_err(|e| HarnessError::Data { path: vocab_path, message: e.to_string() })?;
        let encoded_path = dir.join(ENCODED);
        let records: Vec<EncodedRecord> = read_jsonl(&encoded_path)?;
        let dim = vocab.dim();
        for r in &records {
            if r.indices.iter().flatten().any(|&i| i >= dim) || r.label > 1 {
                return Err(HarnessError::Data {
                    path: encoded_path,
                    message: format!("{}: index or label out of range", r.source_id),
                });
            }
        }
        Ok(Self { vocab, records })
    }

    pub fn sequences(&self, split: &str) -> Vec<EncodedSequence> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| EncodedSequence {
                indices: r.indices.clone(),
                padded_len: r.padded_len,
                dim: self.vocab.dim(),
                label: Some(r.label),
            })
            .collect()
    }
}

pub fn train_config(s: &Settings, exec: Execution) -> TrainConfig {
    TrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        learning_rate: s.lr,
        seed: s.seed,
        class_weights: match s.class_weights {
            ClassWeightSpec::InverseFrequency => None,
            ClassWeightSpec::Fixed(w) => Some(w),
        },
        validation_fraction: s.val_fraction,
        early_stop_patience: (s.patience > 0).then_some(s.patience),
        bidirectional: s.bidirectional,
        execution: exec,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_examples: usize,
    pub val_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Epoch at which training produced non-finite values, if it did.
    pub diverged_at: Option<usize>,
    pub class_weights: [f64; 2],
    pub parameters: usize,
    pub vocab_digest: String,
    /// Validation scores of the saved parameters.
    pub val_metrics: Option<Metrics>,
}

fn labels(seqs: &[EncodedSequence]) -> Vec<u8> {
    seqs.iter().map(|q| q.label.unwrap_or(0)).collect()
}

/// Trains on the `train` split, selects on `val`, and writes the checkpoint, history
/// and report. On divergence the last good state is still written before the error
/// is returned.
pub fn run_train(s: &Settings, exec: Execution) -> Result<TrainReport, HarnessError> {
    let data = PreparedData::load(&s.data_dir)?;
    let train = data.sequences("train");
    let val = data.sequences("val");
    let cfg = train_config(s, exec);
    let (outcome, diverged_at) = match model::train(&train, &val, &cfg) {
        Ok(outcome) => (outcome, None),
        Err(ModelError::Diverged { epoch, last_good }) => (*last_good, Some(epoch)),
        Err(e) => return Err(e.into()),
    };
    let digest = data.vocab.digest();
    let val_metrics = if val.is_empty() {
        None
    } else {
        let preds = model::predict(&outcome.params, &val, s.threshold, exec)?;
        let preds: Vec<u8> = preds.iter().map(|(l, _)| *l).collect();
        Some(evaluate(&preds, &labels(&val))?)
    };
    let report = TrainReport {
        train_examples: train.len(),
        val_examples: val.len(),
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        diverged_at,
        class_weights: outcome.class_weights.0,
        parameters: outcome.params.parameter_count(),
        vocab_digest: digest.clone(),
        val_metrics,
    };
    write(&s.out_dir.join(CHECKPOINT), save_checkpoint(&outcome.params, &digest))?;
    write(&s.out_dir.join(HISTORY), model::history_csv(&outcome.history))?;
    write_json(&s.out_dir.join(TRAIN_REPORT), &report)?;
    if let Some(epoch) = diverged_at {
        return Err(ModelError::Diverged { epoch, last_good: Box::new(outcome) }.into());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub threshold: f64,
    pub vocab_digest: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Scores the checkpoint on the validation split and writes `metrics.json`.
pub fn run_eval(s: &Settings, exec: Execution) -> Result<EvalReport, HarnessError> {
    let data = PreparedData::load(&s.data_dir)?;
    let digest = data.vocab.digest();
    let params = load_checkpoint(&read(&s.checkpoint)?, &digest)?;
    let val = data.sequences("val");
    let preds: Vec<u8> = model::predict(&params, &val, s.threshold, exec)?.iter().map(|(l, _)| *l).collect();
    let report = EvalReport {
        split: "val".into(),
        threshold: s.threshold,
        vocab_digest: digest,
        metrics: evaluate(&preds, &labels(&val))?,
    };
    write_json(&s.out_dir.join(METRICS), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// MIDI files named directly plus the sorted MIDI files of named directories.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let listing = fs::read_dir(input).map_err(|source| HarnessError::Io { path: input.clone(), source })?;
            let mut files: Vec<PathBuf> = listing
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && p.file_name().is_some_and(|n| is_midi_name(&n.to_string_lossy())))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

/// Classifies each input with the checkpoint, keeping input order. Files that
/// cannot be read or encoded get an `error` entry instead of a label.
pub fn run_predict(s: &Settings, inputs: &[PathBuf], exec: Execution) -> Result<Vec<Prediction>, HarnessError> {
    let vocab_path = s.data_dir.join(VOCAB);
    let vocab = Vocabularies::from_json(&read_text(&vocab_path)?)
        .map_err(|e| HarnessError::Data { path: vocab_path, message: e.to_string() })?;
    let params = load_checkpoint(&read(&s.checkpoint)?, &vocab.digest())?;
    let files = expand_inputs(inputs)?;
    let cfg = PreprocessConfig { step: vocab.grid_step, occupancy_grid: DEFAULT_GRID };
    let encoded: Vec<Result<EncodedSequence, String>> = par::map_indexed(exec, &files, |_, path| {
        let id = path.display().to_string();
        let bytes = read(path).map_err(|e| e.to_string())?;
        let prepared = preprocess_midi(&bytes, &id, &cfg).map_err(|e| e.to_string())?;
        encode_sequence(&prepared.sequence, &vocab).map_err(|e| e.to_string())
    });
    let ok: Vec<EncodedSequence> = encoded.iter().filter_map(|e| e.as_ref().ok().cloned()).collect();
    let mut scores = model::predict(&params, &pad_batch(ok, vocab.max_len).sequences, s.threshold, exec)?.into_iter();
    let predictions: Vec<Prediction> = files
        .iter()
        .zip(encoded)
        .map(|(path, e)| {
            let path = path.display().to_string();
            match e {
                Ok(_) => {
                    let (label, prob) = scores.next().expect("one score per encoded file");
                    Prediction { path, label: Some(label), prob: Some(prob), error: None }
                }
                Err(error) => Prediction { path, label: None, prob: None, error: Some(error) },
            }
        })
        .collect();
    write_jsonl(&s.out_dir.join(PREDICTIONS), &predictions)?;
    Ok(predictions)
}

/// A per-bar table of `(pitch, position, duration)` rows for one file.
pub fn inspect(path: &Path, s: &Settings) -> Result<String, HarnessError> {
    let bytes = read(path)?;
    let prepared = preprocess_midi(&bytes, &path.display().to_string(), &preprocess_config(s))?;
    let seq = &prepared.sequence;
    let mut out = format!(
        "# {}: ppq {}, {} bpm, {} beats per bar, {} bar(s){}\n",
        path.display(),
        prepared.ppq,
        prepared.bpm,
        seq.beats_per_bar,
        seq.bars,
        if seq.short { ", short" } else { "" }
    );
    for w in &prepared.warnings {
        out.push_str(&format!("# warning: {w}\n"));
    }
    let mut bar = None;
    for r in &seq.rows {
        if bar != Some(r.bar) {
            out.push_str(&format!("bar {}\n", r.bar));
            bar = Some(r.bar);
        }
        out.push_str(&format!("{} {:?} {:?}\n", note_name(r.pitch), r.position, r.duration));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Options;

    fn settings(dir: &Path, extra: Options) -> Settings {
        let opts = Options {
            data_dir: Some(dir.to_path_buf()),
            n_label0: Some(6),
            n_label1: Some(6),
            epochs: Some(2),
            ..Options::default()
        };
        Settings::resolve(&extra.overlay(opts)).unwrap()
    }

    #[test]
    fn synth_prepare_train_eval_predict() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let run = dir.path().join("run");
        let exec = Execution::default();

        let s = settings(&corpus, Options { out_dir: Some(corpus.clone()), ..Options::default() });
        assert_eq!(run_synth(&s, exec).unwrap().len(), 12);
        assert_eq!(load_corpus(&corpus).unwrap()[6], ("label1/00000.mid".to_string(), 1));

        let s = settings(&corpus, Options { out_dir: Some(run.clone()), ..Options::default() });
        let report = run_prepare(&s, exec).unwrap();
        assert_eq!((report.accepted, report.train, report.val), (12, 8, 4));
        assert!(report.warnings.is_empty() && report.rejected.is_empty());
        assert_eq!(report.grid_occupancy, [1.0, 1.0]);
        assert!(!report.disparity_flag);

        let s = settings(&run, Options::default());
        let train = run_train(&s, exec).unwrap();
        assert_eq!(train.epochs_run, 2);
        let history = read_text(&run.join(HISTORY)).unwrap();
        assert_eq!(history.lines().count(), 3);

        let eval = run_eval(&s, exec).unwrap();
        assert_eq!(eval.metrics.total, 4);
        assert_eq!(Some(eval.metrics), train.val_metrics);

        let preds = run_predict(&s, &[corpus.join("label0"), run.join(VOCAB)], exec).unwrap();
        assert_eq!(preds.len(), 7);
        assert!(preds[..6].iter().all(|p| p.prob.is_some_and(|q| (0.0..=1.0).contains(&q))));
        assert!(preds[6].error.is_some());
    }

    #[test]
    fn corpus_without_manifest_is_scanned() {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(dir.path(), Options { out_dir: Some(dir.path().to_path_buf()), ..Options::default() });
        run_synth(&s, Execution::Sequential).unwrap();
        fs::remove_file(dir.path().join(MANIFEST)).unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 12);
        assert_eq!(corpus[0], ("label0/00000.mid".to_string(), 0));
        assert!(load_corpus(&dir.path().join("missing")).is_err());
    }
}
