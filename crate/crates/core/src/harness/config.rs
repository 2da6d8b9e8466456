use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::preprocess::DEFAULT_GRID;

/// Every tunable of a run. Used both as the CLI flag set and as the TOML config
/// file schema, where keys are the flag names without the leading dashes.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Options {
    /// Input directory (corpus for `prepare`, prepared run for later commands).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory; defaults to the data directory after `prepare`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quantization grid in quarter notes.
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bidirectional: Option<bool>,
    /// `auto` (inverse class frequency) or `w0,w1`.
    #[arg(long)]
    pub class_weights: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep raw timing instead of snapping to the grid.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_quantize: Option<bool>,
    #[arg(long)]
    pub n_label0: Option<usize>,
    #[arg(long)]
    pub n_label1: Option<usize>,
    /// Checkpoint file; defaults to `checkpoint.json` in the data directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl Options {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Usage(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set here win; unset ones fall back to `base`.
    pub fn overlay(self, base: Options) -> Options {
        Options {
            data_dir: self.data_dir.or(base.data_dir),
            out_dir: self.out_dir.or(base.out_dir),
            seed: self.seed.or(base.seed),
            grid: self.grid.or(base.grid),
            val_fraction: self.val_fraction.or(base.val_fraction),
            epochs: self.epochs.or(base.epochs),
            batch_size: self.batch_size.or(base.batch_size),
            lr: self.lr.or(base.lr),
            patience: self.patience.or(base.patience),
            bidirectional: self.bidirectional.or(base.bidirectional),
            class_weights: self.class_weights.or(base.class_weights),
            threshold: self.threshold.or(base.threshold),
            no_quantize: self.no_quantize.or(base.no_quantize),
            n_label0: self.n_label0.or(base.n_label0),
            n_label1: self.n_label1.or(base.n_label1),
            checkpoint: self.checkpoint.or(base.checkpoint),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ClassWeightSpec {
    InverseFrequency,
    Fixed([f64; 2]),
}

impl From<ClassWeightSpec> for String {
    fn from(spec: ClassWeightSpec) -> String {
        match spec {
            ClassWeightSpec::InverseFrequency => "auto".into(),
            ClassWeightSpec::Fixed([a, b]) => format!("{a},{b}"),
        }
    }
}

impl TryFrom<String> for ClassWeightSpec {
    type Error = String;

    fn try_from(text: String) -> Result<Self, String> {
        if text.trim() == "auto" {
            return Ok(Self::InverseFrequency);
        }
        let parts: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("class weights {text:?}: {e}"))?;
        match parts[..] {
            [a, b] if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => Ok(Self::Fixed([a, b])),
            _ => Err(format!("class weights {text:?}: expected `auto` or two positive numbers")),
        }
    }
}

/// Options with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Settings {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub grid: f64,
    pub val_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub bidirectional: bool,
    pub class_weights: ClassWeightSpec,
    pub threshold: f64,
    pub no_quantize: bool,
    pub n_label0: usize,
    pub n_label1: usize,
    pub checkpoint: PathBuf,
}

impl Settings {
    pub fn resolve(opts: &Options) -> Result<Self, HarnessError> {
        let usage = |m: String| HarnessError::Usage(m);
        let data_dir = opts.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
        let out_dir = opts.out_dir.clone().unwrap_or_else(|| data_dir.clone());
        let class_weights = match &opts.class_weights {
            Some(text) => ClassWeightSpec::try_from(text.clone()).map_err(usage)?,
            None => ClassWeightSpec::InverseFrequency,
        };
        let s = Settings {
            checkpoint: opts.checkpoint.clone().unwrap_or_else(|| data_dir.join("checkpoint.json")),
            data_dir,
            out_dir,
            seed: opts.seed.unwrap_or(42),
            grid: opts.grid.unwrap_or(DEFAULT_GRID),
            val_fraction: opts.val_fraction.unwrap_or(0.4),
            epochs: opts.epochs.unwrap_or(100),
            batch_size: opts.batch_size.unwrap_or(32),
            lr: opts.lr.unwrap_or(1e-3),
            patience: opts.patience.unwrap_or(10),
            bidirectional: opts.bidirectional.unwrap_or(false),
            class_weights,
            threshold: opts.threshold.unwrap_or(0.5),
            no_quantize: opts.no_quantize.unwrap_or(false),
            n_label0: opts.n_label0.unwrap_or(300),
            n_label1: opts.n_label1.unwrap_or(300),
        };
        if !(s.grid > 0.0 && s.grid.is_finite()) {
            return Err(usage(format!("--grid must be positive, got {}", s.grid)));
        }
        if !(s.val_fraction > 0.0 && s.val_fraction < 1.0) {
            return Err(usage(format!("--val-fraction must lie in (0, 1), got {}", s.val_fraction)));
        }
        if s.batch_size == 0 || s.epochs == 0 {
            return Err(usage("--epochs and --batch-size must be positive".into()));
        }
        if !(s.lr > 0.0 && s.lr.is_finite()) {
            return Err(usage(format!("--lr must be positive, got {}", s.lr)));
        }
        if !(0.0..=1.0).contains(&s.threshold) {
            return Err(usage(format!("--threshold must lie in [0, 1], got {}", s.threshold)));
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_overrides_file_overrides_defaults() {
        let file = Options::from_toml("seed = 7\nepochs = 3\nclass-weights = \"1,6\"\nno-quantize = true\n").unwrap();
        let cli = Options { epochs: Some(5), ..Options::default() };
        let s = Settings::resolve(&cli.overlay(file)).unwrap();
        assert_eq!((s.seed, s.epochs, s.batch_size), (7, 5, 32));
        assert_eq!(s.class_weights, ClassWeightSpec::Fixed([1.0, 6.0]));
        assert!(s.no_quantize);
        assert_eq!(s.checkpoint, PathBuf::from("data/checkpoint.json"));
    }

    #[test]
    fn resolved_settings_round_trip_through_toml() {
        let s = Settings::resolve(&Options::default()).unwrap();
        let back: Settings = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert!(Options::from_toml("sede = 1").is_err());
        for opts in [
            Options { val_fraction: Some(1.0), ..Options::default() },
            Options { grid: Some(0.0), ..Options::default() },
            Options { class_weights: Some("1".into()), ..Options::default() },
            Options { class_weights: Some("a,b".into()), ..Options::default() },
            Options { threshold: Some(2.0), ..Options::default() },
        ] {
            assert!(matches!(Settings::resolve(&opts), Err(HarnessError::Usage(_))), "{opts:?}");
        }
    }
}
