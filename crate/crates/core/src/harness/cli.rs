use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{Options, Settings};
use super::pipeline::{self, write};
use super::HarnessError;
use crate::par::Execution;

#[derive(Debug, Parser)]
#[command(name = "melody-lstm", version, about = "Classify 8-bar MIDI melodies with a stacked LSTM")]
struct Cli {
    /// TOML file whose keys mirror the long flags; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus into --out-dir.
    Synth(Options),
    /// Parse, preprocess, split and encode the corpus in --data-dir.
    Prepare(Options),
    /// Train on a prepared directory; writes checkpoint, history and report.
    Train(Options),
    /// Score the checkpoint on the validation split; prints metrics JSON.
    Eval(Options),
    /// Classify MIDI files (or directories of them), one JSON line per file.
    Predict {
        #[command(flatten)]
        options: Options,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print the per-bar feature rows of one MIDI file.
    Inspect {
        #[command(flatten)]
        options: Options,
        file: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict { .. } => "predict",
            Command::Inspect { .. } => "inspect",
        }
    }

    fn options(&self) -> &Options {
        match self {
            Command::Synth(o) | Command::Prepare(o) | Command::Train(o) | Command::Eval(o) => o,
            Command::Predict { options, .. } | Command::Inspect { options, .. } => options,
        }
    }
}

/// Runs one command line and returns the process exit code: 0 success, 1 usage
/// error, 2 data error, 3 training divergence. Results go to `out`, diagnostics to
/// standard error.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), HarnessError> {
    out.write_all(text.as_bytes())
        .map_err(|source| HarnessError::Io { path: PathBuf::from("<stdout>"), source })
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), HarnessError> {
    let (file_opts, file_text) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
            (Options::from_toml(&text)?, Some(text))
        }
        None => (Options::default(), None),
    };
    let mut opts = cli.command.options().clone().overlay(file_opts);
    if matches!(cli.command, Command::Synth(_)) && opts.out_dir.is_none() {
        opts.out_dir = opts.data_dir.clone();
    }
    if matches!(cli.command, Command::Prepare(_)) && opts.out_dir.is_none() {
        return Err(HarnessError::Usage("prepare needs --out-dir".into()));
    }
    let settings = Settings::resolve(&opts)?;
    let exec = Execution::default();
    let name = cli.command.name();

    let dumps_config = !matches!(cli.command, Command::Inspect { .. });
    if dumps_config {
        write(&settings.out_dir.join(format!("{name}.config.toml")), settings.to_toml())?;
        if let Some(text) = &file_text {
            write(&settings.out_dir.join(format!("{name}.config.file.toml")), text)?;
        }
    }

    match &cli.command {
        Command::Synth(_) => {
            let manifest = pipeline::run_synth(&settings, exec)?;
            log::info!("wrote {} files to {}", manifest.len(), settings.out_dir.display());
        }
        Command::Prepare(_) => {
            let report = pipeline::run_prepare(&settings, exec)?;
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")))?;
        }
        Command::Train(_) => {
            let report = pipeline::run_train(&settings, exec)?;
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")))?;
        }
        Command::Eval(_) => {
            let report = pipeline::run_eval(&settings, exec)?;
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")))?;
        }
        Command::Predict { inputs, .. } => {
            let predictions = pipeline::run_predict(&settings, inputs, exec)?;
            for p in &predictions {
                emit(out, &format!("{}\n", serde_json::to_string(p).expect("prediction serializes")))?;
            }
            if let Some(bad) = predictions.iter().find(|p| p.error.is_some()) {
                return Err(HarnessError::Data {
                    path: PathBuf::from(&bad.path),
                    message: bad.error.clone().unwrap_or_default(),
                });
            }
        }
        Command::Inspect { file, .. } => emit(out, &pipeline::inspect(file, &settings)?)?,
    }
    Ok(())
}
