//! Stacked-LSTM classifier for 8-bar monophonic MIDI melodies.
//!
//! The pipeline runs bytes to prediction:
//!
//! 1. [`midi_io`] parses Standard MIDI Files into tick-domain notes and a tempo map.
//! 2. [`preprocess`] converts ticks to beats, enforces monophony, snaps events to a
//!    grid and lays the melody out as per-bar `(pitch, position, duration)` rows.
//! 3. [`encode`] one-hot encodes each row against fixed vocabularies and pads batches.
//! 4. [`model`] is a two-layer LSTM (64 then 8 units) with dropout and a sigmoid head,
//!    trained with Adam through hand-written backpropagation through time.
//! 5. [`synth`] generates labelled synthetic corpora, and [`harness`] holds the
//!    splitting, metrics and end-to-end commands used by the CLI.
//!
//! Batch-level work (per-example gradients, evaluation, file preparation) runs through
//! [`par`], which uses rayon when the `parallel` feature is on and a plain loop otherwise.
//! Both paths produce bitwise-identical results.

pub mod encode;
pub mod harness;
pub mod midi_io;
pub mod model;
pub mod par;
pub mod preprocess;
pub mod seed;
pub mod synth;

pub use encode::{Batch, EncodedSequence, Vocabularies};
pub use midi_io::{MidiFile, NoteEvent, TempoMap};
pub use model::{ModelParams, TrainConfig};
pub use preprocess::{FeatureRow, MelodySequence};
