//! Versioned JSON checkpoints.
//!
//! Layout: `{format, version, vocab_digest, dropout_rate, bidirectional, gate_order,
//! lstm1, lstm1_reverse, lstm2, dense}` where each LSTM entry carries its
//! `input_dim`, `hidden` and the three arrays in the input-major layout used by
//! [`LstmLayerParams`].

use serde::{Deserialize, Serialize};

use super::{LstmLayerParams, ModelError, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "melody-lstm-checkpoint";
const GATE_ORDER: &str = "input,forget,candidate,output";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    vocab_digest: String,
    dropout_rate: f64,
    bidirectional: bool,
    gate_order: String,
    lstm1: LstmLayerParams,
    lstm1_reverse: Option<LstmLayerParams>,
    lstm2: LstmLayerParams,
    dense: Dense,
}

#[derive(Debug, Serialize, Deserialize)]
struct Dense {
    weights: Vec<f64>,
    bias: f64,
}

pub fn save_checkpoint(params: &ModelParams, vocab_digest: &str) -> Vec<u8> {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        vocab_digest: vocab_digest.to_string(),
        dropout_rate: params.dropout_rate,
        bidirectional: params.is_bidirectional(),
        gate_order: GATE_ORDER.to_string(),
        lstm1: params.layer1.clone(),
        lstm1_reverse: params.layer1_reverse.clone(),
        lstm2: params.layer2.clone(),
        dense: Dense { weights: params.dense_w.clone(), bias: params.dense_b },
    };
    serde_json::to_vec(&file).expect("checkpoint serializes")
}

/// Decodes and validates a checkpoint, returning it with its vocabulary digest.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams, String), ModelError> {
    let file: CheckpointFile =
        serde_json::from_slice(bytes).map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(ModelError::CorruptCheckpoint(format!("format tag {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch { expected: CHECKPOINT_VERSION, found: file.version });
    }
    if file.gate_order != GATE_ORDER {
        return Err(ModelError::CorruptCheckpoint(format!("gate order {:?}", file.gate_order)));
    }
    if file.bidirectional != file.lstm1_reverse.is_some() {
        return Err(ModelError::DimensionMismatch("bidirectional flag disagrees with layers".into()));
    }
    let params = ModelParams {
        layer1: file.lstm1,
        layer1_reverse: file.lstm1_reverse,
        layer2: file.lstm2,
        dense_w: file.dense.weights,
        dense_b: file.dense.bias,
        dropout_rate: file.dropout_rate,
    };
    params.validate()?;
    if !params.is_finite() {
        return Err(ModelError::CorruptCheckpoint("non-finite weights".into()));
    }
    Ok((params, file.vocab_digest))
}

/// Loads a checkpoint trained against the vocabulary with digest `vocab_digest`.
pub fn load_checkpoint(bytes: &[u8], vocab_digest: &str) -> Result<ModelParams, ModelError> {
    let (params, digest) = read_checkpoint(bytes)?;
    if digest != vocab_digest {
        return Err(ModelError::DigestMismatch { expected: vocab_digest.to_string(), found: digest });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::super::Architecture;
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for bidirectional in [false, true] {
            let arch = Architecture { input_dim: 9, hidden1: 5, hidden2: 3, bidirectional, dropout_rate: 0.4 };
            let p = ModelParams::init(&arch, 17);
            let bytes = save_checkpoint(&p, "abc");
            assert_eq!(load_checkpoint(&bytes, "abc").unwrap(), p);
        }
    }

    #[test]
    fn tampering_is_detected() {
        let p = ModelParams::init(&Architecture::new(6), 1);
        let bytes = save_checkpoint(&p, "vocab-a");
        assert!(matches!(load_checkpoint(&bytes, "vocab-b"), Err(ModelError::DigestMismatch { .. })));

        let mut json: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        json["lstm2"]["hidden"] = 9.into();
        let tampered = serde_json::to_vec(&json).unwrap();
        assert!(matches!(load_checkpoint(&tampered, "vocab-a"), Err(ModelError::DimensionMismatch(_))));

        let mut json: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        json["version"] = 2.into();
        let future = serde_json::to_vec(&json).unwrap();
        assert!(matches!(load_checkpoint(&future, "vocab-a"), Err(ModelError::VersionMismatch { found: 2, .. })));

        assert!(matches!(load_checkpoint(b"{not json", "vocab-a"), Err(ModelError::CorruptCheckpoint(_))));
        assert!(matches!(load_checkpoint(&bytes[..bytes.len() / 2], "vocab-a"), Err(ModelError::CorruptCheckpoint(_))));
    }
}
