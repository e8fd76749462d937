//! Version-tagged JSON checkpoints: config header, vocabulary table and flat
//! parameter arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Params;
use super::{BlindTanConfig, BlindTanModel, Vocabulary, UNK_TOKEN};
use crate::error::{BlindTanError, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "blindtan-lite";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: BlindTanConfig,
    vocabulary: Vec<String>,
    params: Params,
}

pub fn to_checkpoint_json(model: &BlindTanModel) -> String {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        vocabulary: model.vocab().tokens().to_vec(),
        params: model.params().clone(),
    };
    serde_json::to_string(&ckpt).expect("checkpoint serializes")
}

pub fn parse_checkpoint(text: &str) -> Result<BlindTanModel, BlindTanError> {
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| BlindTanError::Checkpoint(e.to_string()))?;
    if ckpt.format != FORMAT {
        return Err(BlindTanError::Checkpoint(format!("unknown format `{}`", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(BlindTanError::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    let mut tokens = ckpt.vocabulary.into_iter();
    if tokens.next().as_deref() != Some(UNK_TOKEN) {
        return Err(BlindTanError::Checkpoint("vocabulary must start with the UNK token".into()));
    }
    BlindTanModel::from_parts(ckpt.config, Vocabulary::from_tokens(tokens), ckpt.params)
}

pub fn save_checkpoint(model: &BlindTanModel, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path, to_checkpoint_json(model).as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BlindTanModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_checkpoint(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = BlindTanConfig {
            map_size: 5,
            channels: 2,
            embed_dim: 3,
            kernel_size: 3,
            ..BlindTanConfig::default()
        };
        let model = BlindTanModel::init(config, Vocabulary::build(["a b c"], 10, 1)).unwrap();
        let back = parse_checkpoint(&to_checkpoint_json(&model)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_other_versions() {
        let config = BlindTanConfig {
            map_size: 4,
            channels: 1,
            embed_dim: 1,
            kernel_size: 1,
            ..BlindTanConfig::default()
        };
        let model = BlindTanModel::init(config, Vocabulary::build(["a"], 10, 1)).unwrap();
        let text = to_checkpoint_json(&model).replacen("\"version\":1", "\"version\":9", 1);
        assert!(parse_checkpoint(&text).is_err());
    }
}
