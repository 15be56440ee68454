//! Model persistence.
//!
//! Checkpoints are JSON with every 64-bit parameter stored as its raw bit
//! pattern in hex, so a save/load round trip is exact; decimal formatting
//! would not guarantee that. The schema version is checked on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelBundle, Variant};
use crate::nn::{Activation, Layer, LayerSpec, ParameterSet};

pub const SCHEMA_VERSION: u32 = 1;

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_trained: usize,
    pub stage: String,
    /// Echo of the configuration the bundle was trained with.
    pub config: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    input_dim: usize,
    output_dim: usize,
    activation: String,
    weights: Vec<String>,
    biases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    variant: String,
    encoder: Vec<LayerDoc>,
    decoder: Vec<LayerDoc>,
    classifier: Vec<LayerDoc>,
    side_predictor: Vec<LayerDoc>,
    subject_predictor: Vec<LayerDoc>,
    meta: TrainMeta,
}

fn encode_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn decode_f64(s: &str, path: &Path) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Format {
            path: path.display().to_string(),
            message: format!("bad parameter encoding `{s}`"),
        })
}

fn encode_net(net: &ParameterSet) -> Vec<LayerDoc> {
    net.layers
        .iter()
        .map(|l| LayerDoc {
            name: l.name.clone(),
            input_dim: l.spec.input_dim,
            output_dim: l.spec.output_dim,
            activation: l.spec.activation.as_str().to_string(),
            weights: l.weights.iter().map(|&w| encode_f64(w)).collect(),
            biases: l.biases.iter().map(|&b| encode_f64(b)).collect(),
        })
        .collect()
}

fn decode_net(docs: &[LayerDoc], path: &Path) -> Result<ParameterSet> {
    let mut layers = Vec::with_capacity(docs.len());
    for doc in docs {
        let activation = Activation::parse(&doc.activation).ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            message: format!("unknown activation `{}`", doc.activation),
        })?;
        if doc.weights.len() != doc.input_dim * doc.output_dim || doc.biases.len() != doc.output_dim {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("layer `{}` payload does not match its dims", doc.name),
            });
        }
        layers.push(Layer {
            name: doc.name.clone(),
            spec: LayerSpec::new(doc.input_dim, doc.output_dim, activation),
            weights: doc.weights.iter().map(|s| decode_f64(s, path)).collect::<Result<_>>()?,
            biases: doc.biases.iter().map(|s| decode_f64(s, path)).collect::<Result<_>>()?,
        });
    }
    Ok(ParameterSet { layers })
}

/// Persist a bundle. The written file is a pure function of the bundle and
/// metadata, so re-saving a loaded checkpoint reproduces the bytes.
pub fn save_checkpoint(bundle: &ModelBundle, meta: &TrainMeta, path: &Path) -> Result<()> {
    let doc = CheckpointDoc {
        schema_version: SCHEMA_VERSION,
        variant: bundle.variant.as_str().to_string(),
        encoder: encode_net(&bundle.encoder),
        decoder: encode_net(&bundle.decoder),
        classifier: encode_net(&bundle.classifier),
        side_predictor: encode_net(&bundle.side_predictor),
        subject_predictor: encode_net(&bundle.subject_predictor),
        meta: meta.clone(),
    };
    let json = serde_json::to_string_pretty(&doc).expect("checkpoint serialization cannot fail");
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a bundle and its metadata, verifying the schema version.
pub fn load_checkpoint(path: &Path) -> Result<(ModelBundle, TrainMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: CheckpointDoc = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            found: doc.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let variant = Variant::parse(&doc.variant).ok_or_else(|| Error::Format {
        path: path.display().to_string(),
        message: format!("unknown variant `{}`", doc.variant),
    })?;
    let bundle = ModelBundle {
        encoder: decode_net(&doc.encoder, path)?,
        decoder: decode_net(&doc.decoder, path)?,
        classifier: decode_net(&doc.classifier, path)?,
        side_predictor: decode_net(&doc.side_predictor, path)?,
        subject_predictor: decode_net(&doc.subject_predictor, path)?,
        variant,
    };
    Ok((bundle, doc.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::fs;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("smeta-checkpoint-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn bundle(seed: u64) -> ModelBundle {
        let cfg = ModelConfig {
            input_dim: 17,
            encoder_hidden: 9,
            latent_dim: 6,
            subject_hidden: 4,
            variant: Variant::Sae,
        };
        ModelBundle::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = bundle(42);
        let meta = TrainMeta {
            seed: 42,
            epochs_trained: 7,
            stage: "pretrain".into(),
            config: BTreeMap::from([("lr".to_string(), "0.001".to_string())]),
        };
        let path = tmp("roundtrip.json");
        save_checkpoint(&b, &meta, &path).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, b);
        assert_eq!(loaded_meta, meta);

        // Max |delta| over parameters is exactly zero.
        for (a, l) in b.encoder.layers.iter().zip(&loaded.encoder.layers) {
            for (x, y) in a.weights.iter().zip(&l.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let b = bundle(7);
        let meta = TrainMeta::default();
        let p1 = tmp("first.json");
        let p2 = tmp("second.json");
        save_checkpoint(&b, &meta, &p1).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &loaded_meta, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn schema_bump_is_rejected() {
        let b = bundle(3);
        let path = tmp("schema.json");
        save_checkpoint(&b, &TrainMeta::default(), &path).unwrap();
        let bumped = fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        fs::write(&path, bumped).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::SchemaMismatch { found: 2, supported: 1 }
        ));
    }

    #[test]
    fn subnormal_and_negative_zero_survive() {
        let mut b = bundle(5);
        b.encoder.layers[0].weights[0] = -0.0;
        b.encoder.layers[0].weights[1] = f64::MIN_POSITIVE / 2.0;
        b.encoder.layers[0].weights[2] = -1.234567890123456e-300;
        let path = tmp("edge.json");
        save_checkpoint(&b, &TrainMeta::default(), &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        for (x, y) in b.encoder.layers[0].weights.iter().zip(&loaded.encoder.layers[0].weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
