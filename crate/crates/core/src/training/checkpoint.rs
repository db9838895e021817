//! Binary checkpoint container: magic bytes, a JSON metadata block, then raw
//! little-endian f64 tensor payloads in parameter registration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Cohort, Vocabulary};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

use super::{EpochLog, PretrainConfig, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"I2V1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model frozen to disk: architecture, vocabulary, training log,
/// and every parameter tensor. Save → load → save is byte-identical.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub train_config: PretrainConfig,
    pub vocabulary: Vocabulary,
    pub vocab_digest: String,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// `(name, tensor)` in parameter registration order.
    tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    model_config: ModelConfig,
    train_config: PretrainConfig,
    vocabulary: Vocabulary,
    vocab_digest: String,
    best_epoch: usize,
    log: Vec<EpochLog>,
    params: Vec<ParamMeta>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        train_config: &PretrainConfig,
        log: Vec<EpochLog>,
        best_epoch: usize,
    ) -> Checkpoint {
        let tensors = model
            .store
            .iter()
            .map(|(_, name, tensor)| (name.to_string(), tensor.clone()))
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_config: model.config,
            train_config: *train_config,
            vocabulary: model.vocabulary.clone(),
            vocab_digest: model.vocabulary.digest(),
            best_epoch,
            log,
            tensors,
        }
    }

    /// Rebuilds a live model carrying exactly the stored parameters.
    pub fn to_model(&self) -> Result<Model, TrainError> {
        let mut model = Model::new(
            self.model_config,
            self.train_config.ablation,
            self.vocabulary.clone(),
            0,
        )?;
        if model.store.len() != self.tensors.len() {
            return Err(TrainError::Corrupt(format!(
                "expected {} parameters, checkpoint holds {}",
                model.store.len(),
                self.tensors.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, (name, tensor)) in ids.into_iter().zip(&self.tensors) {
            if model.store.name(id) != name {
                return Err(TrainError::Corrupt(format!(
                    "parameter order mismatch: expected {}, found {name}",
                    model.store.name(id)
                )));
            }
            model
                .store
                .set(id, tensor.clone())
                .map_err(|e| TrainError::Corrupt(format!("parameter {name}: {e}")))?;
        }
        Ok(model)
    }

    /// Errors unless the cohort was built with the checkpoint's vocabulary.
    pub fn ensure_matches(&self, cohort: &Cohort) -> Result<(), TrainError> {
        let cohort_digest = cohort.vocabulary.digest();
        if cohort_digest != self.vocab_digest {
            return Err(TrainError::DigestMismatch {
                checkpoint: self.vocab_digest.clone(),
                cohort: cohort_digest,
            });
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(name, tensor)| (name.as_str(), tensor))
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), TrainError> {
    let meta = CheckpointMeta {
        format_version: checkpoint.format_version,
        model_config: checkpoint.model_config,
        train_config: checkpoint.train_config,
        vocabulary: checkpoint.vocabulary.clone(),
        vocab_digest: checkpoint.vocab_digest.clone(),
        best_epoch: checkpoint.best_epoch,
        log: checkpoint.log.clone(),
        params: checkpoint
            .tensors
            .iter()
            .map(|(name, tensor)| ParamMeta { name: name.clone(), shape: tensor.shape().to_vec() })
            .collect(),
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let payload_len: usize = checkpoint.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(4 + 8 + meta_bytes.len() + payload_len);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    for (_, tensor) in &checkpoint.tensors {
        for value in tensor.data() {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(TrainError::BadMagic);
    }
    let meta_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let payload_start = 12 + meta_len;
    if bytes.len() < payload_start {
        return Err(TrainError::Corrupt("metadata block truncated".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[12..payload_start])?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(TrainError::BadVersion(meta.format_version));
    }
    if meta.vocabulary.digest() != meta.vocab_digest {
        return Err(TrainError::Corrupt(
            "embedded vocabulary does not hash to the stored digest".into(),
        ));
    }

    let expected: usize = meta.params.iter().map(|p| p.shape.iter().product::<usize>() * 8).sum();
    if bytes.len() - payload_start != expected {
        return Err(TrainError::Corrupt(format!(
            "payload holds {} bytes, shapes require {expected}",
            bytes.len() - payload_start
        )));
    }

    let mut offset = payload_start;
    let mut tensors = Vec::with_capacity(meta.params.len());
    for param in &meta.params {
        let numel: usize = param.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes")));
            offset += 8;
        }
        let tensor = Tensor::from_vec(&param.shape, data)
            .map_err(|e| TrainError::Corrupt(format!("tensor {}: {e}", param.name)))?;
        tensors.push((param.name.clone(), tensor));
    }

    Ok(Checkpoint {
        format_version: meta.format_version,
        model_config: meta.model_config,
        train_config: meta.train_config,
        vocabulary: meta.vocabulary,
        vocab_digest: meta.vocab_digest,
        best_epoch: meta.best_epoch,
        log: meta.log,
        tensors,
    })
}

/// Training log as CSV, one row per epoch.
pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut out = String::from("epoch,train_loss,valid_loss,mask_loss,next_loss\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.valid_loss, row.mask_loss, row.next_loss
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use crate::model::Ablation;
    use crate::training::{select_masks, total_loss, ForwardSettings};

    fn sample_checkpoint(seed: u64) -> (Cohort, Checkpoint) {
        let spec = SyntheticSpec::with_counts(25, 10, 2, 3, 1, seed);
        let (cohort, _) = generate_synthetic(&spec).unwrap();
        let config = ModelConfig {
            embed_dim: 8,
            n_heads: 2,
            n_layers: 1,
            ff_dim: 16,
            lstm_hidden: 4,
            init_std: 0.02,
        };
        let model = Model::new(config, Ablation::default(), cohort.vocabulary.clone(), seed)
            .unwrap();
        let log = vec![
            EpochLog { epoch: 0, train_loss: 5.5, valid_loss: 5.25, mask_loss: 2.5, next_loss: 2.75 },
            EpochLog { epoch: 1, train_loss: 4.0, valid_loss: 4.125, mask_loss: 2.0, next_loss: 2.125 },
        ];
        let checkpoint = Checkpoint::from_model(&model, &PretrainConfig::default(), log, 1);
        (cohort, checkpoint)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (_, checkpoint) = sample_checkpoint(1);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.i2v");
        let p2 = dir.path().join("b.i2v");
        save_checkpoint(&p1, &checkpoint).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn round_trip_preserves_losses_bit_exactly() {
        let (cohort, checkpoint) = sample_checkpoint(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.i2v");
        save_checkpoint(&path, &checkpoint).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        loaded.ensure_matches(&cohort).unwrap();

        let before = checkpoint.to_model().unwrap();
        let after = loaded.to_model().unwrap();
        let plan = select_masks(&cohort, 0.15, 3).unwrap();
        let indices: Vec<usize> = (0..cohort.visits.len()).collect();
        let a = total_loss(&before, &cohort, &indices, Some(&plan), ForwardSettings::plain(), 1);
        let b = total_loss(&after, &cohort, &indices, Some(&plan), ForwardSettings::plain(), 1);
        assert_eq!(a, b, "round trip must not perturb any metric");
    }

    #[test]
    fn to_model_restores_every_parameter() {
        let (_, checkpoint) = sample_checkpoint(3);
        let model = checkpoint.to_model().unwrap();
        assert_eq!(model.store.len(), checkpoint.tensors().count());
        for (id, name, tensor) in model.store.iter() {
            let _ = id;
            assert_eq!(checkpoint.tensor_by_name(name).unwrap().data(), tensor.data());
        }
    }

    #[test]
    fn bad_magic_and_bad_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.i2v");
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(TrainError::BadMagic)));

        let (_, mut checkpoint) = sample_checkpoint(4);
        checkpoint.format_version = 99;
        let vpath = dir.path().join("v99.i2v");
        save_checkpoint(&vpath, &checkpoint).unwrap();
        assert!(matches!(load_checkpoint(&vpath), Err(TrainError::BadVersion(99))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let (_, checkpoint) = sample_checkpoint(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.i2v");
        save_checkpoint(&path, &checkpoint).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(TrainError::Corrupt(_))));
    }

    #[test]
    fn digest_mismatch_against_a_different_cohort() {
        let (_, checkpoint) = sample_checkpoint(6);
        let other_spec = SyntheticSpec::with_counts(25, 11, 2, 3, 1, 99);
        let (other, _) = generate_synthetic(&other_spec).unwrap();
        assert!(matches!(
            checkpoint.ensure_matches(&other),
            Err(TrainError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn csv_log_has_header_and_one_row_per_epoch() {
        let (_, checkpoint) = sample_checkpoint(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log_csv(&path, &checkpoint.log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,valid_loss,mask_loss,next_loss");
        assert_eq!(lines.len(), 1 + checkpoint.log.len());
        assert_eq!(lines[1], "0,5.5,5.25,2.5,2.75");
    }
}
