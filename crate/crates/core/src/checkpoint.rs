//! Checkpoint container.
//!
//! Layout: the 8-byte magic `TREECOMP`, the manifest length as a
//! little-endian `u64`, the JSON manifest, then every tensor as little-endian
//! `f64` values in row-major order. The manifest's tensor directory records
//! each tensor's name, shape and byte offset from the start of the data
//! section. Optimizer accumulators are stored under `adagrad/<name>` and the
//! running parameters of an unfinished run under `current/<name>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::corpus::{Vocab, VocabHashes};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::optimizer::Adagrad;
use crate::params::{Dims, ModelParams, Mode};
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 8] = b"TREECOMP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: TrainingConfig,
    pub mode: Mode,
    pub dims: Dims,
    pub vocab_hashes: VocabHashes,
    pub vocab: serde_json::Value,
    pub progress: Progress,
    pub tensors: Vec<TensorEntry>,
}

/// The selected model, plus the optimizer and running parameters when the
/// checkpoint is meant for resuming.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    pub progress: Progress,
    pub resume: Option<ResumeState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    pub current: ModelParams,
    pub optimizer: Adagrad,
}

impl Checkpoint {
    /// A model-only checkpoint holding the best parameters of `state`.
    pub fn best_of(config: &TrainingConfig, vocab: &Vocab, state: &TrainState) -> Self {
        Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            params: state.best.clone(),
            progress: progress_of(state),
            resume: None,
        }
    }

    /// A checkpoint that restores `state` exactly.
    pub fn resumable(config: &TrainingConfig, vocab: &Vocab, state: &TrainState) -> Self {
        Checkpoint {
            resume: Some(ResumeState { current: state.params.clone(), optimizer: state.optimizer.clone() }),
            ..Checkpoint::best_of(config, vocab, state)
        }
    }

    pub fn into_train_state(self) -> Result<TrainState> {
        let r = self
            .resume
            .ok_or_else(|| Error::State("checkpoint carries no optimizer state".into()))?;
        Ok(TrainState {
            params: r.current,
            optimizer: r.optimizer,
            epoch: self.progress.epoch,
            best: self.params,
            best_epoch: self.progress.best_epoch,
            best_dev_accuracy: self.progress.best_dev_accuracy,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut all: Vec<(String, &Matrix)> = self.params.all();
        if let Some(r) = &self.resume {
            all.extend(r.current.all().into_iter().map(|(n, m)| (format!("current/{n}"), m)));
            all.extend(r.optimizer.accum.all().into_iter().map(|(n, m)| (format!("adagrad/{n}"), m)));
        }
        let mut tensors = Vec::with_capacity(all.len());
        let mut offset = 0u64;
        for (name, m) in &all {
            tensors.push(TensorEntry { name: name.clone(), shape: [m.rows(), m.cols()], offset });
            offset += 8 * m.len() as u64;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            mode: self.params.mode,
            dims: self.params.dims,
            vocab_hashes: self.vocab.hashes(),
            vocab: self.vocab.to_value(),
            progress: self.progress,
            tensors,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &all {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::data(format!("bad checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing TREECOMP header"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len.min(bytes.len())).filter(|j| j.len() == len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| bad(&format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {}", manifest.format_version)));
        }
        manifest.config.validate()?;
        let vocab = Vocab::from_value(manifest.vocab.clone())?;
        if vocab.hashes() != manifest.vocab_hashes {
            return Err(bad("vocabulary does not match its recorded hashes"));
        }
        let data = &bytes[16 + len..];
        let mut expected_end = 0u64;
        let mut read = |entry: &TensorEntry| -> Result<Matrix> {
            let start = entry.offset as usize;
            let end = entry.shape[0]
                .checked_mul(entry.shape[1])
                .and_then(|n| n.checked_mul(8))
                .and_then(|n| n.checked_add(start))
                .filter(|&e| entry.offset == expected_end && e <= data.len())
                .ok_or_else(|| bad(&format!("tensor {} lies outside the data section", entry.name)))?;
            if end > data.len() {
                return Err(bad(&format!("tensor {} lies outside the data section", entry.name)));
            }
            expected_end = end as u64;
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Matrix::from_vec(entry.shape[0], entry.shape[1], values)
        };
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            tensors.push((e.name.clone(), read(e)?));
        }
        if expected_end as usize != data.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        let fill = |prefix: &str| -> Result<Option<ModelParams>> {
            let mut p = ModelParams::zeros(manifest.mode, manifest.dims);
            let mut found = 0;
            for (name, m) in p.all_mut() {
                let key = format!("{prefix}{name}");
                match tensors.iter().find(|(n, _)| *n == key) {
                    Some((_, t)) if t.shape() == m.shape() => {
                        *m = t.clone();
                        found += 1;
                    }
                    Some(_) => return Err(bad(&format!("tensor {key} has the wrong shape"))),
                    None if found == 0 && !prefix.is_empty() => return Ok(None),
                    None => return Err(bad(&format!("tensor {key} is missing"))),
                }
            }
            Ok(Some(p))
        };
        let params = fill("")?.expect("model tensors present");
        params.check_finite()?;
        let resume = match (fill("current/")?, fill("adagrad/")?) {
            (Some(current), Some(accum)) => Some(ResumeState {
                current,
                optimizer: Adagrad { lr: manifest.config.learning_rate, eps: crate::optimizer::EPSILON, accum },
            }),
            (None, None) => None,
            _ => return Err(bad("incomplete resume state")),
        };
        let expected = params.all().len() * if resume.is_some() { 3 } else { 1 };
        if tensors.len() != expected {
            return Err(bad("unexpected tensors in directory"));
        }
        if vocab.word_count() != manifest.dims.vocab || vocab.labels().len() != manifest.dims.labels {
            return Err(bad("vocabulary sizes do not match the model"));
        }
        Ok(Checkpoint { config: manifest.config, vocab, params, progress: manifest.progress, resume })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn progress_of(state: &TrainState) -> Progress {
    Progress { epoch: state.epoch, best_epoch: state.best_epoch, best_dev_accuracy: state.best_dev_accuracy }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, Split};
    use crate::treebank::{normalize, parse_ptb};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(mode: Mode) -> (TrainingConfig, Vocab, TrainState) {
        let t = normalize(vec![parse_ptb("(S (NP (DT the) (NN dog)) (VP (VBD ran)))").unwrap()]).unwrap();
        let inst = Instance { id: None, arg1: t.clone(), arg2: t, labels: [1].into(), split: Split::Train };
        let labels = crate::corpus::Level::One.label_names();
        let vocab = Vocab::build([&inst], labels);
        let cfg = TrainingConfig { word_dim: 3, tag_dim: 2, hidden_dim: 4, mode, ..Default::default() };
        let dims = Dims { word: 3, tag: 2, hidden: 4, vocab: vocab.word_count(), tags: vocab.tag_count(), labels: 4 };
        let p = ModelParams::random(mode, dims, &mut ChaCha8Rng::seed_from_u64(1));
        let mut s = TrainState::new(p, &cfg).unwrap();
        s.params.classifier.b.as_mut_slice()[0] = 0.5;
        s.optimizer.accum.words.as_mut_slice()[4] = 2.5;
        s.epoch = 3;
        s.best_epoch = 2;
        s.best_dev_accuracy = Some(0.75);
        (cfg, vocab, s)
    }

    #[test]
    fn model_round_trip() {
        for mode in Mode::ALL {
            let (cfg, vocab, s) = fixture(mode);
            let c = Checkpoint::best_of(&cfg, &vocab, &s);
            let bytes = c.to_bytes();
            assert_eq!(&bytes[..8], MAGIC);
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
            assert!(back.into_train_state().is_err());
        }
    }

    #[test]
    fn resume_round_trip() {
        let (cfg, vocab, s) = fixture(Mode::TagTreeGru);
        let c = Checkpoint::resumable(&cfg, &vocab, &s);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.into_train_state().unwrap(), s);
    }

    #[test]
    fn manifest_directory_is_consistent() {
        let (cfg, vocab, s) = fixture(Mode::TreeLstm);
        let bytes = Checkpoint::best_of(&cfg, &vocab, &s).to_bytes();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let m: Manifest = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        let total: usize = m.tensors.iter().map(|t| 8 * t.shape[0] * t.shape[1]).sum();
        assert_eq!(bytes.len(), 16 + len + total);
        assert_eq!(m.tensors[0].name, "embed.words");
        assert_eq!(m.vocab_hashes, vocab.hashes());
    }

    #[test]
    fn corrupt_inputs_are_data_errors() {
        let (cfg, vocab, s) = fixture(Mode::Bilstm);
        let bytes = Checkpoint::best_of(&cfg, &vocab, &s).to_bytes();
        for bad in [&b"NOTACKPT"[..], &bytes[..bytes.len() - 1], &bytes[..20]] {
            assert!(matches!(Checkpoint::from_bytes(bad), Err(Error::Data { .. })));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn save_and_load() {
        let (cfg, vocab, s) = fixture(Mode::Bigru);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = Checkpoint::resumable(&cfg, &vocab, &s);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(matches!(Checkpoint::load(&dir.path().join("none")), Err(Error::Io { .. })));
    }
}
