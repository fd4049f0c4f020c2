//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u64` header
//! length, a JSON header (config, vocabulary, tensor manifest), then the raw
//! little-endian tensor payloads at the offsets given in the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"STRCTLAB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// Byte offset from the start of the payload section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    /// Optimizer step at which the checkpoint was written.
    pub step: u64,
    pub tensors: Vec<ManifestEntry>,
}

/// A model together with the vocabulary it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint<F: Real> {
    pub model: Model<F>,
    pub vocab: Vec<String>,
    pub step: u64,
}

impl<F: Real> Checkpoint<F> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.model.store.len());
        let mut payload = Vec::with_capacity(self.model.store.scalar_count() * F::DTYPE.size());
        for (name, t) in self.model.store.iter() {
            tensors.push(ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: F::DTYPE,
                offset: payload.len(),
            });
            for &x in t.data() {
                x.write_le(&mut payload);
            }
        }
        let header = Header {
            version: VERSION,
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Decodes a checkpoint, converting stored tensors to `F` when the
    /// stored precision differs.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split(bytes)?;
        if header.config.vocab_size != header.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "config declares {} tokens, vocabulary has {}",
                header.config.vocab_size,
                header.vocab.len()
            )));
        }
        let mut store = ParamStore::new();
        for e in &header.tensors {
            let count: usize = e.shape.iter().product();
            let size = e.dtype.size();
            let end = e.offset + count * size;
            let raw = payload
                .get(e.offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of the file", e.name)))?;
            let data: Vec<F> = match e.dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| F::c(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| F::c(f64::read_le(c))).collect(),
            };
            if store.find(&e.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", e.name)));
            }
            store.add(e.name.clone(), Tensor::new(&e.shape, data)?);
        }
        Ok(Checkpoint {
            model: Model::from_store(header.config, store)?,
            vocab: header.vocab,
            step: header.step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the header, e.g. to pick the precision before loading.
pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split(&bytes)?.0)
}

fn split(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(20..20 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json)?;
    Ok((header, &bytes[20 + len..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::model::Batch;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(attention: AttentionKind, precision: DType) -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            layers: 1,
            d_model: 4,
            heads: 2,
            d_ff: 8,
            parser_layers: 1,
            max_len: 8,
            attention,
            precision,
            ..ModelConfig::default()
        }
    }

    fn vocab() -> Vec<String> {
        ["<unk>", "<pad>", "<mask>", "a", "b", "c"].map(String::from).to_vec()
    }

    fn hidden<F: Real>(model: &Model<F>) -> Vec<F> {
        let mut tape = Tape::inference();
        let params = model.store.bind(&mut tape);
        let enc = model
            .forward(
                &mut tape,
                &params,
                &Batch::new(&[vec![3, 4, 5, 3]]),
                false,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        tape.value(enc.hidden).data().to_vec()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for attention in [AttentionKind::Dependency, AttentionKind::Softmax] {
            let a = Checkpoint {
                model: Model::<f64>::new(config(attention, DType::F64)).unwrap(),
                vocab: vocab(),
                step: 17,
            };
            let bytes = a.to_bytes().unwrap();
            let b = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
            assert_eq!(b.step, 17);
            assert_eq!(b.vocab, a.vocab);
            assert_eq!(b.model.config, a.model.config);
            assert_eq!(hidden(&a.model), hidden(&b.model));
            assert_eq!(b.to_bytes().unwrap(), bytes);

            let c = Checkpoint {
                model: a.model.cast::<f32>(),
                vocab: vocab(),
                step: 0,
            };
            let d = Checkpoint::<f32>::from_bytes(&c.to_bytes().unwrap()).unwrap();
            assert_eq!(hidden(&c.model), hidden(&d.model));
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let a = Checkpoint {
            model: Model::<f32>::new(config(AttentionKind::Dependency, DType::F32)).unwrap(),
            vocab: vocab(),
            step: 0,
        };
        let bytes = a.to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"garbage").is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(Checkpoint::<f32>::from_bytes(&wrong).is_err());
        let short = Checkpoint {
            vocab: vocab()[..5].to_vec(),
            ..a
        };
        assert!(Checkpoint::<f32>::from_bytes(&short.to_bytes().unwrap()).is_err());
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = Checkpoint {
            model: Model::<f32>::new(config(AttentionKind::Dependency, DType::F32)).unwrap(),
            vocab: vocab(),
            step: 3,
        };
        a.save(&path).unwrap();
        let header = read_header(&path).unwrap();
        assert_eq!(header.tensors.len(), a.model.store.len());
        assert!(header.tensors.iter().all(|e| e.dtype == DType::F32));
        let b = Checkpoint::<f32>::load(&path).unwrap();
        assert_eq!(hidden(&a.model), hidden(&b.model));
        assert!(matches!(Checkpoint::<f32>::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
