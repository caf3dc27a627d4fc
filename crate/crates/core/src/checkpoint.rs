//! Binary checkpoints: magic, version, config echo, training log and a table
//! of named f64 tensors.
//!
//! Layout, all integers little-endian:
//! `"GZMV" | u32 version | u64 len, config JSON | u64 len, log JSON |
//! u32 count | count x (u32 len, name | u32 rank | rank x u64 dim | f64 data)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, GeneratorTrainLog, Predictor};
use crate::vqvae::{VqVae, VqVaeConfig, VqVaeTrainLog};

pub const MAGIC: &[u8; 4] = b"GZMV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    pub log: Value,
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Incompatible(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, wide: bool) -> Result<usize> {
        let n = if wide { self.u64()? } else { u64::from(self.u32()?) };
        usize::try_from(n).map_err(|_| Error::Incompatible(format!("length {} does not fit in memory", n)))
    }

    fn json(&mut self) -> Result<Value> {
        let n = self.len(true)?;
        Ok(serde_json::from_slice(self.take(n)?)?)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [&self.config, &self.log] {
            let text = serde_json::to_vec(v)?;
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(&text);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Incompatible("not a checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint version {} (supported: {})",
                version, CHECKPOINT_VERSION
            )));
        }
        let config = r.json()?;
        let log = r.json()?;
        let count = r.len(false)?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.len(false)?;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Incompatible("tensor name is not UTF-8".into()))?;
            let rank = r.len(false)?;
            let shape = (0..rank).map(|_| r.len(true)).collect::<Result<Vec<usize>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Incompatible(format!("tensor {} has an impossible shape {:?}", name, shape)))?;
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Incompatible(format!(
                "{} trailing bytes after the tensor table",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { config, log, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn kind(&self) -> Option<&str> {
        self.config.get("kind").and_then(Value::as_str)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEcho {
    kind: String,
    vqvae: VqVaeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorConfig>,
}

fn prefixed(prefix: &str, tensors: Vec<(String, Tensor)>) -> impl Iterator<Item = (String, Tensor)> + '_ {
    tensors.into_iter().map(move |(n, t)| (format!("{}{}", prefix, n), t))
}

fn strip(prefix: &str, tensors: &[(String, Tensor)]) -> Vec<(String, Tensor)> {
    tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
        .collect()
}

fn echo(ck: &Checkpoint) -> Result<ConfigEcho> {
    serde_json::from_value(ck.config.clone()).map_err(|e| Error::Incompatible(format!("checkpoint config: {}", e)))
}

pub fn vqvae_checkpoint(vqvae: &VqVae, log: &VqVaeTrainLog) -> Result<Checkpoint> {
    let config = ConfigEcho {
        kind: "vqvae".into(),
        vqvae: vqvae.config().clone(),
        generator: None,
    };
    Ok(Checkpoint {
        config: serde_json::to_value(config)?,
        log: serde_json::json!({ "vqvae": log }),
        tensors: prefixed("vqvae.", vqvae.named_tensors()).collect(),
    })
}

/// The VQ-VAE stored in a VQ-VAE or predictor checkpoint.
pub fn load_vqvae(ck: &Checkpoint) -> Result<VqVae> {
    let e = echo(ck)?;
    VqVae::from_named_tensors(e.vqvae, &strip("vqvae.", &ck.tensors))
}

/// A predictor checkpoint holds the frozen VQ-VAE and the generator.
pub fn predictor_checkpoint(
    predictor: &Predictor,
    vqvae_log: &Value,
    generator_log: &GeneratorTrainLog,
) -> Result<Checkpoint> {
    let config = ConfigEcho {
        kind: "predictor".into(),
        vqvae: predictor.vqvae.config().clone(),
        generator: Some(predictor.generator.config().clone()),
    };
    let mut tensors: Vec<(String, Tensor)> = prefixed("vqvae.", predictor.vqvae.named_tensors()).collect();
    tensors.extend(prefixed("generator.", predictor.generator.named_tensors()));
    Ok(Checkpoint {
        config: serde_json::to_value(config)?,
        log: serde_json::json!({ "vqvae": vqvae_log, "generator": generator_log }),
        tensors,
    })
}

pub fn load_predictor(ck: &Checkpoint) -> Result<Predictor> {
    if ck.kind() != Some("predictor") {
        return Err(Error::Incompatible(format!(
            "expected a predictor checkpoint, found {:?}",
            ck.kind().unwrap_or("unknown")
        )));
    }
    let e = echo(ck)?;
    let generator_config = e
        .generator
        .ok_or_else(|| Error::Incompatible("predictor checkpoint without generator config".into()))?;
    let vqvae = VqVae::from_named_tensors(e.vqvae, &strip("vqvae.", &ck.tensors))?;
    let generator = Generator::from_named_tensors(
        generator_config,
        vqvae.codebook().clone(),
        &strip("generator.", &ck.tensors),
    )?;
    Ok(Predictor { vqvae, generator })
}
