//! Convolutional VQ-VAE over two-hand pose sequences.
//!
//! Two stride-2 convolutions shrink time by four; each latent step is
//! snapped to the nearest of `K` codewords; the decoder mirrors the encoder
//! with nearest-neighbour upsampling followed by convolutions.

mod quantize;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{MotionSequence, POSE_DIM};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use quantize::{nearest, nearest_all, quantize, QuantizationResult};
pub use train::{train_vqvae, vqvae_loss, EpochLog, LossParts, VqVaeTrainLog};

const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    /// Codebook size `K`.
    pub codebook_size: usize,
    /// Codeword dimension `D_c`.
    pub code_dim: usize,
    /// Temporal downsample factor `l`; fixed by the two stride-2 stages.
    pub downsample: usize,
    pub hidden_channels: usize,
    /// Smooth-L1 threshold.
    pub beta: f64,
    /// Commitment weight.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training windows are random crops of this many frames (a multiple of
    /// `downsample`); `0` trains on whole sequences one at a time.
    pub crop_frames: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        VqVaeConfig {
            codebook_size: 64,
            code_dim: 32,
            downsample: 4,
            hidden_channels: 128,
            beta: 1.0,
            gamma: 0.25,
            epochs: 200,
            batch_size: 16,
            crop_frames: 48,
            seed: 0,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                cosine_decay: true,
                ..AdamConfig::default()
            },
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.downsample != 4 {
            return fail(format!(
                "downsample must be 4 (two stride-2 stages), got {}",
                self.downsample
            ));
        }
        if self.codebook_size < 2 || self.code_dim == 0 || self.hidden_channels == 0 {
            return fail("need codebook_size >= 2, code_dim >= 1, hidden_channels >= 1".into());
        }
        if !(self.gamma > 0.0) || !(self.beta > 0.0) {
            return fail(format!("gamma and beta must be > 0 (got {}, {})", self.gamma, self.beta));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.crop_frames % self.downsample != 0 {
            return fail(format!(
                "crop_frames {} is not a multiple of {}",
                self.crop_frames, self.downsample
            ));
        }
        Ok(())
    }
}

/// Affine input normalisation: per-channel mean pose, per-axis scale pooled
/// over joints.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: [f64; 3],
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: vec![0.0; POSE_DIM],
            std: [1.0; 3],
        }
    }

    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self> {
        let seqs: Vec<&MotionSequence> = seqs.into_iter().collect();
        let frames: usize = seqs.iter().map(|s| s.len()).sum();
        if frames == 0 {
            return Err(Error::Parameter("cannot fit normalisation to no frames".into()));
        }
        let mut mean = vec![0.0; POSE_DIM];
        for s in &seqs {
            for f in s.as_slice().chunks_exact(POSE_DIM) {
                for (m, v) in mean.iter_mut().zip(f) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= frames as f64);
        let mut var = [0.0; 3];
        for s in &seqs {
            for f in s.as_slice().chunks_exact(POSE_DIM) {
                for (c, v) in f.iter().enumerate() {
                    var[c % 3] += (v - mean[c]).powi(2);
                }
            }
        }
        let n = (frames * POSE_DIM / 3) as f64;
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-9 {
                s
            } else {
                1.0
            }
        });
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, frames: &[f64]) -> Vec<f64> {
        frames
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % POSE_DIM]) / self.std[i % 3])
            .collect()
    }

    pub fn invert(&self, frames: &[f64]) -> Vec<f64> {
        frames
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % 3] + self.mean[i % POSE_DIM])
            .collect()
    }

    /// `[mean (126), std (3)]` as tensors for checkpoints.
    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        (
            Tensor::new(&[POSE_DIM], self.mean.clone()).expect("mean shape"),
            Tensor::new(&[3], self.std.to_vec()).expect("std shape"),
        )
    }

    pub fn from_tensors(mean: &Tensor, std: &Tensor) -> Result<Self> {
        if mean.shape() != [POSE_DIM] || std.shape() != [3] {
            return Err(Error::Incompatible("normalisation tensor shapes".into()));
        }
        let s = std.data();
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Incompatible("normalisation scale must be positive".into()));
        }
        Ok(Normalizer {
            mean: mean.data().to_vec(),
            std: [s[0], s[1], s[2]],
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    enc: [Conv; 3],
    dec: [Conv; 3],
    codebook: ParamId,
}

/// Encoder output of one sequence, before quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    /// `[T_d, D_c]`.
    pub latents: Tensor,
    /// Frames appended (copies of the last frame) to reach a multiple of `l`.
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct VqVae {
    config: VqVaeConfig,
    params: ParamStore,
    layout: Layout,
    pub normalizer: Normalizer,
}

fn conv_param(store: &mut ParamStore, name: &str, c_out: usize, c_in: usize, gain: f64, rng: &mut Rng) -> Conv {
    let std = (gain / (c_in * KERNEL) as f64).sqrt();
    Conv {
        w: store.add(format!("{}.weight", name), Tensor::randn(&[c_out, c_in, KERNEL], std, rng)),
        b: store.add(format!("{}.bias", name), Tensor::zeros(&[c_out])),
    }
}

impl VqVae {
    pub fn new(config: VqVaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (h, d) = (config.hidden_channels, config.code_dim);
        let mut p = ParamStore::new();
        let enc = [
            conv_param(&mut p, "encoder.conv0", h, POSE_DIM, 2.0, rng),
            conv_param(&mut p, "encoder.conv1", h, h, 2.0, rng),
            conv_param(&mut p, "encoder.conv2", d, h, 1.0, rng),
        ];
        let dec = [
            conv_param(&mut p, "decoder.conv0", h, d, 2.0, rng),
            conv_param(&mut p, "decoder.conv1", h, h, 2.0, rng),
            conv_param(&mut p, "decoder.conv2", POSE_DIM, h, 1.0, rng),
        ];
        let codebook = p.add("codebook", Tensor::randn(&[config.codebook_size, d], 0.5, rng));
        Ok(VqVae {
            config,
            params: p,
            layout: Layout { enc, dec, codebook },
            normalizer: Normalizer::identity(),
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn codebook(&self) -> &Tensor {
        self.params.get(self.layout.codebook)
    }

    pub fn codebook_id(&self) -> ParamId {
        self.layout.codebook
    }

    pub fn downsample(&self) -> usize {
        self.config.downsample
    }

    pub fn code_dim(&self) -> usize {
        self.config.code_dim
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    /// Encoder graph for `x: [B, T, 126]` (normalised) -> `[B, T/4, D_c]`.
    pub fn encoder(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let e = &self.layout.enc;
        let mut h = tape.conv1d(x, bound.var(e[0].w), Some(bound.var(e[0].b)), 2, 1)?;
        h = tape.relu(h)?;
        h = tape.conv1d(h, bound.var(e[1].w), Some(bound.var(e[1].b)), 2, 1)?;
        h = tape.relu(h)?;
        tape.conv1d(h, bound.var(e[2].w), Some(bound.var(e[2].b)), 1, 1)
    }

    /// Decoder graph for `z: [B, T_d, D_c]` -> `[B, 4 T_d, 126]` (normalised).
    pub fn decoder(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let d = &self.layout.dec;
        let mut h = tape.conv1d(z, bound.var(d[0].w), Some(bound.var(d[0].b)), 1, 1)?;
        h = tape.relu(h)?;
        h = tape.nn_upsample(h, 2)?;
        h = tape.conv1d(h, bound.var(d[1].w), Some(bound.var(d[1].b)), 1, 1)?;
        h = tape.relu(h)?;
        h = tape.nn_upsample(h, 2)?;
        tape.conv1d(h, bound.var(d[2].w), Some(bound.var(d[2].b)), 1, 1)
    }

    /// Frames padded to a multiple of `l` by repeating the last frame.
    fn padded_frames(&self, seq: &MotionSequence) -> Result<(Vec<f64>, usize)> {
        let l = self.config.downsample;
        if seq.len() < l {
            return Err(Error::SequenceTooShort { len: seq.len(), min: l });
        }
        let padding = (l - seq.len() % l) % l;
        let mut frames = seq.as_slice().to_vec();
        let last = seq.frame(seq.len() - 1).to_vec();
        for _ in 0..padding {
            frames.extend_from_slice(&last);
        }
        Ok((frames, padding))
    }

    pub fn encode(&self, seq: &MotionSequence) -> Result<Encoded> {
        let (frames, padding) = self.padded_frames(seq)?;
        let t = frames.len() / POSE_DIM;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(&[1, t, POSE_DIM], self.normalizer.apply(&frames))?);
        let e = self.encoder(&mut tape, &bound, x)?;
        let latents = tape.value(e).clone().reshape(&[t / self.config.downsample, self.config.code_dim])?;
        Ok(Encoded { latents, padding })
    }

    pub fn quantize(&self, latents: &Tensor) -> Result<QuantizationResult> {
        quantize(latents, self.codebook())
    }

    /// Token indices of a sequence.
    pub fn tokenize(&self, seq: &MotionSequence) -> Result<Vec<usize>> {
        Ok(self.quantize(&self.encode(seq)?.latents)?.indices)
    }

    /// Decode `[T_d, D_c]` embeddings to `4 T_d` frames in world units.
    pub fn decode(&self, embeddings: &Tensor, fps: u32) -> Result<MotionSequence> {
        if embeddings.rank() != 2 || embeddings.shape()[1] != self.config.code_dim || embeddings.shape()[0] == 0 {
            return Err(Error::dim(format!(
                "decode expects [T_d, {}] embeddings, got {:?}",
                self.config.code_dim,
                embeddings.shape()
            )));
        }
        let td = embeddings.shape()[0];
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let z = tape.constant(embeddings.clone().reshape(&[1, td, self.config.code_dim])?);
        let y = self.decoder(&mut tape, &bound, z)?;
        MotionSequence::new(self.normalizer.invert(tape.value(y).data()), fps)
    }

    pub fn decode_indices(&self, indices: &[usize], fps: u32) -> Result<MotionSequence> {
        let k = self.config.codebook_size;
        let mut q = Vec::with_capacity(indices.len() * self.config.code_dim);
        for &i in indices {
            if i >= k {
                return Err(Error::Index { index: i, size: k });
            }
            q.extend_from_slice(self.codebook().row(i));
        }
        self.decode(&Tensor::new(&[indices.len(), self.config.code_dim], q)?, fps)
    }

    /// encode -> quantize -> decode, trimmed back to the input length.
    pub fn reconstruct(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        let enc = self.encode(seq)?;
        let q = self.quantize(&enc.latents)?;
        let out = self.decode(&q.embeddings, seq.fps)?;
        Ok(out.prefix(seq.len()))
    }

    /// Named tensors including the normalisation statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let (m, s) = self.normalizer.to_tensors();
        out.push(("norm.mean".into(), m));
        out.push(("norm.std".into(), s));
        out
    }

    /// Rebuild from a config and named tensors.
    pub fn from_named_tensors(config: VqVaeConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut rng = crate::rng::stream(0, &[]);
        let mut model = VqVae::new(config, &mut rng)?;
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Incompatible(format!("missing tensor {}", name)))
        };
        model.normalizer = Normalizer::from_tensors(find("norm.mean")?, find("norm.std")?)?;
        model
            .params
            .load(tensors.iter().filter(|(n, _)| !n.starts_with("norm.")).map(|(n, t)| (n.as_str(), t)))?;
        Ok(model)
    }
}
