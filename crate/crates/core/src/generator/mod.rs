//! Causal transformer over VQ-VAE tokens, conditioned on gaze and objects.
//!
//! The input sequence is `[O', f_1, ..., f_n]`: an object token followed by
//! one fused hand-gaze feature per VQ-VAE token. Row `i` of the output
//! predicts token `s_{i+1}`.

mod rollout;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{GazeSequence, ObjectSet, MAX_OBJECTS, OBJECT_CODE_DIM};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use rollout::{argmax, generate, predict_next_index, Prediction, Predictor};
pub use train::{train_generator, GenEpochLog, GeneratorTrainLog, TrainingExample};

/// Width of the flattened object context: three objects of 12 floats.
pub const OBJECT_CONTEXT_DIM: usize = MAX_OBJECTS * OBJECT_CODE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Linear,
    Convolution,
    Summation,
}

impl Fusion {
    pub const ALL: [Fusion; 3] = [Fusion::Linear, Fusion::Convolution, Fusion::Summation];

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Linear => "linear",
            Fusion::Convolution => "convolution",
            Fusion::Summation => "summation",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fusion::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {:?}", s)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub fusion: Fusion,
    /// `false` removes the gaze branch entirely.
    pub gaze: bool,
    pub gaze_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest token sequence (object token excluded).
    pub max_tokens: usize,
    /// Loss weight of each sequence's final token.
    pub w_last: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            fusion: Fusion::Linear,
            gaze: true,
            gaze_dim: 16,
            model_dim: 64,
            layers: 2,
            heads: 4,
            max_tokens: 64,
            w_last: 2.0,
            epochs: 60,
            batch_size: 16,
            seed: 0,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                cosine_decay: true,
                clip_norm: Some(1.0),
                ..AdamConfig::default()
            },
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.gaze_dim == 0 || self.max_tokens == 0 || self.batch_size == 0 {
            return Err(Error::Config("gaze_dim, max_tokens and batch_size must be >= 1".into()));
        }
        if !(self.w_last > 0.0) {
            return Err(Error::Config(format!("w_last must be > 0, got {}", self.w_last)));
        }
        Ok(())
    }
}

/// Per-axis affine map for gaze points and object anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ContextNorm {
    pub fn identity() -> Self {
        ContextNorm {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn fit<'a>(gaze: impl IntoIterator<Item = &'a GazeSequence>) -> Result<Self> {
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut n = 0.0;
        for g in gaze {
            for p in &g.points {
                for a in 0..3 {
                    sum[a] += p[a];
                    sq[a] += p[a] * p[a];
                }
                n += 1.0;
            }
        }
        if n == 0.0 {
            return Err(Error::Parameter("cannot fit gaze normalisation to no points".into()));
        }
        let mean = sum.map(|s| s / n);
        let mut std = [1.0; 3];
        for a in 0..3 {
            let v = (sq[a] / n - mean[a] * mean[a]).max(0.0).sqrt();
            if v > 1e-9 {
                std[a] = v;
            }
        }
        Ok(ContextNorm { mean, std })
    }

    pub fn point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.mean[0]) / self.std[0],
            (p[1] - self.mean[1]) / self.std[1],
            (p[2] - self.mean[2]) / self.std[2],
        ]
    }

    /// Flattened object context; padding slots stay exactly zero.
    pub fn objects(&self, objects: &ObjectSet) -> Result<[f64; OBJECT_CONTEXT_DIM]> {
        if objects.len() > MAX_OBJECTS {
            return Err(Error::Config(format!(
                "{} objects in scene; at most {} supported",
                objects.len(),
                MAX_OBJECTS
            )));
        }
        let mut out = [0.0; OBJECT_CONTEXT_DIM];
        for (k, o) in objects.objects.iter().enumerate() {
            for (j, p) in o.points.iter().enumerate() {
                let q = self.point(*p);
                out[k * OBJECT_CODE_DIM + j * 3..][..3].copy_from_slice(&q);
            }
        }
        Ok(out)
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut v = self.mean.to_vec();
        v.extend_from_slice(&self.std);
        Tensor::new(&[2, 3], v).expect("shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape() != [2, 3] || t.data()[3..].iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Incompatible("context normalisation tensor".into()));
        }
        let d = t.data();
        Ok(ContextNorm {
            mean: [d[0], d[1], d[2]],
            std: [d[3], d[4], d[5]],
        })
    }
}

/// Average gaze over consecutive windows of `l` frames. The sequence is
/// first padded to a multiple of `l` by repeating its last point.
pub fn pool_gaze(gaze: &GazeSequence, l: usize) -> Result<Vec<[f64; 3]>> {
    if l == 0 || gaze.is_empty() {
        return Err(Error::Alignment("cannot pool an empty gaze sequence".into()));
    }
    let mut pts = gaze.points.clone();
    let last = *pts.last().unwrap();
    while pts.len() % l != 0 {
        pts.push(last);
    }
    Ok(pts
        .chunks(l)
        .map(|w| {
            let mut m = [0.0; 3];
            for p in w {
                for a in 0..3 {
                    m[a] += p[a];
                }
            }
            m.map(|v| v / l as f64)
        })
        .collect())
}

/// Model-ready conditioning for a batch of equal-length token prefixes.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B` rows of `L` token ids (`L` may be zero).
    pub tokens: Vec<Vec<usize>>,
    /// Normalised pooled gaze aligned with `tokens`.
    pub gaze: Vec<Vec<[f64; 3]>>,
    /// Normalised object context per row.
    pub objects: Vec<[f64; OBJECT_CONTEXT_DIM]>,
}

impl Batch {
    fn check(&self) -> Result<(usize, usize)> {
        let b = self.tokens.len();
        if b == 0 || self.gaze.len() != b || self.objects.len() != b {
            return Err(Error::dim("batch rows disagree"));
        }
        let l = self.tokens[0].len();
        for (t, g) in self.tokens.iter().zip(&self.gaze) {
            if t.len() != l {
                return Err(Error::dim("ragged token batch"));
            }
            if g.len() != l {
                return Err(Error::Alignment(format!("{} gaze tokens for {} hand tokens", g.len(), t.len())));
            }
        }
        Ok((b, l))
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    gaze: Option<(ParamId, ParamId)>,
    /// Fusion weight and bias (token-only projection without gaze).
    fuse: (ParamId, ParamId),
    /// Gaze expansion for summation fusion.
    expand: Option<(ParamId, ParamId)>,
    object: ParamId,
    position: ParamId,
    blocks: Vec<Block>,
    ln_final: (ParamId, ParamId),
    head: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    layout: Layout,
    /// Frozen VQ-VAE codebook `[K, D_c]`.
    codebook: Tensor,
    pub context_norm: ContextNorm,
}

fn dense(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut Rng) -> ParamId {
    store.add(
        name.to_string(),
        Tensor::randn(&[din, dout], 1.0 / (din as f64).sqrt(), rng),
    )
}

fn zeros(store: &mut ParamStore, name: &str, shape: &[usize]) -> ParamId {
    store.add(name.to_string(), Tensor::zeros(shape))
}

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{}.gain", name), Tensor::full(&[d], 1.0)),
        zeros(store, &format!("{}.bias", name), &[d]),
    )
}

impl Generator {
    pub fn new(config: GeneratorConfig, codebook: Tensor, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if codebook.rank() != 2 || codebook.shape()[0] == 0 {
            return Err(Error::Config(format!("codebook shape {:?}", codebook.shape())));
        }
        let (k, dc) = (codebook.shape()[0], codebook.shape()[1]);
        let (dx, dg) = (config.model_dim, config.gaze_dim);
        let mut p = ParamStore::new();
        let gaze = config
            .gaze
            .then(|| (dense(&mut p, "gaze.weight", 3, dg, rng), zeros(&mut p, "gaze.bias", &[dg])));
        let fuse_in = if config.gaze && config.fusion != Fusion::Summation {
            dc + dg
        } else {
            dc
        };
        let fuse_w = match config.fusion {
            Fusion::Convolution => p.add(
                "fusion.weight",
                Tensor::randn(&[dx, fuse_in, 1], 1.0 / (fuse_in as f64).sqrt(), rng),
            ),
            _ => dense(&mut p, "fusion.weight", fuse_in, dx, rng),
        };
        let fuse = (fuse_w, zeros(&mut p, "fusion.bias", &[dx]));
        let expand = (config.gaze && config.fusion == Fusion::Summation).then(|| {
            (
                dense(&mut p, "expand.weight", dg, dx, rng),
                zeros(&mut p, "expand.bias", &[dx]),
            )
        });
        let object = dense(&mut p, "object.weight", OBJECT_CONTEXT_DIM, dx, rng);
        let position = p.add(
            "position",
            Tensor::randn(&[config.max_tokens + 1, dx], 0.1, rng),
        );
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let n = |s: &str| format!("block{}.{}", i, s);
            let ln1 = layer_norm_params(&mut p, &n("ln1"), dx);
            let wq = dense(&mut p, &n("query"), dx, dx, rng);
            let wk = dense(&mut p, &n("key"), dx, dx, rng);
            let wv = dense(&mut p, &n("value"), dx, dx, rng);
            let wo = dense(&mut p, &n("out.weight"), dx, dx, rng);
            let bo = zeros(&mut p, &n("out.bias"), &[dx]);
            let ln2 = layer_norm_params(&mut p, &n("ln2"), dx);
            let w1 = dense(&mut p, &n("ffn1.weight"), dx, 4 * dx, rng);
            let b1 = zeros(&mut p, &n("ffn1.bias"), &[4 * dx]);
            let w2 = dense(&mut p, &n("ffn2.weight"), 4 * dx, dx, rng);
            let b2 = zeros(&mut p, &n("ffn2.bias"), &[dx]);
            blocks.push(Block {
                ln1,
                wq,
                wk,
                wv,
                wo,
                bo,
                ln2,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let ln_final = layer_norm_params(&mut p, "ln_final", dx);
        let head = (
            p.add("head.weight", Tensor::randn(&[dx, k], 0.02, rng)),
            zeros(&mut p, "head.bias", &[k]),
        );
        Ok(Generator {
            config,
            params: p,
            layout: Layout {
                gaze,
                fuse,
                expand,
                object,
                position,
                blocks,
                ln_final,
                head,
            },
            codebook,
            context_norm: ContextNorm::identity(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook.shape()[0]
    }

    /// Id of a named parameter (for gradient inspection).
    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }

    /// Gaze embedding `G'` of normalised pooled gaze `[B, L, 3]`.
    pub fn embed_gaze(&self, tape: &mut Tape, bound: &Bound, gaze: Var) -> Result<Option<Var>> {
        match self.layout.gaze {
            Some((w, b)) => Ok(Some(tape.linear(gaze, bound.var(w), Some(bound.var(b)))?)),
            None => Ok(None),
        }
    }

    /// Fused features `F: [B, L, D_x]` from token embeddings `[B, L, D_c]`
    /// and the optional gaze embedding.
    pub fn fuse(&self, tape: &mut Tape, bound: &Bound, tokens: Var, gaze: Option<Var>) -> Result<Var> {
        let (fw, fb) = (bound.var(self.layout.fuse.0), bound.var(self.layout.fuse.1));
        match self.config.fusion {
            Fusion::Summation => {
                let base = tape.linear(tokens, fw, Some(fb))?;
                match (gaze, self.layout.expand) {
                    (Some(g), Some((ew, eb))) => {
                        let expanded = tape.linear(g, bound.var(ew), Some(bound.var(eb)))?;
                        tape.add(base, expanded)
                    }
                    _ => Ok(base),
                }
            }
            mode => {
                let input = match gaze {
                    Some(g) => tape.concat_lastdim(tokens, g)?,
                    None => tokens,
                };
                let h = if mode == Fusion::Convolution {
                    tape.conv1d(input, fw, Some(fb), 1, 0)?
                } else {
                    tape.linear(input, fw, Some(fb))?
                };
                tape.relu(h)
            }
        }
    }

    /// Logits `[B, L + 1, K]` for a batch.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        let (b, l) = batch.check()?;
        if l > self.config.max_tokens {
            return Err(Error::Parameter(format!(
                "{} tokens exceed the positional table ({})",
                l, self.config.max_tokens
            )));
        }
        let obj_data: Vec<f64> = batch.objects.iter().flat_map(|o| o.iter().copied()).collect();
        let obj_in = tape.constant(Tensor::new(&[b, 1, OBJECT_CONTEXT_DIM], obj_data)?);
        let obj = tape.linear(obj_in, bound.var(self.layout.object), None)?;
        let mut x = if l == 0 {
            obj
        } else {
            let flat: Vec<usize> = batch.tokens.iter().flatten().copied().collect();
            let cb = tape.constant(self.codebook.clone());
            let emb = tape.gather_rows(cb, &flat)?;
            let emb = tape.reshape(emb, &[b, l, self.codebook.shape()[1]])?;
            let g = if self.config.gaze {
                let gd: Vec<f64> = batch.gaze.iter().flatten().flat_map(|p| p.iter().copied()).collect();
                let gv = tape.constant(Tensor::new(&[b, l, 3], gd)?);
                self.embed_gaze(tape, bound, gv)?
            } else {
                None
            };
            let f = self.fuse(tape, bound, emb, g)?;
            tape.concat_time(obj, f)?
        };
        x = tape.add_time_embedding(x, bound.var(self.layout.position))?;
        let heads = self.config.heads;
        for blk in &self.layout.blocks {
            let h = tape.layer_norm(x, bound.var(blk.ln1.0), bound.var(blk.ln1.1), 1e-5)?;
            let q = tape.linear(h, bound.var(blk.wq), None)?;
            let k = tape.linear(h, bound.var(blk.wk), None)?;
            let v = tape.linear(h, bound.var(blk.wv), None)?;
            let a = tape.causal_attention(q, k, v, heads)?;
            let o = tape.linear(a, bound.var(blk.wo), Some(bound.var(blk.bo)))?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, bound.var(blk.ln2.0), bound.var(blk.ln2.1), 1e-5)?;
            let h = tape.linear(h, bound.var(blk.w1), Some(bound.var(blk.b1)))?;
            let h = tape.relu(h)?;
            let h = tape.linear(h, bound.var(blk.w2), Some(bound.var(blk.b2)))?;
            x = tape.add(x, h)?;
        }
        let h = tape.layer_norm(
            x,
            bound.var(self.layout.ln_final.0),
            bound.var(self.layout.ln_final.1),
            1e-5,
        )?;
        tape.linear(h, bound.var(self.layout.head.0), Some(bound.var(self.layout.head.1)))
    }

    /// Logits for a batch without recording gradients.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let y = self.forward(&mut tape, &bound, batch)?;
        Ok(tape.value(y).clone())
    }

    /// Normalised model inputs for one prefix.
    pub fn prepare(&self, tokens: &[usize], pooled_gaze: &[[f64; 3]], objects: &ObjectSet) -> Result<Batch> {
        if pooled_gaze.len() != tokens.len() {
            return Err(Error::Alignment(format!(
                "{} gaze tokens for {} hand tokens",
                pooled_gaze.len(),
                tokens.len()
            )));
        }
        let k = self.codebook_size();
        if let Some(&t) = tokens.iter().find(|&&t| t >= k) {
            return Err(Error::Index { index: t, size: k });
        }
        Ok(Batch {
            tokens: vec![tokens.to_vec()],
            gaze: vec![pooled_gaze.iter().map(|p| self.context_norm.point(*p)).collect()],
            objects: vec![self.context_norm.objects(objects)?],
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        out.push(("context_norm".into(), self.context_norm.to_tensor()));
        out
    }

    pub fn from_named_tensors(config: GeneratorConfig, codebook: Tensor, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut g = Generator::new(config, codebook, &mut crate::rng::stream(0, &[]))?;
        let norm = tensors
            .iter()
            .find(|(n, _)| n == "context_norm")
            .ok_or_else(|| Error::Incompatible("missing tensor context_norm".into()))?;
        g.context_norm = ContextNorm::from_tensor(&norm.1)?;
        g.params
            .load(tensors.iter().filter(|(n, _)| n != "context_norm").map(|(n, t)| (n.as_str(), t)))?;
        Ok(g)
    }
}
