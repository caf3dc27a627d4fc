use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::quantize::nearest_all;
use super::{Normalizer, VqVae, VqVaeConfig};
use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::data::{MotionSequence, POSE_DIM};
use crate::error::{Error, Result};
use crate::rng::{label, stream, Rng};

/// The three VQ-VAE objectives and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub embed: f64,
    pub commit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Loss of the end-of-epoch model over every whole training sequence.
    pub loss: LossParts,
    /// Mean loss of the epoch's minibatches.
    pub batch_loss: LossParts,
    /// Codewords re-seeded at the end of the epoch.
    pub dead_codes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqVaeTrainLog {
    pub epochs: Vec<EpochLog>,
    /// Codeword usage over the final epoch.
    pub usage: Vec<usize>,
}

struct GraphLoss {
    total: Var,
    recon: Var,
    embed: Var,
    commit: Var,
}

fn loss_graph(tape: &mut Tape, x: Var, y: Var, e: Var, q: Var, beta: f64, gamma: f64) -> Result<GraphLoss> {
    let recon = tape.smooth_l1(y, x, beta)?;
    let e_sg = tape.stop_gradient(e)?;
    let embed = tape.mean_squared_error(e_sg, q)?;
    let q_sg = tape.stop_gradient(q)?;
    let commit_raw = tape.mean_squared_error(e, q_sg)?;
    let commit = tape.scale(commit_raw, gamma)?;
    let partial = tape.add(recon, embed)?;
    let total = tape.add(partial, commit)?;
    Ok(GraphLoss {
        total,
        recon,
        embed,
        commit,
    })
}

fn parts(tape: &Tape, g: &GraphLoss) -> LossParts {
    LossParts {
        total: tape.value(g.total).item(),
        recon: tape.value(g.recon).item(),
        embed: tape.value(g.embed).item(),
        commit: tape.value(g.commit).item(),
    }
}

/// Evaluate the three losses on plain tensors: smooth-L1 reconstruction,
/// `|sg[E] - Q|^2` and `gamma |E - sg[Q]|^2`, each a mean over elements.
pub fn vqvae_loss(h: &Tensor, h_hat: &Tensor, e: &Tensor, q: &Tensor, beta: f64, gamma: f64) -> Result<LossParts> {
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(h.clone()), tape.constant(h_hat.clone()));
    let (ev, qv) = (tape.constant(e.clone()), tape.constant(q.clone()));
    let g = loss_graph(&mut tape, x, y, ev, qv, beta, gamma)?;
    Ok(parts(&tape, &g))
}

/// One training window in normalised units.
struct Window {
    frames: Vec<f64>,
    len: usize,
}

fn pad_to(frames: &[f64], l: usize) -> Window {
    let len = frames.len() / POSE_DIM;
    let target = len.div_ceil(l) * l;
    let mut out = frames.to_vec();
    let last = frames[(len - 1) * POSE_DIM..].to_vec();
    for _ in len..target {
        out.extend_from_slice(&last);
    }
    Window { frames: out, len: target }
}

fn draw_batches(normed: &[Vec<f64>], cfg: &VqVaeConfig, rng: &mut Rng) -> Vec<Vec<Window>> {
    let l = cfg.downsample;
    let mut order: Vec<usize> = (0..normed.len()).collect();
    order.shuffle(rng);
    let mut cropped = Vec::new();
    let mut whole = Vec::new();
    for i in order {
        let len = normed[i].len() / POSE_DIM;
        if cfg.crop_frames > 0 && len >= cfg.crop_frames {
            let start = l * rng.random_range(0..=(len - cfg.crop_frames) / l);
            let frames = normed[i][start * POSE_DIM..(start + cfg.crop_frames) * POSE_DIM].to_vec();
            cropped.push(Window {
                frames,
                len: cfg.crop_frames,
            });
        } else {
            whole.push(pad_to(&normed[i], l));
        }
    }
    let mut batches: Vec<Vec<Window>> = Vec::new();
    let mut it = cropped.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(cfg.batch_size).collect());
    }
    // sequences shorter than a crop train one at a time
    batches.extend(whole.into_iter().map(|w| vec![w]));
    batches
}

/// Loss of the current model over whole (padded) sequences, no updates.
fn full_pass_loss(model: &VqVae, normed: &[Vec<f64>], cfg: &VqVaeConfig) -> Result<LossParts> {
    let l = cfg.downsample;
    let d = cfg.code_dim;
    let mut by_len: BTreeMap<usize, Vec<Window>> = BTreeMap::new();
    for seq in normed {
        let w = pad_to(seq, l);
        by_len.entry(w.len).or_default().push(w);
    }
    let mut sums = LossParts::default();
    let mut n = 0.0;
    for (t, windows) in by_len {
        for chunk in windows.chunks(64) {
            let b = chunk.len();
            let data: Vec<f64> = chunk.iter().flat_map(|w| w.frames.iter().copied()).collect();
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, false);
            let x = tape.constant(Tensor::new(&[b, t, POSE_DIM], data)?);
            let e = model.encoder(&mut tape, &bound, x)?;
            let idx = nearest_all(model.codebook().data(), d, tape.value(e).data());
            let q_flat = tape.gather_rows(bound.var(model.codebook_id()), &idx)?;
            let q = tape.reshape(q_flat, &[b, t / l, d])?;
            let y = model.decoder(&mut tape, &bound, q)?;
            let g = loss_graph(&mut tape, x, y, e, q, cfg.beta, cfg.gamma)?;
            let p = parts(&tape, &g);
            let wgt = b as f64;
            sums.total += p.total * wgt;
            sums.recon += p.recon * wgt;
            sums.embed += p.embed * wgt;
            sums.commit += p.commit * wgt;
            n += wgt;
        }
    }
    Ok(LossParts {
        total: sums.total / n,
        recon: sums.recon / n,
        embed: sums.embed / n,
        commit: sums.commit / n,
    })
}

/// Train a VQ-VAE on `seqs`. Deterministic given `config.seed`.
pub fn train_vqvae(seqs: &[MotionSequence], config: &VqVaeConfig) -> Result<(VqVae, VqVaeTrainLog)> {
    config.validate()?;
    if seqs.is_empty() {
        return Err(Error::Parameter("VQ-VAE training set is empty".into()));
    }
    let l = config.downsample;
    if let Some(s) = seqs.iter().find(|s| s.len() < l) {
        return Err(Error::SequenceTooShort { len: s.len(), min: l });
    }
    let mut init_rng = stream(config.seed, &[label("vqvae-init")]);
    let mut rng = stream(config.seed, &[label("vqvae-train")]);
    let mut model = VqVae::new(config.clone(), &mut init_rng)?;
    model.normalizer = Normalizer::fit(seqs)?;
    let normed: Vec<Vec<f64>> = seqs.iter().map(|s| model.normalizer.apply(s.as_slice())).collect();

    let mut adam = Adam::new(model.params(), config.optimizer.clone());
    let (k, d) = (config.codebook_size, config.code_dim);
    let cb_id = model.codebook_id();
    let reseed_noise = Normal::new(0.0, 0.01).expect("valid std");
    let mut log = VqVaeTrainLog::default();

    for epoch in 0..config.epochs {
        adam.set_learning_rate(config.optimizer.learning_rate_at(epoch, config.epochs));
        let mut usage = vec![0usize; k];
        let mut pool: Vec<f64> = Vec::new();
        let mut sums = LossParts::default();
        let mut weight = 0.0;
        for (bi, batch) in draw_batches(&normed, config, &mut rng).into_iter().enumerate() {
            let t = batch[0].len;
            let b = batch.len();
            let data: Vec<f64> = batch.into_iter().flat_map(|w| w.frames).collect();
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let x = tape.constant(Tensor::new(&[b, t, POSE_DIM], data)?);
            let e = model.encoder(&mut tape, &bound, x)?;
            let idx = nearest_all(model.codebook().data(), d, tape.value(e).data());
            for &i in &idx {
                usage[i] += 1;
            }
            pool.extend_from_slice(tape.value(e).data());
            let q_flat = tape.gather_rows(bound.var(cb_id), &idx)?;
            let q = tape.reshape(q_flat, &[b, t / l, d])?;
            let zq = tape.straight_through(e, q)?;
            let y = model.decoder(&mut tape, &bound, zq)?;
            let g = loss_graph(&mut tape, x, y, e, q, config.beta, config.gamma)?;
            let p = parts(&tape, &g);
            if !p.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    message: format!("VQ-VAE loss is {}", p.total),
                });
            }
            let mut grads = tape.backward(g.total)?;
            let grads = bound.gradients(model.params(), &mut grads);
            adam.update(model.params_mut(), &grads).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    epoch,
                    batch: bi,
                    message,
                },
                other => other,
            })?;
            let wgt = b as f64;
            sums.total += p.total * wgt;
            sums.recon += p.recon * wgt;
            sums.embed += p.embed * wgt;
            sums.commit += p.commit * wgt;
            weight += wgt;
        }
        let mean = LossParts {
            total: sums.total / weight,
            recon: sums.recon / weight,
            embed: sums.embed / weight,
            commit: sums.commit / weight,
        };

        let dead: Vec<usize> = (0..k).filter(|&i| usage[i] == 0).collect();
        let reseed = epoch + 1 < config.epochs && !dead.is_empty() && !pool.is_empty();
        if reseed {
            let rows = pool.len() / d;
            let cb = model.params_mut().get_mut(cb_id).data_mut();
            for &c in &dead {
                let r = rng.random_range(0..rows);
                for j in 0..d {
                    cb[c * d + j] = pool[r * d + j] + reseed_noise.sample(&mut rng);
                }
            }
            adam.reset_rows(cb_id.index(), d, &dead);
        }
        let full = full_pass_loss(&model, &normed, config)?;
        log::debug!(
            "vqvae epoch {} loss {:.5} (recon {:.5}, batches {:.5}) dead {}",
            epoch,
            full.total,
            full.recon,
            mean.total,
            dead.len()
        );
        log.epochs.push(EpochLog {
            epoch,
            loss: full,
            batch_loss: mean,
            dead_codes: if reseed { dead.len() } else { 0 },
        });
        log.usage = usage;
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let z = Tensor::zeros(&[2, 3]);
        let p = vqvae_loss(&z, &z, &z, &z, 1.0, 0.25).unwrap();
        assert_eq!(p.total, 0.0);
        let e = Tensor::full(&[2, 3], 0.1);
        let p = vqvae_loss(&z, &z, &e, &z, 1.0, 0.25).unwrap();
        assert!((p.commit - 0.25 * 0.01).abs() < 1e-15);
        assert!((p.embed - 0.01).abs() < 1e-15);
        assert!((p.total - (p.recon + p.embed + p.commit)).abs() < 1e-12);
    }

    #[test]
    fn single_sequence_is_memorised_and_runs_repeat() {
        let frames: Vec<f64> = (0..16 * POSE_DIM)
            .map(|i| ((i / POSE_DIM) as f64 * 0.02) + ((i % POSE_DIM) as f64 * 0.003).sin())
            .collect();
        let seq = MotionSequence::new(frames, 30).unwrap();
        let cfg = VqVaeConfig {
            codebook_size: 8,
            code_dim: 4,
            hidden_channels: 16,
            epochs: 300,
            batch_size: 1,
            crop_frames: 0,
            ..VqVaeConfig::default()
        };
        let (_, log) = train_vqvae(std::slice::from_ref(&seq), &cfg).unwrap();
        let first = log.epochs[0].loss.total;
        let last = log.epochs.last().unwrap().loss.total;
        assert!(last < 0.05 * first, "{} -> {}", first, last);
        let (_, again) = train_vqvae(std::slice::from_ref(&seq), &cfg).unwrap();
        assert_eq!(log, again);
    }
}
