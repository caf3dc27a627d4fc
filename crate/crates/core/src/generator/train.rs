use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{pool_gaze, rollout::argmax, Batch, ContextNorm, Generator, GeneratorConfig};
use crate::autodiff::{Adam, Tape};
use crate::data::{ObjectSet, Sample};
use crate::error::{Error, Result};
use crate::rng::{label, stream};
use crate::vqvae::VqVae;

/// Tokenised training sequence with raw pooled gaze.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub tokens: Vec<usize>,
    pub gaze: Vec<[f64; 3]>,
    pub objects: ObjectSet,
}

impl TrainingExample {
    pub fn from_sample(vqvae: &VqVae, sample: &Sample) -> Result<Self> {
        let tokens = vqvae.tokenize(&sample.hands)?;
        let gaze = pool_gaze(&sample.gaze, vqvae.downsample())?;
        if gaze.len() != tokens.len() {
            return Err(Error::Alignment(format!(
                "{} gaze tokens for {} hand tokens",
                gaze.len(),
                tokens.len()
            )));
        }
        Ok(TrainingExample {
            tokens,
            gaze,
            objects: sample.objects.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenEpochLog {
    pub epoch: usize,
    /// Weighted cross-entropy per unit weight.
    pub loss: f64,
    /// Teacher-forced next-token accuracy over real positions.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainLog {
    pub epochs: Vec<GenEpochLog>,
}

/// Teacher-forced batch: inputs `[O', f_1 .. f_{n-1}]`, targets `s_1 .. s_n`.
/// Shorter sequences are right-padded with zero-weight positions; attention
/// is causal, so padding never reaches a real position.
pub(crate) fn teacher_batch(
    examples: &[&TrainingExample],
    norm: &ContextNorm,
    w_last: f64,
) -> Result<(Batch, Vec<usize>, Vec<f64>)> {
    let n_max = examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    if n_max == 0 {
        return Err(Error::Parameter("empty token sequence in training batch".into()));
    }
    let l = n_max - 1;
    let mut batch = Batch {
        tokens: Vec::with_capacity(examples.len()),
        gaze: Vec::with_capacity(examples.len()),
        objects: Vec::with_capacity(examples.len()),
    };
    let mut targets = Vec::with_capacity(examples.len() * n_max);
    let mut weights = Vec::with_capacity(examples.len() * n_max);
    for e in examples {
        let n = e.tokens.len();
        let mut t: Vec<usize> = e.tokens[..n - 1].to_vec();
        t.resize(l, 0);
        let mut g: Vec<[f64; 3]> = e.gaze[..n - 1].iter().map(|p| norm.point(*p)).collect();
        g.resize(l, [0.0; 3]);
        batch.tokens.push(t);
        batch.gaze.push(g);
        batch.objects.push(norm.objects(&e.objects)?);
        for j in 0..n_max {
            if j < n {
                targets.push(e.tokens[j]);
                weights.push(if j + 1 == n { w_last } else { 1.0 });
            } else {
                targets.push(0);
                weights.push(0.0);
            }
        }
    }
    Ok((batch, targets, weights))
}

/// Train a generator on tokens from a frozen VQ-VAE.
pub fn train_generator(
    vqvae: &VqVae,
    samples: &[Sample],
    config: &GeneratorConfig,
) -> Result<(Generator, GeneratorTrainLog)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Parameter("generator training set is empty".into()));
    }
    let examples = samples
        .iter()
        .map(|s| TrainingExample::from_sample(vqvae, s))
        .collect::<Result<Vec<_>>>()?;
    train_on_examples(vqvae, &examples, ContextNorm::fit(samples.iter().map(|s| &s.gaze))?, config)
}

pub(crate) fn train_on_examples(
    vqvae: &VqVae,
    examples: &[TrainingExample],
    norm: ContextNorm,
    config: &GeneratorConfig,
) -> Result<(Generator, GeneratorTrainLog)> {
    if let Some(e) = examples.iter().find(|e| e.tokens.len() > config.max_tokens) {
        return Err(Error::Parameter(format!(
            "sequence of {} tokens exceeds max_tokens {}",
            e.tokens.len(),
            config.max_tokens
        )));
    }
    let mut init_rng = stream(config.seed, &[label("generator-init")]);
    let mut rng = stream(config.seed, &[label("generator-train")]);
    let mut gen = Generator::new(config.clone(), vqvae.codebook().clone(), &mut init_rng)?;
    gen.context_norm = norm;
    let k = gen.codebook_size();
    let mut adam = Adam::new(gen.params(), config.optimizer.clone());
    let mut log = GeneratorTrainLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..config.epochs {
        adam.set_learning_rate(config.optimizer.learning_rate_at(epoch, config.epochs));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        let (mut correct, mut total) = (0usize, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch_ex: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (batch, targets, weights) = teacher_batch(&batch_ex, &gen.context_norm, config.w_last)?;
            let wsum: f64 = weights.iter().sum();
            let rows = targets.len();
            let mut tape = Tape::new();
            let bound = gen.params().bind(&mut tape, true);
            let logits = gen.forward(&mut tape, &bound, &batch)?;
            let flat = tape.reshape(logits, &[rows, k])?;
            for (r, row) in tape.value(flat).data().chunks(k).enumerate() {
                if weights[r] > 0.0 {
                    total += 1;
                    correct += usize::from(argmax(row) == targets[r]);
                }
            }
            let ce = tape.cross_entropy(flat, &targets, &weights)?;
            let loss = tape.scale(ce, 1.0 / wsum)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    message: format!("generator loss is {}", value),
                });
            }
            let mut grads = tape.backward(loss)?;
            let grads = bound.gradients(gen.params(), &mut grads);
            adam.update(gen.params_mut(), &grads).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    epoch,
                    batch: bi,
                    message,
                },
                other => other,
            })?;
            loss_sum += value * wsum;
            weight_sum += wsum;
        }
        let entry = GenEpochLog {
            epoch,
            loss: loss_sum / weight_sum,
            accuracy: correct as f64 / total.max(1) as f64,
        };
        log::debug!("generator epoch {} loss {:.4} acc {:.3}", epoch, entry.loss, entry.accuracy);
        log.epochs.push(entry);
    }
    Ok((gen, log))
}
