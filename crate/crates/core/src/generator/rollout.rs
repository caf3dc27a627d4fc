use super::{pool_gaze, Batch, Generator};
use crate::data::{GazeSequence, MotionSequence, ObjectSet};
use crate::error::{Error, Result};
use crate::vqvae::VqVae;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Logits of the row after the last input position, and their argmax.
pub fn predict_next_index(generator: &Generator, batch: &Batch) -> Result<(Vec<f64>, usize)> {
    if batch.tokens.len() != 1 {
        return Err(Error::Contract("predict_next_index takes a single prefix".into()));
    }
    let logits = generator.logits(batch)?;
    let k = generator.codebook_size();
    let last = logits.data()[logits.numel() - k..].to_vec();
    let s = argmax(&last);
    Ok((last, s))
}

/// A frozen VQ-VAE with a generator trained on its tokens.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub vqvae: VqVae,
    pub generator: Generator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub input_tokens: Vec<usize>,
    pub predicted_tokens: Vec<usize>,
    /// Decoded input and predicted tokens together.
    pub full: MotionSequence,
    /// The `l * n_future` frames after the input.
    pub future: MotionSequence,
}

/// Greedy rollout of `n_future` tokens after the observed hands and gaze.
///
/// Gaze is only observed for the input frames; positions after it reuse the
/// last observed gaze token.
pub fn generate(
    predictor: &Predictor,
    hands: &MotionSequence,
    gaze: &GazeSequence,
    objects: &ObjectSet,
    n_future: usize,
) -> Result<Prediction> {
    let l = predictor.vqvae.downsample();
    if n_future == 0 {
        return Err(Error::Parameter("rollout horizon must be at least one token".into()));
    }
    if hands.len() < l || hands.len() % l != 0 {
        return Err(Error::Parameter(format!(
            "input of {} frames is not a positive multiple of l = {}",
            hands.len(),
            l
        )));
    }
    if gaze.len() < hands.len() {
        return Err(Error::Alignment(format!(
            "{} gaze points for {} input frames",
            gaze.len(),
            hands.len()
        )));
    }
    let gen = &predictor.generator;
    let input_tokens = predictor.vqvae.tokenize(hands)?;
    let mut pooled = pool_gaze(&gaze.prefix(hands.len()), l)?;
    let hold = *pooled.last().expect("non-empty input");
    let mut tokens = input_tokens.clone();
    let mut predicted = Vec::with_capacity(n_future);
    for _ in 0..n_future {
        let batch = gen.prepare(&tokens, &pooled, objects)?;
        let (_, s) = predict_next_index(gen, &batch)?;
        tokens.push(s);
        pooled.push(hold);
        predicted.push(s);
    }
    let full = predictor.vqvae.decode_indices(&tokens, hands.fps)?;
    let future = full.slice(hands.len(), full.len());
    Ok(Prediction {
        input_tokens,
        predicted_tokens: predicted,
        full,
        future,
    })
}
