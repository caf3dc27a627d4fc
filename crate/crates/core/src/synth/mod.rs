//! Parametric eye-hand-object grasp generator, joint noise model and
//! validation splits.
//!
//! Every sample draws from its own random stream keyed by `(seed, index)`,
//! so a dataset is a pure function of its [`SynthConfig`] regardless of how
//! many threads build it.

pub mod hand;
pub mod io;
pub mod noise;
pub mod scene;
pub mod split;
pub mod trajectory;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Motion, Sample};
use crate::error::{Error, Result};
use crate::rng::{label, stream};

pub use io::{read_dataset, write_dataset, DATASET_VERSION};
pub use noise::{add_joint_noise, NoiseSpec};
pub use scene::{generate_scene, Handedness, SceneSpec, SubjectStyle, TableFrame};
pub use split::{check_split, split_cs_cm_csm, Split, TrainingGroup, Validation, FOLDS};
pub use trajectory::{min_jerk, synth_trajectory, TrajectorySample, MIN_FRAMES};

/// Frames added per tempo step; keeps every length a multiple of the
/// VQ-VAE downsample factor.
pub const TEMPO_STEP_FRAMES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub grasps_per_object: usize,
    pub fps: u32,
    /// Length of the fastest reach; slower subjects add whole tempo steps.
    pub base_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 15,
            grasps_per_object: 5,
            fps: 30,
            base_frames: 48,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grasps_per_object == 0 || self.fps == 0 {
            return Err(Error::Parameter(
                "grasps_per_object and fps must be at least 1".into(),
            ));
        }
        if self.base_frames < MIN_FRAMES {
            return Err(Error::Parameter(format!(
                "base_frames {} below the minimum of {}",
                self.base_frames, MIN_FRAMES
            )));
        }
        Ok(())
    }

    /// Samples per subject: each single-object motion repeated, plus one
    /// bimanual writing attempt.
    pub fn samples_per_subject(&self) -> usize {
        Motion::SINGLE_OBJECT.len() * self.grasps_per_object + 1
    }
}

/// The (subject, motion) schedule in dataset order.
pub fn schedule(config: &SynthConfig) -> Vec<(usize, Motion)> {
    let mut out = Vec::with_capacity(config.subjects * config.samples_per_subject());
    for s in 0..config.subjects {
        for m in Motion::SINGLE_OBJECT {
            for _ in 0..config.grasps_per_object {
                out.push((s, m));
            }
        }
        out.push((s, Motion::WriteOnPaper));
    }
    out
}

pub fn subject_style(config: &SynthConfig, subject: usize) -> SubjectStyle {
    let mut rng = stream(config.seed, &[label("subject"), subject as u64]);
    SubjectStyle::draw(&mut rng, subject)
}

/// Generate one sample of the schedule, with its scene.
pub fn build_sample(config: &SynthConfig, index: usize, subject: usize, motion: Motion) -> Result<TrajectorySample> {
    let style = subject_style(config, subject);
    let mut last_err = None;
    for attempt in 0..8u64 {
        let mut rng = stream(config.seed, &[label("sample"), index as u64, attempt]);
        let jitter = rng.random_range(0..2usize);
        let frames = config.base_frames + TEMPO_STEP_FRAMES * (style.tempo_steps + jitter);
        let result = generate_scene(&mut rng, motion, &style)
            .and_then(|scene| synth_trajectory(&scene, frames, config.fps, &mut rng));
        match result {
            Ok(t) => return Ok(t),
            Err(e @ Error::Generation(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Build the full corpus with scenes attached.
pub fn build_trajectories(config: &SynthConfig) -> Result<Vec<TrajectorySample>> {
    config.validate()?;
    schedule(config)
        .into_par_iter()
        .enumerate()
        .map(|(i, (s, m))| build_sample(config, i, s, m))
        .collect()
}

pub fn build_dataset(config: &SynthConfig) -> Result<Vec<Sample>> {
    Ok(build_trajectories(config)?.into_iter().map(|t| t.sample).collect())
}
