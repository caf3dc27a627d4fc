use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-joint isotropic Gaussian corruption specified by its mean
/// displacement norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Expected Euclidean displacement per joint, meters.
    pub mean_error: f64,
}

impl NoiseSpec {
    pub fn new(mean_error: f64) -> Result<Self> {
        if !(mean_error >= 0.0) || !mean_error.is_finite() {
            return Err(Error::Parameter(format!(
                "noise mean error must be >= 0, got {}",
                mean_error
            )));
        }
        Ok(NoiseSpec { mean_error })
    }

    /// Per-axis standard deviation. The norm of a 3D isotropic Gaussian is
    /// chi-distributed with mean `sigma * sqrt(8 / pi)`, so this inverts it.
    pub fn sigma(&self) -> f64 {
        self.mean_error * (std::f64::consts::PI / 8.0).sqrt()
    }
}

/// Add independent noise to every joint of every frame.
pub fn add_joint_noise(seq: &MotionSequence, spec: &NoiseSpec, rng: &mut Rng) -> Result<MotionSequence> {
    let spec = NoiseSpec::new(spec.mean_error)?;
    let mut out = seq.clone();
    if spec.mean_error == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, spec.sigma()).map_err(|e| Error::Parameter(e.to_string()))?;
    for v in out.as_mut_slice() {
        *v += normal.sample(rng);
    }
    Ok(out)
}
