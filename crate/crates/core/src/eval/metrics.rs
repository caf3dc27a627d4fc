//! Position and angle errors between ground-truth and predicted palm tracks.

use crate::data::{active_hands, dist, palm_track, Hand, MotionSequence};
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Mean Euclidean distance between paired positions.
pub fn avg_position_error(truth: &[Point], pred: &[Point]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Contract(format!(
            "position tracks differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Contract("empty position track".into()));
    }
    let total: f64 = truth.iter().zip(pred).map(|(a, b)| dist(*a, *b)).sum();
    Ok(total / truth.len() as f64)
}

/// Distance between the final positions.
pub fn end_pose_error(truth: &[Point], pred: &[Point]) -> Result<f64> {
    match (truth.last(), pred.last()) {
        (Some(a), Some(b)) => Ok(dist(*a, *b)),
        _ => Err(Error::Contract("empty position track".into())),
    }
}

/// Angle between `gt_end - start` and `pred_end - start`, in radians.
pub fn key_pose_angle_error(start: Point, gt_end: Point, pred_end: Point) -> Result<f64> {
    let u = [gt_end[0] - start[0], gt_end[1] - start[1], gt_end[2] - start[2]];
    let v = [pred_end[0] - start[0], pred_end[1] - start[1], pred_end[2] - start[2]];
    if u == [0.0; 3] || v == [0.0; 3] {
        return Err(Error::UndefinedAngle(
            "zero-length displacement from the start point".into(),
        ));
    }
    // atan2 of |u x v| and u . v stays accurate near 0 and pi, unlike acos.
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    Ok(sin.atan2(u[0] * v[0] + u[1] * v[1] + u[2] * v[2]))
}

/// All three errors for one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleErrors {
    pub avg_position: f64,
    pub end_pose: f64,
    /// `None` when the angle is undefined.
    pub key_pose_angle: Option<f64>,
}

/// Compare `pred` with `truth` over frames `from..truth.len()`. Palms are
/// tracked on the hands that move in the ground truth; the angle is
/// measured from the ground-truth palm at frame 0.
pub fn sample_errors(truth: &MotionSequence, pred: &MotionSequence, from: usize) -> Result<SampleErrors> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if from >= truth.len() {
        return Err(Error::Contract(format!(
            "no frames to score after frame {} of {}",
            from,
            truth.len()
        )));
    }
    let hands: Vec<Hand> = active_hands(truth);
    let p = palm_track(truth, &hands);
    let q = palm_track(pred, &hands);
    let avg = avg_position_error(&p[from..], &q[from..])?;
    let end = end_pose_error(&p, &q)?;
    let angle = key_pose_angle_error(p[0], *p.last().unwrap(), *q.last().unwrap()).ok();
    Ok(SampleErrors {
        avg_position: avg,
        end_pose: end,
        key_pose_angle: angle,
    })
}
