//! Domain types shared by the models, the synthetic generator and the harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joints per hand (MediaPipe layout: wrist, then four joints per finger).
pub const JOINTS_PER_HAND: usize = 21;
/// Both hands.
pub const JOINTS: usize = 2 * JOINTS_PER_HAND;
/// Floats per frame: 2 hands x 21 joints x xyz.
pub const POSE_DIM: usize = JOINTS * 3;
/// Maximum anchor points describing one object.
pub const MAX_OBJECT_POINTS: usize = 4;
/// Floats per encoded object.
pub const OBJECT_CODE_DIM: usize = MAX_OBJECT_POINTS * 3;
/// Objects per scene accepted by the generator's conditioning token.
pub const MAX_OBJECTS: usize = 3;

/// Wrist plus the five metacarpal-base joints of one hand.
pub const PALM_JOINTS: [usize; 6] = [0, 1, 5, 9, 13, 17];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    /// Offset of this hand's first joint within a frame, in joints.
    pub fn joint_offset(self) -> usize {
        match self {
            Hand::Left => 0,
            Hand::Right => JOINTS_PER_HAND,
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Bottle,
    Paper,
    Book,
    Phone,
    Pen,
    Earphone,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 6] = [
        ObjectKind::Bottle,
        ObjectKind::Paper,
        ObjectKind::Book,
        ObjectKind::Phone,
        ObjectKind::Pen,
        ObjectKind::Earphone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Bottle => "bottle",
            ObjectKind::Paper => "paper",
            ObjectKind::Book => "book",
            ObjectKind::Phone => "phone",
            ObjectKind::Pen => "pen",
            ObjectKind::Earphone => "earphone",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ObjectKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    PickBottle,
    MovePaper,
    PickBook,
    PickPhone,
    PickPen,
    PickEarphone,
    WriteOnPaper,
}

impl Motion {
    pub const ALL: [Motion; 7] = [
        Motion::PickBottle,
        Motion::MovePaper,
        Motion::PickBook,
        Motion::PickPhone,
        Motion::PickPen,
        Motion::PickEarphone,
        Motion::WriteOnPaper,
    ];

    /// The six single-object grasps, each repeated per subject.
    pub const SINGLE_OBJECT: [Motion; 6] = [
        Motion::PickBottle,
        Motion::MovePaper,
        Motion::PickBook,
        Motion::PickPhone,
        Motion::PickPen,
        Motion::PickEarphone,
    ];

    /// Motions reserved for cross-motion validation; never trained on.
    pub const HELD_OUT: [Motion; 2] = [Motion::PickBook, Motion::WriteOnPaper];

    pub fn name(self) -> &'static str {
        match self {
            Motion::PickBottle => "pick_bottle",
            Motion::MovePaper => "move_paper",
            Motion::PickBook => "pick_book",
            Motion::PickPhone => "pick_phone",
            Motion::PickPen => "pick_pen",
            Motion::PickEarphone => "pick_earphone",
            Motion::WriteOnPaper => "write_on_paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Motion::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_held_out(self) -> bool {
        Motion::HELD_OUT.contains(&self)
    }

    /// Kind of the grasp target.
    pub fn target_kind(self) -> ObjectKind {
        match self {
            Motion::PickBottle => ObjectKind::Bottle,
            Motion::MovePaper => ObjectKind::Paper,
            Motion::PickBook => ObjectKind::Book,
            Motion::PickPhone => ObjectKind::Phone,
            Motion::PickPen | Motion::WriteOnPaper => ObjectKind::Pen,
            Motion::PickEarphone => ObjectKind::Earphone,
        }
    }
}

/// Hand poses over time: `T x 126` floats in meters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Vec<f64>,
    pub fps: u32,
}

impl MotionSequence {
    pub fn new(frames: Vec<f64>, fps: u32) -> Result<Self> {
        if frames.len() % POSE_DIM != 0 {
            return Err(Error::Dimension(format!(
                "{} floats is not a whole number of {}-dim frames",
                frames.len(),
                POSE_DIM
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "motion sequence",
            });
        }
        Ok(MotionSequence { frames, fps })
    }

    pub fn from_frames(rows: &[Vec<f64>], fps: u32) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != POSE_DIM) {
            return Err(Error::Dimension(format!(
                "frame {} has {} values, expected {}",
                bad,
                rows[bad].len(),
                POSE_DIM
            )));
        }
        MotionSequence::new(rows.concat(), fps)
    }

    pub fn len(&self) -> usize {
        self.frames.len() / POSE_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * POSE_DIM..(t + 1) * POSE_DIM]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.frames[t * POSE_DIM..(t + 1) * POSE_DIM]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.frames
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.frames
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.frames
    }

    pub fn joint(&self, t: usize, joint: usize) -> [f64; 3] {
        let f = self.frame(t);
        [f[joint * 3], f[joint * 3 + 1], f[joint * 3 + 2]]
    }

    /// First `n` frames.
    pub fn prefix(&self, n: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames[..n * POSE_DIM].to_vec(),
            fps: self.fps,
        }
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames[start * POSE_DIM..end * POSE_DIM].to_vec(),
            fps: self.fps,
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.frames.chunks(POSE_DIM).map(<[f64]>::to_vec).collect()
    }

    /// Palm centre of `hand` at frame `t`.
    pub fn palm(&self, t: usize, hand: Hand) -> [f64; 3] {
        let mut p = [0.0; 3];
        for j in PALM_JOINTS {
            let q = self.joint(t, hand.joint_offset() + j);
            for a in 0..3 {
                p[a] += q[a];
            }
        }
        p.map(|v| v / PALM_JOINTS.len() as f64)
    }
}

/// 3D gaze fixation points, one per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeSequence {
    pub points: Vec<[f64; 3]>,
}

impl GazeSequence {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "gaze sequence" });
        }
        Ok(GazeSequence { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn prefix(&self, n: usize) -> GazeSequence {
        GazeSequence {
            points: self.points[..n].to_vec(),
        }
    }

    pub fn zeros(n: usize) -> GazeSequence {
        GazeSequence {
            points: vec![[0.0; 3]; n],
        }
    }
}

/// One scene object described by 1 to 4 anchor points.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub points: Vec<[f64; 3]>,
}

impl SceneObject {
    pub fn new(kind: ObjectKind, points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() || points.len() > MAX_OBJECT_POINTS {
            return Err(Error::Config(format!(
                "object {} has {} anchor points; 1 to {} allowed",
                kind.name(),
                points.len(),
                MAX_OBJECT_POINTS
            )));
        }
        Ok(SceneObject { kind, points })
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / self.points.len() as f64)
    }

    /// 12-float code with trailing zero padding, plus the real point count.
    pub fn encode(&self) -> ([f64; OBJECT_CODE_DIM], usize) {
        let mut code = [0.0; OBJECT_CODE_DIM];
        for (i, p) in self.points.iter().enumerate() {
            code[i * 3..i * 3 + 3].copy_from_slice(p);
        }
        (code, self.points.len())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectSet {
    pub objects: Vec<SceneObject>,
}

impl ObjectSet {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// One recorded (or synthesised) grasp.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject: usize,
    pub motion: Motion,
    pub hands: MotionSequence,
    pub gaze: GazeSequence,
    pub objects: ObjectSet,
    pub target: usize,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.hands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hands.is_empty()
    }

    pub fn fps(&self) -> u32 {
        self.hands.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaze.len() != self.hands.len() {
            return Err(Error::Alignment(format!(
                "{} gaze points for {} hand frames",
                self.gaze.len(),
                self.hands.len()
            )));
        }
        if !self.objects.is_empty() && self.target >= self.objects.len() {
            return Err(Error::Index {
                index: self.target,
                size: self.objects.len(),
            });
        }
        Ok(())
    }
}

/// Hands that perform the motion, inferred from ground truth.
///
/// The hand with the larger palm travel is active; the other one counts too
/// when it travels at least half as far.
pub fn active_hands(seq: &MotionSequence) -> Vec<Hand> {
    if seq.is_empty() {
        return vec![Hand::Right];
    }
    let last = seq.len() - 1;
    let travel = |h: Hand| dist(seq.palm(0, h), seq.palm(last, h));
    let (l, r) = (travel(Hand::Left), travel(Hand::Right));
    let (main, other, tm, to) = if r >= l {
        (Hand::Right, Hand::Left, r, l)
    } else {
        (Hand::Left, Hand::Right, l, r)
    };
    if tm > 0.0 && to >= 0.5 * tm {
        let mut both = vec![main, other];
        both.sort();
        both
    } else {
        vec![main]
    }
}

/// Palm trajectory used by the position metrics: mean over `hands`.
pub fn palm_track(seq: &MotionSequence, hands: &[Hand]) -> Vec<[f64; 3]> {
    (0..seq.len())
        .map(|t| {
            let mut p = [0.0; 3];
            for &h in hands {
                let q = seq.palm(t, h);
                for a in 0..3 {
                    p[a] += q[a];
                }
            }
            p.map(|v| v / hands.len() as f64)
        })
        .collect()
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
