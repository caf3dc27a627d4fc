//! Schematic 21-joint hand skeleton.

use crate::data::{Hand, JOINTS_PER_HAND};

pub(crate) type V3 = [f64; 3];

pub(crate) fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn mul(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot3(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: V3) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn normalize(a: V3) -> V3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        mul(a, 1.0 / n)
    }
}

/// Grasp taxonomy classes used by the motion table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraspType {
    /// Cylindrical power grasp (bottle).
    A,
    /// Flat pinch (paper).
    B,
    /// Wide grip (book, phone).
    C,
    /// Precision pinch (pen, earphone).
    D,
}

impl GraspType {
    /// Closed-pose curl per finger: thumb, index, middle, ring, pinky.
    fn curls(self) -> [f64; 5] {
        match self {
            GraspType::A => [0.7, 0.85, 0.9, 0.9, 0.9],
            GraspType::B => [0.3, 0.2, 0.2, 0.2, 0.2],
            GraspType::C => [0.5, 0.55, 0.6, 0.6, 0.6],
            GraspType::D => [0.8, 0.9, 0.6, 0.5, 0.5],
        }
    }

    /// Wrist roll about the pointing axis at closure, radians.
    fn roll(self) -> f64 {
        match self {
            GraspType::A => 1.2,
            GraspType::B => 0.0,
            GraspType::C => 0.3,
            GraspType::D => 0.1,
        }
    }
}

const FLAT_CURL: f64 = 0.05;

/// Finger bases in (forward, thumb-side, up) hand coordinates.
const BASES: [V3; 5] = [
    [0.025, 0.025, -0.01],
    [0.085, 0.022, 0.0],
    [0.09, 0.0, 0.0],
    [0.085, -0.02, 0.0],
    [0.075, -0.038, 0.0],
];

const SEGMENTS: [[f64; 3]; 5] = [
    [0.035, 0.032, 0.028],
    [0.04, 0.025, 0.02],
    [0.045, 0.028, 0.022],
    [0.042, 0.026, 0.02],
    [0.032, 0.02, 0.018],
];

const FINGER_BEND: [f64; 3] = [1.0, 1.2, 0.8];
const THUMB_BEND: [f64; 3] = [0.3, 0.6, 0.5];

/// Pose parameters for one hand at one instant.
#[derive(Clone, Copy, Debug)]
pub struct HandPose {
    pub wrist: V3,
    /// Heading of the fingers in the table plane, radians from +x.
    pub heading: f64,
    /// Blend from flat (0) to the closed grasp pose (1).
    pub closure: f64,
    pub grasp: GraspType,
    pub curl_gain: f64,
}

/// World positions of the 21 joints.
pub fn joints(hand: Hand, pose: &HandPose) -> [V3; JOINTS_PER_HAND] {
    let f = [pose.heading.cos(), pose.heading.sin(), 0.0];
    let up0 = [0.0, 0.0, 1.0];
    // f x up points to the right of the pointing direction
    let right = [pose.heading.sin(), -pose.heading.cos(), 0.0];
    let thumb0 = match hand {
        Hand::Right => mul(right, -1.0),
        Hand::Left => right,
    };
    let c = pose.closure.clamp(0.0, 1.0);
    let roll = pose.grasp.roll() * c;
    let t = add(mul(thumb0, roll.cos()), mul(up0, roll.sin()));
    let u = sub(mul(up0, roll.cos()), mul(thumb0, roll.sin()));
    let to_world = |p: V3| add(pose.wrist, add(add(mul(f, p[0]), mul(t, p[1])), mul(u, p[2])));

    let closed = pose.grasp.curls();
    let mut out = [[0.0; 3]; JOINTS_PER_HAND];
    out[0] = pose.wrist;
    for finger in 0..5 {
        let curl = (FLAT_CURL + (closed[finger] - FLAT_CURL) * c * pose.curl_gain).clamp(0.0, 1.0);
        let mut p = to_world(BASES[finger]);
        out[1 + finger * 4] = p;
        let mut phi = 0.0;
        for seg in 0..3 {
            let dir = if finger == 0 {
                phi += THUMB_BEND[seg] * curl;
                let d0 = normalize(add(mul(f, 0.6), mul(t, 0.8)));
                let w = normalize(add(add(mul(f, 0.4), mul(t, -0.7)), mul(u, -0.6)));
                normalize(add(mul(d0, phi.cos()), mul(w, phi.sin())))
            } else {
                phi += FINGER_BEND[seg] * curl;
                sub(mul(f, phi.cos()), mul(u, phi.sin()))
            };
            p = add(p, mul(dir, SEGMENTS[finger][seg]));
            out[2 + finger * 4 + seg] = p;
        }
    }
    out
}
