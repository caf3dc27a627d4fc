use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::hand::{add, mul, normalize, GraspType, V3};
use crate::data::{Hand, Motion, ObjectKind, ObjectSet, SceneObject};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Table-centred world frame: x to the subject's right, y away from the
/// subject, z up, table surface at z = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableFrame {
    pub origin: V3,
    pub half_extents: [f64; 2],
}

impl Default for TableFrame {
    fn default() -> Self {
        TableFrame {
            origin: [0.0, 0.0, 0.0],
            half_extents: [0.6, 0.4],
        }
    }
}

impl TableFrame {
    pub fn contains(&self, p: V3) -> bool {
        (p[0] - self.origin[0]).abs() <= self.half_extents[0]
            && (p[1] - self.origin[1]).abs() <= self.half_extents[1]
    }

    /// Length of the table diagonal.
    pub fn scale(&self) -> f64 {
        2.0 * (self.half_extents[0].powi(2) + self.half_extents[1].powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    Left,
    Right,
    Both,
}

/// Kinematic habits drawn once per subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectStyle {
    pub subject_id: usize,
    pub preferred: Hand,
    /// Extra duration in 4-frame steps added to the nominal length.
    pub tempo_steps: usize,
    pub rest_offset: [f64; 2],
    pub lift: f64,
    pub curve: f64,
    /// Saccade onset and duration as fractions of the sequence.
    pub gaze_onset: f64,
    pub saccade: f64,
    pub curl_gain: f64,
}

impl SubjectStyle {
    pub fn draw(rng: &mut Rng, subject_id: usize) -> Self {
        SubjectStyle {
            subject_id,
            preferred: if rng.random_bool(0.15) {
                Hand::Left
            } else {
                Hand::Right
            },
            tempo_steps: rng.random_range(0..4),
            rest_offset: [rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)],
            lift: rng.random_range(0.04..0.12),
            curve: rng.random_range(-0.05..0.05),
            gaze_onset: rng.random_range(0.02..0.06),
            saccade: rng.random_range(0.05..0.08),
            curl_gain: rng.random_range(0.9..1.1),
        }
    }

    /// Wrist rest position of `hand`, palms down near the table edge.
    pub fn rest_wrist(&self, hand: Hand) -> V3 {
        let side = match hand {
            Hand::Left => -1.0,
            Hand::Right => 1.0,
        };
        [
            side * 0.2 + side * self.rest_offset[0],
            -0.3 + self.rest_offset[1],
            0.03,
        ]
    }
}

/// One hand's job in a scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub hand: Hand,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub style: SubjectStyle,
    pub motion: Motion,
    pub objects: ObjectSet,
    pub target_index: usize,
    pub handedness: Handedness,
    pub assignments: Vec<Assignment>,
    pub table: TableFrame,
}

impl SceneSpec {
    pub fn subject_id(&self) -> usize {
        self.style.subject_id
    }

    /// Wrist target for one assignment.
    pub fn grasp_point(&self, a: &Assignment) -> V3 {
        let obj = &self.objects.objects[a.object];
        let start = self.style.rest_wrist(a.hand);
        let c = obj.centroid();
        let approach = normalize([c[0] - start[0], c[1] - start[1], 0.0]);
        let (reach, height) = grasp_geometry(obj.kind);
        add([c[0], c[1], height], mul(approach, -reach))
    }
}

pub fn grasp_type(kind: ObjectKind) -> GraspType {
    match kind {
        ObjectKind::Bottle => GraspType::A,
        ObjectKind::Paper => GraspType::B,
        ObjectKind::Book | ObjectKind::Phone => GraspType::C,
        ObjectKind::Pen | ObjectKind::Earphone => GraspType::D,
    }
}

/// (wrist stand-off from the object centre, wrist height) per kind.
fn grasp_geometry(kind: ObjectKind) -> (f64, f64) {
    match kind {
        ObjectKind::Bottle => (0.08, 0.09),
        ObjectKind::Paper => (0.12, 0.03),
        ObjectKind::Book => (0.10, 0.065),
        ObjectKind::Phone => (0.07, 0.04),
        ObjectKind::Pen => (0.06, 0.035),
        ObjectKind::Earphone => (0.06, 0.04),
    }
}

/// Anchor points of an object centred at `c` with in-plane rotation `yaw`.
pub fn object_points(kind: ObjectKind, c: [f64; 2], yaw: f64) -> Vec<V3> {
    let (cy, sy) = (yaw.cos(), yaw.sin());
    let rect = |w: f64, h: f64, z: f64| {
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|(a, b)| {
                let (x, y) = (a * w / 2.0, b * h / 2.0);
                [c[0] + x * cy - y * sy, c[1] + x * sy + y * cy, z]
            })
            .collect()
    };
    match kind {
        ObjectKind::Bottle => vec![[c[0], c[1], 0.0], [c[0], c[1], 0.22]],
        ObjectKind::Paper => rect(0.21, 0.297, 0.001),
        ObjectKind::Book => rect(0.17, 0.24, 0.035),
        ObjectKind::Phone => rect(0.075, 0.15, 0.009),
        ObjectKind::Pen => vec![
            [c[0] + 0.07 * cy, c[1] + 0.07 * sy, 0.005],
            [c[0] - 0.07 * cy, c[1] - 0.07 * sy, 0.005],
        ],
        ObjectKind::Earphone => vec![[c[0], c[1], 0.012]],
    }
}

fn footprint(kind: ObjectKind) -> f64 {
    match kind {
        ObjectKind::Paper => 0.19,
        ObjectKind::Book => 0.15,
        _ => 0.09,
    }
}

const PLACE_X: (f64, f64) = (-0.42, 0.42);
const PLACE_Y: (f64, f64) = (-0.08, 0.28);

/// Random non-overlapping positions; `near` pins an object within a radius
/// of an earlier one.
fn place(rng: &mut Rng, kinds: &[(ObjectKind, Option<(usize, f64)>)]) -> Result<Vec<[f64; 2]>> {
    for _attempt in 0..200 {
        let mut centres: Vec<[f64; 2]> = Vec::with_capacity(kinds.len());
        let mut ok = true;
        for (kind, near) in kinds {
            let mut placed = false;
            for _ in 0..100 {
                let c = match near {
                    Some((j, r)) => {
                        let a: f64 = rng.random_range(-0.6..0.6);
                        let base = centres[*j];
                        [base[0] + r * a.cos() * side_sign(base[0]), base[1] + r * a.sin()]
                    }
                    None => [
                        rng.random_range(PLACE_X.0..PLACE_X.1),
                        rng.random_range(PLACE_Y.0..PLACE_Y.1),
                    ],
                };
                let inside = c[0] >= PLACE_X.0 - 0.05
                    && c[0] <= PLACE_X.1 + 0.05
                    && c[1] >= PLACE_Y.0 - 0.05
                    && c[1] <= PLACE_Y.1 + 0.05;
                let clear = centres.iter().zip(kinds).all(|(o, (k, _))| {
                    let d = ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt();
                    d >= footprint(*kind) + footprint(*k)
                });
                if inside && clear {
                    centres.push(c);
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(centres);
        }
    }
    Err(Error::Generation("could not place objects without overlap".into()))
}

fn side_sign(x: f64) -> f64 {
    if x > 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Random scene for `motion`: the target object(s) plus distractors at
/// non-overlapping table positions, in shuffled order.
pub fn generate_scene(rng: &mut Rng, motion: Motion, style: &SubjectStyle) -> Result<SceneSpec> {
    let preferred = style.preferred;
    // (kind, placement constraint, hand assigned)
    let mut layout: Vec<(ObjectKind, Option<(usize, f64)>, Option<Hand>)> = Vec::new();
    let handedness;
    let primary_slot;
    match motion {
        Motion::WriteOnPaper => {
            // dominant hand takes the pen, the other steadies the paper
            layout.push((ObjectKind::Paper, None, Some(preferred.other())));
            layout.push((ObjectKind::Pen, Some((0, 0.3)), Some(preferred)));
            handedness = Handedness::Both;
            primary_slot = 1;
        }
        Motion::PickEarphone if rng.random_bool(0.3) => {
            layout.push((ObjectKind::Earphone, None, Some(Hand::Right)));
            layout.push((ObjectKind::Earphone, Some((0, 0.2)), Some(Hand::Left)));
            handedness = Handedness::Both;
            primary_slot = if preferred == Hand::Right { 0 } else { 1 };
        }
        _ => {
            layout.push((motion.target_kind(), None, Some(preferred)));
            handedness = match preferred {
                Hand::Left => Handedness::Left,
                Hand::Right => Handedness::Right,
            };
            primary_slot = 0;
        }
    }
    let n_distractors = if layout.len() >= 2 { 1 } else { rng.random_range(1..=2) };
    let used: Vec<ObjectKind> = layout.iter().map(|l| l.0).collect();
    let pool: Vec<ObjectKind> = ObjectKind::ALL
        .into_iter()
        .filter(|k| !used.contains(k))
        .collect();
    for _ in 0..n_distractors {
        let k = pool[rng.random_range(0..pool.len())];
        layout.push((k, None, None));
    }

    let constraints: Vec<(ObjectKind, Option<(usize, f64)>)> =
        layout.iter().map(|(k, n, _)| (*k, *n)).collect();
    let mut centres = place(rng, &constraints)?;

    // the pair of earphones is placed left-to-right to match the hands
    if motion == Motion::PickEarphone && handedness == Handedness::Both && centres[0][0] < centres[1][0] {
        centres.swap(0, 1);
    }
    if motion == Motion::WriteOnPaper {
        let pen_right = centres[1][0] > centres[0][0];
        if pen_right != (preferred == Hand::Right) {
            let mirror = 2.0 * centres[0][0] - centres[1][0];
            if mirror.abs() <= PLACE_X.1 + 0.05 {
                centres[1][0] = mirror;
            }
        }
    }

    let mut objects = Vec::with_capacity(layout.len());
    for ((kind, _, _), c) in layout.iter().zip(&centres) {
        let yaw = rng.random_range(-0.5..0.5);
        objects.push(SceneObject::new(*kind, object_points(*kind, *c, yaw))?);
    }

    // shuffle so the target position in the list carries no information
    let mut order: Vec<usize> = (0..objects.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let position = |slot: usize| order.iter().position(|&o| o == slot).unwrap();
    let shuffled: Vec<SceneObject> = order.iter().map(|&o| objects[o].clone()).collect();
    let mut assignments: Vec<Assignment> = layout
        .iter()
        .enumerate()
        .filter_map(|(slot, (_, _, hand))| {
            hand.map(|h| Assignment {
                hand: h,
                object: position(slot),
            })
        })
        .collect();
    assignments.sort_by_key(|a| a.hand);

    Ok(SceneSpec {
        style: style.clone(),
        motion,
        objects: ObjectSet { objects: shuffled },
        target_index: position(primary_slot),
        handedness,
        assignments,
        table: TableFrame::default(),
    })
}
