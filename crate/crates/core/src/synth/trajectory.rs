use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::hand::{add, dot3, joints, mul, norm, normalize, sub, HandPose, V3};
use super::scene::{grasp_type, SceneSpec};
use crate::data::{GazeSequence, Hand, MotionSequence, Sample, JOINTS_PER_HAND, POSE_DIM};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_FRAMES: usize = 16;

/// Per-axis standard deviation of the resting hand's joint jitter.
const REST_JITTER: f64 = 0.001;
/// Gaze jitter: isotropic with 5 mm RMS norm, clipped to stay inside 1 cm.
const GAZE_JITTER_RMS: f64 = 0.005;
const GAZE_JITTER_CLIP: f64 = 0.009;

/// Normalised minimum-jerk position profile on `[0, 1]`.
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Progress of frame `i` (0-based) in a `T`-frame reach: frame `T/2 - 1`
/// sits at exactly one half, the final frame at one.
pub fn frame_phase(i: usize, frames: usize) -> f64 {
    (i + 1) as f64 / frames as f64
}

/// Planar-arc reach from `start` to `end`, bulging along `bulge`.
#[derive(Clone, Copy, Debug)]
pub struct ReachPath {
    pub start: V3,
    pub end: V3,
    bulge: V3,
}

impl ReachPath {
    /// The bulge is made orthogonal to the chord so that the path is
    /// symmetric in arc length about its midpoint.
    pub fn new(start: V3, end: V3, lift: f64, curve: f64) -> Self {
        let chord = sub(end, start);
        let dir = normalize(chord);
        let lateral = normalize([-chord[1], chord[0], 0.0]);
        let raw = add([0.0, 0.0, lift], mul(lateral, curve));
        let bulge = sub(raw, mul(dir, dot3(raw, dir)));
        ReachPath { start, end, bulge }
    }

    /// Position at geometric path parameter `s` in `[0, 1]`.
    pub fn at(&self, s: f64) -> V3 {
        add(
            add(self.start, mul(sub(self.end, self.start), s)),
            mul(self.bulge, (std::f64::consts::PI * s).sin()),
        )
    }

    /// Position at time fraction `tau` under the minimum-jerk profile.
    pub fn at_time(&self, tau: f64) -> V3 {
        self.at(min_jerk(tau))
    }
}

/// Synthesised grasp with its generating scene.
#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub sample: Sample,
    pub scene: SceneSpec,
    /// Wrist target per active hand.
    pub grasp_points: Vec<(Hand, V3)>,
}

impl TrajectorySample {
    pub fn frames(&self) -> usize {
        self.sample.hands.len()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a % two_pi;
    if x > std::f64::consts::PI {
        x -= two_pi;
    } else if x < -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

fn write_hand(frame: &mut [f64], hand: Hand, pts: &[V3; JOINTS_PER_HAND]) {
    let base = hand.joint_offset() * 3;
    for (j, p) in pts.iter().enumerate() {
        frame[base + j * 3..base + j * 3 + 3].copy_from_slice(p);
    }
}

/// Render hands and gaze for `scene` over `frames` frames at `fps`.
pub fn synth_trajectory(scene: &SceneSpec, frames: usize, fps: u32, rng: &mut Rng) -> Result<TrajectorySample> {
    if frames < MIN_FRAMES {
        return Err(Error::Parameter(format!(
            "trajectory needs at least {} frames, got {}",
            MIN_FRAMES, frames
        )));
    }
    let style = &scene.style;
    let rest_heading = std::f64::consts::FRAC_PI_2;

    struct Active {
        hand: Hand,
        path: ReachPath,
        heading_end: f64,
        grasp: super::hand::GraspType,
    }
    let mut active = Vec::new();
    let mut grasp_points = Vec::new();
    for a in &scene.assignments {
        let start = style.rest_wrist(a.hand);
        let end = scene.grasp_point(a);
        if !scene.table.contains(end) {
            return Err(Error::Generation(format!(
                "grasp point {:?} lies outside the table",
                end
            )));
        }
        let chord = sub(end, start);
        // mirror the lateral bow for the left hand
        let curve = match a.hand {
            Hand::Right => style.curve,
            Hand::Left => -style.curve,
        };
        active.push(Active {
            hand: a.hand,
            path: ReachPath::new(start, end, style.lift, curve),
            heading_end: chord[1].atan2(chord[0]),
            grasp: grasp_type(scene.objects.objects[a.object].kind),
        });
        grasp_points.push((a.hand, end));
    }

    let rest_noise = Normal::new(0.0, REST_JITTER).expect("valid std");
    let gaze_noise = Normal::new(0.0, GAZE_JITTER_RMS / 3f64.sqrt()).expect("valid std");

    let mut hands = vec![0.0; frames * POSE_DIM];
    for i in 0..frames {
        let tau = frame_phase(i, frames);
        let s = min_jerk(tau);
        let frame = &mut hands[i * POSE_DIM..(i + 1) * POSE_DIM];
        for hand in [Hand::Left, Hand::Right] {
            match active.iter().find(|a| a.hand == hand) {
                Some(a) => {
                    let heading = rest_heading + s * wrap_angle(a.heading_end - rest_heading);
                    let pose = HandPose {
                        wrist: a.path.at(s),
                        heading,
                        closure: smoothstep((s - 0.75) / 0.25),
                        grasp: a.grasp,
                        curl_gain: style.curl_gain,
                    };
                    write_hand(frame, hand, &joints(hand, &pose));
                }
                None => {
                    let pose = HandPose {
                        wrist: style.rest_wrist(hand),
                        heading: rest_heading,
                        closure: 0.0,
                        grasp: super::hand::GraspType::B,
                        curl_gain: 1.0,
                    };
                    let mut pts = joints(hand, &pose);
                    for p in pts.iter_mut() {
                        for v in p.iter_mut() {
                            *v += rest_noise.sample(rng);
                        }
                    }
                    write_hand(frame, hand, &pts);
                }
            }
        }
    }

    // gaze: rest on the workspace near the hands, saccade to the target, fixate
    let target = scene.objects.objects[scene.target_index].centroid();
    let home = [
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.18..-0.1),
        0.0,
    ];
    let mut gaze = Vec::with_capacity(frames);
    for i in 0..frames {
        let tau = frame_phase(i, frames);
        let g = min_jerk((tau - style.gaze_onset) / style.saccade);
        let base = add(home, mul(sub(target, home), g));
        let mut jitter = [
            gaze_noise.sample(rng),
            gaze_noise.sample(rng),
            gaze_noise.sample(rng),
        ];
        let n = norm(jitter);
        if n > GAZE_JITTER_CLIP {
            jitter = mul(jitter, GAZE_JITTER_CLIP / n);
        }
        gaze.push(add(base, jitter));
    }

    let sample = Sample {
        subject: style.subject_id,
        motion: scene.motion,
        hands: MotionSequence::new(hands, fps)?,
        gaze: GazeSequence::new(gaze)?,
        objects: scene.objects.clone(),
        target: scene.target_index,
    };
    Ok(TrajectorySample {
        sample,
        scene: scene.clone(),
        grasp_points,
    })
}
