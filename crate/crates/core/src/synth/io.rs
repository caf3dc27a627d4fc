//! JSON Lines dataset files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{GazeSequence, Motion, MotionSequence, ObjectKind, ObjectSet, Sample, SceneObject};
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    kind: ObjectKind,
    points: Vec<[f64; 3]>,
}

// field order here is the on-disk order
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    v: u32,
    subject: usize,
    motion: Motion,
    fps: u32,
    frames: Vec<Vec<f64>>,
    gaze: Vec<[f64; 3]>,
    objects: Vec<ObjectRecord>,
    target: usize,
}

#[derive(Deserialize)]
struct VersionProbe {
    v: Option<u32>,
}

impl SampleRecord {
    fn from_sample(s: &Sample) -> Self {
        SampleRecord {
            v: DATASET_VERSION,
            subject: s.subject,
            motion: s.motion,
            fps: s.fps(),
            frames: s.hands.rows(),
            gaze: s.gaze.points.clone(),
            objects: s
                .objects
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    kind: o.kind,
                    points: o.points.clone(),
                })
                .collect(),
            target: s.target,
        }
    }

    fn into_sample(self) -> Result<Sample> {
        let objects = self
            .objects
            .into_iter()
            .map(|o| SceneObject::new(o.kind, o.points))
            .collect::<Result<Vec<_>>>()?;
        let sample = Sample {
            subject: self.subject,
            motion: self.motion,
            hands: MotionSequence::from_frames(&self.frames, self.fps)?,
            gaze: GazeSequence::new(self.gaze)?,
            objects: ObjectSet { objects },
            target: self.target,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Serialise one sample as a single JSON line (no trailing newline).
pub fn sample_to_json(sample: &Sample) -> Result<String> {
    Ok(serde_json::to_string(&SampleRecord::from_sample(sample))?)
}

/// Parse one line; `line` is the 1-based line number used in errors.
pub fn sample_from_json(text: &str, line: usize) -> Result<Sample> {
    let record: SampleRecord = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => {
            if let Ok(VersionProbe { v: Some(v) }) = serde_json::from_str::<VersionProbe>(text) {
                check_version(v, line)?;
            }
            return Err(Error::Parse {
                line,
                message: e.to_string(),
            });
        }
    };
    check_version(record.v, line)?;
    record.into_sample().map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line,
            message: other.to_string(),
        },
    })
}

fn check_version(v: u32, line: usize) -> Result<()> {
    if v != DATASET_VERSION {
        return Err(Error::Incompatible(format!(
            "line {}: dataset version {} (this build reads version {})",
            line, v, DATASET_VERSION
        )));
    }
    Ok(())
}

pub fn write_dataset(dataset: &[Sample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in dataset {
        let line = sample_to_json(s)?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(sample_from_json(&line, i + 1)?);
    }
    Ok(out)
}
