//! Cross-subject (CS), cross-motion (CM) and cross-subject-and-motion (CSM)
//! train/test construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Motion, Sample};
use crate::error::{Error, Result};

pub const FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Validation {
    #[serde(rename = "CS")]
    CrossSubject,
    #[serde(rename = "CM")]
    CrossMotion,
    #[serde(rename = "CSM")]
    CrossSubjectMotion,
}

impl Validation {
    pub const ALL: [Validation; 3] = [
        Validation::CrossSubject,
        Validation::CrossMotion,
        Validation::CrossSubjectMotion,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Validation::CrossSubject => "CS",
            Validation::CrossMotion => "CM",
            Validation::CrossSubjectMotion => "CSM",
        }
    }

    /// Validations with identical training sets share trained models.
    pub fn training_group(self) -> TrainingGroup {
        match self {
            Validation::CrossSubject | Validation::CrossSubjectMotion => TrainingGroup::HeldOutSubjects,
            Validation::CrossMotion => TrainingGroup::AllSubjects,
        }
    }
}

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Validation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Validation::ALL
            .into_iter()
            .find(|v| v.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown validation mode {:?}", s)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainingGroup {
    HeldOutSubjects,
    AllSubjects,
}

/// Indices into the dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Subjects tested in `fold`: contiguous, balanced chunks of the sorted ids.
pub fn fold_subjects(dataset: &[Sample], fold: usize) -> Vec<usize> {
    let subjects: Vec<usize> = dataset
        .iter()
        .map(|s| s.subject)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = subjects.len();
    subjects
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i * FOLDS / n == fold)
        .map(|(_, s)| s)
        .collect()
}

/// Occurrence index of each sample within its (subject, motion) group.
pub fn repetition_index(dataset: &[Sample]) -> Vec<usize> {
    let mut seen: BTreeMap<(usize, Motion), usize> = BTreeMap::new();
    dataset
        .iter()
        .map(|s| {
            let c = seen.entry((s.subject, s.motion)).or_insert(0);
            *c += 1;
            *c - 1
        })
        .collect()
}

/// Build the train/test index sets of one fold.
///
/// * CS: test on the fold's subjects performing training motions.
/// * CM: every subject on both sides; train on training motions with the
///   fold's repetition left out, test on the held-out motions.
/// * CSM: test on the fold's subjects performing held-out motions.
///
/// Held-out motions never enter a training set.
pub fn split_cs_cm_csm(dataset: &[Sample], fold: usize, mode: Validation) -> Result<Split> {
    if fold >= FOLDS {
        return Err(Error::Parameter(format!("fold {} out of range 0..{}", fold, FOLDS)));
    }
    let n_subjects = dataset.iter().map(|s| s.subject).collect::<BTreeSet<_>>().len();
    if n_subjects < FOLDS {
        return Err(Error::Parameter(format!(
            "{} subjects cannot form {} folds",
            n_subjects, FOLDS
        )));
    }
    if !dataset.iter().any(|s| s.motion.is_held_out()) {
        return Err(Error::Parameter("dataset contains no held-out motions".into()));
    }
    let test_subjects: BTreeSet<usize> = fold_subjects(dataset, fold).into_iter().collect();
    let reps = repetition_index(dataset);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in dataset.iter().enumerate() {
        let held_motion = s.motion.is_held_out();
        let held_subject = test_subjects.contains(&s.subject);
        match mode {
            Validation::CrossSubject | Validation::CrossSubjectMotion => {
                if held_subject {
                    let wanted = (mode == Validation::CrossSubjectMotion) == held_motion;
                    if wanted {
                        split.test.push(i);
                    }
                } else if !held_motion {
                    split.train.push(i);
                }
            }
            Validation::CrossMotion => {
                if held_motion {
                    split.test.push(i);
                } else if reps[i] % FOLDS != fold {
                    split.train.push(i);
                }
            }
        }
    }
    Ok(split)
}

/// Check the disjointness rules of `mode`; returns a description of the
/// first violation.
pub fn check_split(dataset: &[Sample], split: &Split, mode: Validation) -> std::result::Result<(), String> {
    let train: BTreeSet<usize> = split.train.iter().copied().collect();
    if let Some(i) = split.test.iter().find(|i| train.contains(i)) {
        return Err(format!("sample {} is in both train and test", i));
    }
    if let Some(&i) = split.train.iter().find(|&&i| dataset[i].motion.is_held_out()) {
        return Err(format!(
            "held-out motion {} in training sample {}",
            dataset[i].motion.name(),
            i
        ));
    }
    let subjects = |idx: &[usize]| idx.iter().map(|&i| dataset[i].subject).collect::<BTreeSet<_>>();
    let motions = |idx: &[usize]| idx.iter().map(|&i| dataset[i].motion).collect::<BTreeSet<_>>();
    let (ts, es) = (subjects(&split.train), subjects(&split.test));
    let (tm, em) = (motions(&split.train), motions(&split.test));
    match mode {
        Validation::CrossSubject => {
            if !ts.is_disjoint(&es) {
                return Err("CS train and test share subjects".into());
            }
            if !em.is_subset(&tm) {
                return Err("CS test motions not seen in training".into());
            }
        }
        Validation::CrossMotion => {
            if !tm.is_disjoint(&em) {
                return Err("CM train and test share motions".into());
            }
            if ts != es {
                return Err("CM train and test subject sets differ".into());
            }
        }
        Validation::CrossSubjectMotion => {
            if !ts.is_disjoint(&es) {
                return Err("CSM train and test share subjects".into());
            }
            if !tm.is_disjoint(&em) {
                return Err("CSM train and test share motions".into());
            }
        }
    }
    Ok(())
}
