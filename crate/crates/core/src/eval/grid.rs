//! Experimental grid: frame sweep, fusion ablation and noise sweep over the
//! CS / CM / CSM folds, with the VQ-VAE reconstruction floor alongside.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{sample_errors, SampleErrors};
use super::report::{Metric, MetricReport, ReportRow};
use crate::data::{MotionSequence, Sample};
use crate::error::{Error, Result};
use crate::generator::{generate, train_generator, Fusion, Generator, GeneratorConfig, Predictor};
use crate::rng::{derive_seed, label, stream};
use crate::synth::{add_joint_noise, check_split, split_cs_cm_csm, NoiseSpec, TrainingGroup, Validation, FOLDS};
use crate::vqvae::{train_vqvae, VqVae, VqVaeConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentGrid {
    pub validations: Vec<Validation>,
    pub folds: Vec<usize>,
    pub fusions: Vec<Fusion>,
    pub gaze: Vec<bool>,
    /// Frame sweep, run without noise.
    pub input_frames: Vec<usize>,
    /// Noise sweep levels `e` in meters, run at `noise_input_frames`.
    pub noise_levels: Vec<f64>,
    pub noise_input_frames: usize,
    /// Values are averaged over seeds within each fold.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            validations: Validation::ALL.to_vec(),
            folds: (0..FOLDS).collect(),
            fusions: vec![Fusion::Linear],
            gaze: vec![true, false],
            input_frames: (8..=44).step_by(4).collect(),
            noise_levels: vec![0.0, 0.1, 0.15, 0.2, 0.25, 0.3],
            noise_input_frames: 8,
            seeds: vec![0],
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self, downsample: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.validations.is_empty() || self.folds.is_empty() || self.seeds.is_empty() {
            return bad("grid needs at least one validation, fold and seed".into());
        }
        if self.fusions.is_empty() || self.gaze.is_empty() {
            return bad("grid needs at least one fusion and gaze flag".into());
        }
        if let Some(f) = self.folds.iter().find(|&&f| f >= FOLDS) {
            return bad(format!("fold {} out of range 0..{}", f, FOLDS));
        }
        let frames = self
            .input_frames
            .iter()
            .chain((!self.noise_levels.is_empty()).then_some(&self.noise_input_frames));
        for &t in frames {
            if t == 0 || t % downsample != 0 {
                return bad(format!("input_frames {} is not a positive multiple of l = {}", t, downsample));
            }
        }
        if let Some(e) = self.noise_levels.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return bad(format!("noise level {} must be finite and non-negative", e));
        }
        if self.cells().is_empty() {
            return bad("grid has no (input_frames, noise) cells".into());
        }
        Ok(())
    }

    /// Distinct (input frames, noise level) pairs in canonical order.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        let mut cells: Vec<(usize, f64)> = self.input_frames.iter().map(|&t| (t, 0.0)).collect();
        cells.extend(self.noise_levels.iter().map(|&e| (self.noise_input_frames, e)));
        cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        cells.dedup();
        cells
    }
}

/// Where the evaluated models come from.
#[derive(Clone, Debug)]
pub enum Models {
    /// Train a VQ-VAE per (training set, fold, seed) and a generator per
    /// (fusion, gaze) on top of it.
    Train { vqvae: VqVaeConfig, generator: GeneratorConfig },
    /// Evaluate one trained model on every fold; grid fusions and gaze flags
    /// are replaced by the model's own.
    Fixed(Box<Predictor>),
}

type Variant = (Fusion, bool);

struct TrainedJob {
    vqvae: Result<VqVae>,
    generators: Vec<(Variant, Result<Generator>)>,
}

/// Key of one aggregated value: validation, fold, variant, frames, noise bits, metric.
type CellKey = (Validation, usize, Fusion, bool, usize, u64, Metric);

#[derive(Default)]
struct Accumulator {
    sums: BTreeMap<CellKey, (f64, usize)>,
    failed: BTreeMap<CellKey, String>,
}

/// Seed for a training stage derived from the grid seed and the training set.
pub fn stage_seed(seed: u64, stage: &str, training_set: Validation, fold: usize) -> u64 {
    let group = match training_set.training_group() {
        TrainingGroup::HeldOutSubjects => 0,
        TrainingGroup::AllSubjects => 1,
    };
    derive_seed(seed, &[label(stage), group, fold as u64])
}

/// Noise applied to the observed input of test sample `index`. Independent of
/// the model, so gaze and no-gaze runs see identical corruption.
pub fn corrupt_input(
    input: &MotionSequence,
    seed: u64,
    index: usize,
    input_frames: usize,
    noise_e: f64,
) -> Result<MotionSequence> {
    if noise_e == 0.0 {
        return Ok(input.clone());
    }
    let spec = NoiseSpec::new(noise_e)?;
    let mut rng = stream(
        seed,
        &[label("noise"), index as u64, input_frames as u64, noise_e.to_bits()],
    );
    add_joint_noise(input, &spec, &mut rng)
}

/// Roll out from the first `input_frames` frames (optionally corrupted) to the
/// sample's full length and score the predicted frames.
pub fn evaluate_sample(
    predictor: &Predictor,
    sample: &Sample,
    input: &MotionSequence,
) -> Result<SampleErrors> {
    let l = predictor.vqvae.downsample();
    let tau = input.len();
    if tau >= sample.len() {
        return Err(Error::Parameter(format!(
            "input of {} frames leaves nothing to predict in a {}-frame sample",
            tau,
            sample.len()
        )));
    }
    let n_future = (sample.len() - tau).div_ceil(l);
    let pred = generate(predictor, input, &sample.gaze, &sample.objects, n_future)?;
    let mut frames = input.as_slice().to_vec();
    let keep = sample.len() - tau;
    frames.extend_from_slice(pred.future.prefix(keep).as_slice());
    let full = MotionSequence::new(frames, sample.fps())?;
    sample_errors(&sample.hands, &full, tau)
}

/// Errors of plain encode-quantize-decode on the whole sequence.
pub fn floor_errors(vqvae: &VqVae, sample: &Sample) -> Result<SampleErrors> {
    let rec = vqvae.reconstruct(&sample.hands)?;
    sample_errors(&sample.hands, &rec, 0)
}

fn train_job(
    dataset: &[Sample],
    training_set: Validation,
    fold: usize,
    seed: u64,
    variants: &[Variant],
    vq_config: &VqVaeConfig,
    gen_config: &GeneratorConfig,
) -> TrainedJob {
    let train: Result<Vec<Sample>> = split_cs_cm_csm(dataset, fold, training_set)
        .map(|s| s.train.iter().map(|&i| dataset[i].clone()).collect());
    let train = match train {
        Ok(t) => t,
        Err(e) => {
            return TrainedJob {
                vqvae: Err(e),
                generators: Vec::new(),
            }
        }
    };
    let seqs: Vec<MotionSequence> = train.iter().map(|s| s.hands.clone()).collect();
    let vq_cfg = VqVaeConfig {
        seed: stage_seed(seed, "vqvae", training_set, fold),
        ..vq_config.clone()
    };
    log::info!("training vqvae: {:?} fold {} seed {}", training_set.training_group(), fold, seed);
    let vqvae = train_vqvae(&seqs, &vq_cfg).map(|(v, _)| v);
    let generators = match &vqvae {
        Ok(vq) => variants
            .iter()
            .map(|&(fusion, gaze)| {
                let cfg = GeneratorConfig {
                    fusion,
                    gaze,
                    seed: stage_seed(seed, "generator", training_set, fold),
                    ..gen_config.clone()
                };
                log::info!("training generator: {} gaze={} fold {} seed {}", fusion, gaze, fold, seed);
                ((fusion, gaze), train_generator(vq, &train, &cfg).map(|(g, _)| g))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    TrainedJob { vqvae, generators }
}

/// Run every cell of `grid`. Training and evaluation jobs run in parallel on
/// the current rayon pool; rows come out in canonical order, so the report
/// does not depend on scheduling.
pub fn run_grid(grid: &ExperimentGrid, dataset: &[Sample], models: &Models) -> Result<MetricReport> {
    let downsample = match models {
        Models::Train { vqvae, generator } => {
            vqvae.validate()?;
            generator.validate()?;
            vqvae.downsample
        }
        Models::Fixed(p) => p.vqvae.downsample(),
    };
    grid.validate(downsample)?;
    let variants: Vec<Variant> = match models {
        Models::Train { .. } => grid
            .fusions
            .iter()
            .flat_map(|&f| grid.gaze.iter().map(move |&g| (f, g)))
            .collect(),
        Models::Fixed(p) => vec![(p.generator.config().fusion, p.generator.config().gaze)],
    };
    let cells = grid.cells();
    let mut report = MetricReport::default();

    // Split soundness for every (validation, fold) in the grid.
    let mut splits = BTreeMap::new();
    for &v in &grid.validations {
        for &fold in &grid.folds {
            let split = split_cs_cm_csm(dataset, fold, v)?;
            if let Err(m) = check_split(dataset, &split, v) {
                report.violations.push(format!("split {} fold {}: {}", v, fold, m));
            }
            splits.insert((v, fold), split);
        }
    }

    // One training job per distinct training set, fold and seed.
    let mut jobs: Vec<(Validation, usize, u64)> = Vec::new();
    for &seed in &grid.seeds {
        for &fold in &grid.folds {
            let mut seen = Vec::new();
            for &v in &grid.validations {
                if !seen.contains(&v.training_group()) {
                    seen.push(v.training_group());
                    jobs.push((v, fold, seed));
                }
            }
        }
    }
    let trained: Vec<TrainedJob> = jobs
        .par_iter()
        .map(|&(v, fold, seed)| match models {
            Models::Train { vqvae, generator } => train_job(dataset, v, fold, seed, &variants, vqvae, generator),
            Models::Fixed(p) => TrainedJob {
                vqvae: Ok(p.vqvae.clone()),
                generators: vec![(variants[0], Ok(p.generator.clone()))],
            },
        })
        .collect();

    // Evaluation units: (job, validation, variant).
    let mut units = Vec::new();
    for (j, &(tv, fold, seed)) in jobs.iter().enumerate() {
        for &v in grid.validations.iter().filter(|v| v.training_group() == tv.training_group()) {
            for &variant in &variants {
                units.push((j, v, fold, seed, variant));
            }
        }
    }
    let results: Vec<(Vec<(CellKey, f64)>, Vec<(CellKey, String)>, usize)> = units
        .par_iter()
        .map(|&(j, v, fold, seed, variant)| {
            let split = &splits[&(v, fold)];
            evaluate_unit(dataset, &split.test, &trained[j], v, fold, seed, variant, &cells)
        })
        .collect();

    let mut acc = Accumulator::default();
    for (values, failures, skipped) in results {
        report.skipped_angles += skipped;
        for (k, x) in values {
            let e = acc.sums.entry(k).or_insert((0.0, 0));
            e.0 += x;
            e.1 += 1;
        }
        for (k, m) in failures {
            acc.failed.entry(k).or_insert(m);
        }
    }
    let failed_cells: BTreeMap<(Validation, usize, Fusion, bool, usize, u64), String> = acc
        .failed
        .into_iter()
        .map(|((v, f, fu, g, t, e, _), m)| ((v, f, fu, g, t, e), m))
        .collect();
    for ((v, fold, fusion, gaze, t, e), m) in &failed_cells {
        report.failures.push(format!(
            "{} fold {} {} gaze={} frames {} noise {}: {}",
            v,
            fold,
            fusion,
            gaze,
            t,
            f64::from_bits(*e),
            m
        ));
        report.rows.push(ReportRow {
            validation: *v,
            fold: *fold,
            fusion: *fusion,
            gaze: *gaze,
            input_frames: *t,
            noise_e: f64::from_bits(*e),
            metric: Metric::CellFailed,
            value: f64::NAN,
            units: String::new(),
        });
    }
    let mut means = BTreeMap::new();
    for ((v, fold, fusion, gaze, t, e, metric), (s, n)) in acc.sums {
        if failed_cells.contains_key(&(v, fold, fusion, gaze, t, e)) {
            continue;
        }
        let value = s / n as f64;
        means.insert((v, fold, fusion, gaze, t, e, metric), value);
        report.rows.push(ReportRow {
            validation: v,
            fold,
            fusion,
            gaze,
            input_frames: t,
            noise_e: f64::from_bits(e),
            metric,
            value,
            units: metric.units().into(),
        });
    }

    // Floor dominance per cell.
    for (&(v, fold, fusion, gaze, t, e, metric), &value) in &means {
        let Some(floor_metric) = metric.floor() else { continue };
        if let Some(&floor) = means.get(&(v, fold, fusion, gaze, t, e, floor_metric)) {
            if value < floor {
                report.violations.push(format!(
                    "floor dominance: {} fold {} {} gaze={} frames {} noise {}: {} {} < floor {}",
                    v,
                    fold,
                    fusion,
                    gaze,
                    t,
                    f64::from_bits(e),
                    metric,
                    value,
                    floor
                ));
            }
        }
    }
    report.canonicalize();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_unit(
    dataset: &[Sample],
    test: &[usize],
    job: &TrainedJob,
    v: Validation,
    fold: usize,
    seed: u64,
    (fusion, gaze): Variant,
    cells: &[(usize, f64)],
) -> (Vec<(CellKey, f64)>, Vec<(CellKey, String)>, usize) {
    let key = |t: usize, e: f64, m: Metric| (v, fold, fusion, gaze, t, e.to_bits(), m);
    let fail_all = |msg: String| {
        let failures = cells
            .iter()
            .map(|&(t, e)| (key(t, e, Metric::CellFailed), msg.clone()))
            .collect();
        (Vec::new(), failures, 0)
    };
    let vqvae = match &job.vqvae {
        Ok(vq) => vq,
        Err(e) => return fail_all(format!("vqvae training failed: {}", e)),
    };
    let generator = match job.generators.iter().find(|(var, _)| *var == (fusion, gaze)) {
        Some((_, Ok(g))) => g,
        Some((_, Err(e))) => return fail_all(format!("generator training failed: {}", e)),
        None => return fail_all("generator missing".into()),
    };
    if test.is_empty() {
        return fail_all("empty test set".into());
    }
    let predictor = Predictor {
        vqvae: vqvae.clone(),
        generator: generator.clone(),
    };

    let floors: Result<Vec<SampleErrors>> = test.iter().map(|&i| floor_errors(vqvae, &dataset[i])).collect();
    let floors = match floors {
        Ok(f) => f,
        Err(e) => return fail_all(format!("floor reconstruction failed: {}", e)),
    };
    let n = test.len() as f64;
    let floor_avg = floors.iter().map(|f| f.avg_position).sum::<f64>() / n;
    let floor_end = floors.iter().map(|f| f.end_pose).sum::<f64>() / n;

    let mut values = Vec::new();
    let mut failures = Vec::new();
    let mut skipped = 0;
    for &(t, e) in cells {
        let errs: Result<Vec<SampleErrors>> = test
            .iter()
            .map(|&i| {
                let s = &dataset[i];
                let input = corrupt_input(&s.hands.prefix(t), seed, i, t, e)?;
                evaluate_sample(&predictor, s, &input)
            })
            .collect();
        let errs = match errs {
            Ok(x) => x,
            Err(err) => {
                failures.push((key(t, e, Metric::CellFailed), err.to_string()));
                continue;
            }
        };
        values.push((key(t, e, Metric::AvgPosition), errs.iter().map(|x| x.avg_position).sum::<f64>() / n));
        values.push((key(t, e, Metric::EndPose), errs.iter().map(|x| x.end_pose).sum::<f64>() / n));
        let angles: Vec<f64> = errs.iter().filter_map(|x| x.key_pose_angle).collect();
        skipped += errs.len() - angles.len();
        if !angles.is_empty() {
            values.push((
                key(t, e, Metric::KeyPoseAngle),
                angles.iter().sum::<f64>() / angles.len() as f64,
            ));
        }
        values.push((key(t, e, Metric::VqvaeFloorAvgPosition), floor_avg));
        values.push((key(t, e, Metric::VqvaeFloorEndPose), floor_end));
    }
    (values, failures, skipped)
}
