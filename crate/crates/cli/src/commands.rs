use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gzm_core::checkpoint::{load_predictor, load_vqvae, predictor_checkpoint, vqvae_checkpoint, Checkpoint};
use gzm_core::data::{active_hands, palm_track};
use gzm_core::eval::{
    plot_report, plot_top_view, read_csv, read_jsonl, run_grid, write_report, write_summary_csv, ExperimentGrid,
    MetricReport, Models, ReportFormat,
};
use gzm_core::generator::{generate, train_generator};
use gzm_core::synth::{read_dataset, split_cs_cm_csm, write_dataset};
use gzm_core::vqvae::train_vqvae;
use gzm_core::{build_dataset, Fusion, MotionSequence, RunConfig, Sample, Validation};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::{Command, Common, EvalArgs, Switch, TrainSplit};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth { common, out, subjects } => synth(&common, &out, subjects),
        Command::TrainVqvae {
            common,
            data,
            split,
            out,
        } => train_vqvae_cmd(&common, &data, &split, &out),
        Command::TrainGenerator {
            common,
            data,
            vqvae,
            split,
            gaze,
            fusion,
            out,
        } => train_generator_cmd(&common, &data, &vqvae, &split, gaze, fusion.map(Fusion::from), &out),
        Command::Predict {
            ckpt,
            input,
            index,
            frames,
            step_seconds,
            out,
            force,
        } => predict(&ckpt, &input, index, frames, step_seconds, &out, force),
        Command::Evaluate(args) => evaluate(&args, Sweep::Full, None),
        Command::Ablate(args) => evaluate(&args, Sweep::Ablation, None),
        Command::NoiseSweep { eval, frames } => evaluate(&eval, Sweep::Noise, frames),
        Command::Plot {
            report,
            prediction,
            input,
            index,
            radius,
            out,
            force,
        } => match (report, prediction, input) {
            (Some(r), None, _) => plot_report_cmd(&r, &out, force),
            (None, Some(p), Some(i)) => plot_prediction(&p, &i, index, radius, &out, force),
            _ => Err(CliError::Usage("plot needs --report, or --prediction with --input".into())),
        },
    }
}

/// `out` with `suffix` appended to its file name.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Refuse to overwrite without `--force`; create missing parent directories.
fn guard(paths: &[&Path], force: bool) -> CliResult<()> {
    for p in paths {
        if p.exists() && !force {
            return Err(CliError::Usage(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    for p in paths {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {}", dir.display(), e)))?;
        }
    }
    Ok(())
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
}

fn read_data(path: &Path) -> CliResult<Vec<Sample>> {
    if !path.exists() {
        return Err(CliError::Data(format!("dataset {} not found", path.display())));
    }
    Ok(read_dataset(path)?)
}

fn sha256_hex(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{:02x}", b)).collect())
}

fn synth(common: &Common, out: &Path, subjects: Option<usize>) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = subjects {
        cfg.synth.subjects = s;
        cfg.synth.validate()?;
    }
    let config_out = sibling(out, ".config.json");
    guard(&[out, &config_out], common.force)?;
    let data = build_dataset(&cfg.synth)?;
    write_dataset(&data, out)?;
    write_text(&config_out, &cfg.to_json()?)?;
    let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &data {
        *hist.entry(s.motion.name()).or_default() += 1;
    }
    println!("{} samples -> {}", data.len(), out.display());
    for (m, n) in hist {
        println!("  {:<16} {}", m, n);
    }
    println!("sha256 {}", sha256_hex(out)?);
    Ok(())
}

fn training_set(data: Vec<Sample>, split: &TrainSplit) -> CliResult<Vec<Sample>> {
    match (split.validation, split.fold) {
        (Some(v), Some(fold)) => {
            let s = split_cs_cm_csm(&data, fold, Validation::from(v))?;
            Ok(s.train.iter().map(|&i| data[i].clone()).collect())
        }
        _ => Ok(data),
    }
}

fn train_vqvae_cmd(common: &Common, data: &Path, split: &TrainSplit, out: &Path) -> CliResult<()> {
    let cfg = load_config(common)?;
    let loss_out = sibling(out, ".loss.csv");
    let config_out = sibling(out, ".config.json");
    guard(&[out, &loss_out, &config_out], common.force)?;
    let train = training_set(read_data(data)?, split)?;
    let seqs: Vec<MotionSequence> = train.iter().map(|s| s.hands.clone()).collect();
    let (vq, log) = train_vqvae(&seqs, &cfg.vqvae)?;
    vqvae_checkpoint(&vq, &log)?.write(out)?;
    let mut w = csv::Writer::from_path(&loss_out).map_err(gzm_core::Error::from)?;
    w.write_record(["epoch", "loss", "recon", "embed", "commit", "batch_loss", "dead_codes"])
        .map_err(gzm_core::Error::from)?;
    for e in &log.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.loss.total.to_string(),
            e.loss.recon.to_string(),
            e.loss.embed.to_string(),
            e.loss.commit.to_string(),
            e.batch_loss.total.to_string(),
            e.dead_codes.to_string(),
        ])
        .map_err(gzm_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    write_text(&config_out, &cfg.to_json()?)?;
    let last = log.epochs.last().map(|e| e.loss.total).unwrap_or(f64::NAN);
    println!("vqvae trained on {} samples, final loss {:.5} -> {}", train.len(), last, out.display());
    Ok(())
}

fn train_generator_cmd(
    common: &Common,
    data: &Path,
    vqvae: &Path,
    split: &TrainSplit,
    gaze: Option<Switch>,
    fusion: Option<Fusion>,
    out: &Path,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(g) = gaze {
        cfg.generator.gaze = matches!(g, Switch::On);
    }
    if let Some(f) = fusion {
        cfg.generator.fusion = f;
    }
    if !vqvae.exists() {
        return Err(CliError::Data(format!(
            "train-generator depends on a VQ-VAE checkpoint; {} not found (run train-vqvae first)",
            vqvae.display()
        )));
    }
    let loss_out = sibling(out, ".loss.csv");
    let config_out = sibling(out, ".config.json");
    guard(&[out, &loss_out, &config_out], common.force)?;
    let vq_ck = Checkpoint::read(vqvae)?;
    let vq = load_vqvae(&vq_ck)?;
    cfg.vqvae = vq.config().clone();
    let train = training_set(read_data(data)?, split)?;
    let (gen, log) = train_generator(&vq, &train, &cfg.generator)?;
    let vq_log = vq_ck.log.get("vqvae").cloned().unwrap_or_default();
    let predictor = gzm_core::Predictor {
        vqvae: vq,
        generator: gen,
    };
    predictor_checkpoint(&predictor, &vq_log, &log)?.write(out)?;
    let mut w = csv::Writer::from_path(&loss_out).map_err(gzm_core::Error::from)?;
    w.write_record(["epoch", "loss", "accuracy"]).map_err(gzm_core::Error::from)?;
    for e in &log.epochs {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.accuracy.to_string()])
            .map_err(gzm_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    write_text(&config_out, &cfg.to_json()?)?;
    let last = log.epochs.last();
    println!(
        "generator ({}, gaze {}) trained on {} samples, final loss {:.4}, accuracy {:.3} -> {}",
        cfg.generator.fusion,
        if cfg.generator.gaze { "on" } else { "off" },
        train.len(),
        last.map(|e| e.loss).unwrap_or(f64::NAN),
        last.map(|e| e.accuracy).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn predict(
    ckpt: &Path,
    input: &Path,
    index: usize,
    frames: usize,
    step_seconds: f64,
    out: &Path,
    force: bool,
) -> CliResult<()> {
    let predictor = load_predictor(&Checkpoint::read(ckpt)?)?;
    let l = predictor.vqvae.downsample();
    if frames < l || frames % l != 0 {
        return Err(gzm_core::Error::Parameter(format!(
            "--frames {} must be a positive multiple of l = {}",
            frames, l
        ))
        .into());
    }
    if !(step_seconds > 0.0) {
        return Err(CliError::Usage("--step-seconds must be positive".into()));
    }
    let data = read_data(input)?;
    let sample = data
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("--index {} out of range for {} samples", index, data.len())))?;
    if frames >= sample.len() {
        return Err(gzm_core::Error::Parameter(format!(
            "--frames {} leaves nothing to predict in a {}-frame sample",
            frames,
            sample.len()
        ))
        .into());
    }
    guard(&[out], force)?;
    let step = (l as f64 * (step_seconds * sample.fps() as f64 / l as f64).round()).max(l as f64) as usize;
    let mut outputs = Vec::new();
    let mut tau = frames;
    while tau < sample.len() {
        let input_hands = sample.hands.prefix(tau);
        let n_future = (sample.len() - tau).div_ceil(l);
        let pred = generate(&predictor, &input_hands, &sample.gaze, &sample.objects, n_future)?;
        let mut full = input_hands.as_slice().to_vec();
        full.extend_from_slice(pred.future.prefix(sample.len() - tau).as_slice());
        outputs.push(Sample {
            hands: MotionSequence::new(full, sample.fps())?,
            ..sample.clone()
        });
        tau += step;
    }
    write_dataset(&outputs, out)?;
    println!(
        "{} input frames, {} predicted frames, {} partial predictions every {} frames -> {}",
        frames,
        sample.len() - frames,
        outputs.len(),
        step,
        out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sweep {
    Full,
    Ablation,
    Noise,
}

fn evaluate(args: &EvalArgs, sweep: Sweep, noise_frames: Option<usize>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(g) = &args.grid {
        let text = fs::read_to_string(g).map_err(|e| CliError::Data(format!("{}: {}", g.display(), e)))?;
        cfg.grid = serde_json::from_str::<ExperimentGrid>(&text)
            .map_err(|e| gzm_core::Error::Config(format!("{}: {}", g.display(), e)))?;
        if let Some(seed) = cfg.seed {
            cfg.grid.seeds = vec![seed];
        }
    }
    match sweep {
        Sweep::Full => {}
        Sweep::Ablation => {
            cfg.grid.fusions = Fusion::ALL.to_vec();
            cfg.grid.gaze = vec![true];
            cfg.grid.noise_levels.clear();
        }
        Sweep::Noise => {
            cfg.grid.input_frames.clear();
            cfg.grid.noise_levels.retain(|&e| e > 0.0);
            if let Some(f) = noise_frames {
                cfg.grid.noise_input_frames = f;
            }
        }
    }
    let data = read_data(&args.data)?;
    let models = match &args.ckpt {
        Some(p) => Models::Fixed(Box::new(load_predictor(&Checkpoint::read(p)?)?)),
        None => Models::Train {
            vqvae: cfg.vqvae.clone(),
            generator: cfg.generator.clone(),
        },
    };
    let summary_out = sibling(&args.out, ".summary.csv");
    let config_out = sibling(&args.out, ".config.json");
    let meta_out = sibling(&args.out, ".meta.json");
    guard(&[&args.out, &summary_out, &config_out, &meta_out], args.common.force)?;
    let mut report = run_grid(&cfg.grid, &data, &models)?;
    if sweep == Sweep::Noise {
        report = report.squared();
    }
    write_report(&report, &args.out, ReportFormat::from(args.format))?;
    if !report.rows.is_empty() {
        write_summary_csv(&report.summary(), &summary_out)?;
    }
    write_text(&config_out, &cfg.to_json()?)?;
    let meta = serde_json::json!({
        "palm": "mean of the wrist and five knuckle joints, averaged over the hands that move in the ground truth",
        "scored_frames": "predicted frames only; the reconstruction floor scores every frame",
        "fold_aggregation": "unweighted mean over folds (summary file)",
        "values": if sweep == Sweep::Noise { "squared distances and angles" } else { "distances and angles" },
        "checkpoint": args.ckpt,
        "rows": report.rows.len(),
        "skipped_angles": report.skipped_angles,
        "failures": report.failures,
        "violations": report.violations,
    });
    write_text(&meta_out, &(serde_json::to_string_pretty(&meta).map_err(gzm_core::Error::from)? + "\n"))?;
    println!(
        "{} rows, {} failed cells, {} skipped angles -> {}",
        report.rows.len(),
        report.failures.len(),
        report.skipped_angles,
        args.out.display()
    );
    for f in &report.failures {
        eprintln!("failed: {}", f);
    }
    if !report.violations.is_empty() {
        return Err(CliError::Invariant(report.violations));
    }
    if !report.failures.is_empty() {
        return Err(CliError::CellsFailed(report.failures.len()));
    }
    Ok(())
}

fn read_report(path: &Path) -> CliResult<MetricReport> {
    if !path.exists() {
        return Err(CliError::Data(format!("report {} not found", path.display())));
    }
    let rows = if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(path)?
    } else {
        read_csv(path)?
    };
    Ok(MetricReport {
        rows,
        ..Default::default()
    })
}

fn plot_report_cmd(report: &Path, out_dir: &Path, force: bool) -> CliResult<()> {
    let report = read_report(report)?;
    let charts = plot_report(&report);
    if charts.is_empty() {
        log::warn!("report has no plottable rows");
        return Ok(());
    }
    let paths: Vec<PathBuf> = charts.iter().map(|(n, _)| out_dir.join(n)).collect();
    guard(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>(), force)?;
    for (p, (_, svg)) in paths.iter().zip(&charts) {
        write_text(p, svg)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn plot_prediction(prediction: &Path, input: &Path, index: usize, radius: f64, out: &Path, force: bool) -> CliResult<()> {
    let data = read_data(input)?;
    let truth = data
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("--index {} out of range for {} samples", index, data.len())))?;
    let preds = read_data(prediction)?;
    if preds.is_empty() {
        return Err(CliError::Data(format!("{} holds no predictions", prediction.display())));
    }
    guard(&[out], force)?;
    let hands = active_hands(&truth.hands);
    let path = palm_track(&truth.hands, &hands);
    let ends: Vec<[f64; 3]> = preds
        .iter()
        .filter_map(|p| palm_track(&p.hands, &hands).last().copied())
        .collect();
    write_text(out, &plot_top_view(&path, &ends, radius))?;
    println!("{}", out.display());
    Ok(())
}
