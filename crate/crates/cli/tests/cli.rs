use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gzm_core::synth::read_dataset;

const TINY: &str = r#"{
  "vqvae": {"hidden_channels": 16, "epochs": 3, "codebook_size": 16, "code_dim": 8},
  "generator": {"model_dim": 16, "heads": 2, "epochs": 2, "gaze_dim": 4},
  "grid": {"validations": ["CS", "CM"], "folds": [0], "input_frames": [8, 44], "noise_levels": [0.1]}
}"#;

fn gzm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gzm"))
        .current_dir(dir)
        .args(args)
        .env_remove("GZM_JOBS")
        .output()
        .expect("run gzm")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    ok(&gzm(dir.path(), &["synth", "--subjects", "5", "--out", "d.jsonl"]));
    dir
}

#[test]
fn synth_counts_hash_and_overwrite_guard() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(read_dataset(&p.join("d.jsonl")).unwrap().len(), 155);
    let again = gzm(p, &["synth", "--subjects", "5", "--out", "d.jsonl"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&gzm(p, &["synth", "--subjects", "5", "--out", "e.jsonl"]));
    assert_eq!(fs::read(p.join("d.jsonl")).unwrap(), fs::read(p.join("e.jsonl")).unwrap());
    ok(&gzm(p, &["synth", "--subjects", "5", "--seed", "8", "--out", "d.jsonl", "--force"]));
    assert_ne!(fs::read(p.join("d.jsonl")).unwrap(), fs::read(p.join("e.jsonl")).unwrap());
    let echo = fs::read_to_string(p.join("d.jsonl.config.json")).unwrap();
    assert!(echo.contains("\"seed\": 8"));
}

#[test]
fn default_synth_has_465_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = gzm(dir.path(), &["synth", "--out", "d.jsonl"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("465 samples"));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"vqvae": {"codebok_size": 8}}"#).unwrap();
    let out = gzm(dir.path(), &["synth", "--config", "bad.json", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn training_chain_is_reproducible() {
    let dir = setup();
    let p = dir.path();
    let missing = gzm(
        p,
        &["train-generator", "--config", "tiny.json", "--data", "d.jsonl", "--vqvae", "vq.ckpt", "--out", "g.ckpt"],
    );
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("train-vqvae"));

    for out in ["vq.ckpt", "vq2.ckpt"] {
        ok(&gzm(p, &["train-vqvae", "--config", "tiny.json", "--data", "d.jsonl", "--out", out]));
    }
    assert_eq!(fs::read(p.join("vq.ckpt")).unwrap(), fs::read(p.join("vq2.ckpt")).unwrap());
    assert_eq!(&fs::read(p.join("vq.ckpt")).unwrap()[..4], b"GZMV");
    let loss = fs::read_to_string(p.join("vq.ckpt.loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,loss,recon,embed,commit,batch_loss,dead_codes\n"));
    assert_eq!(loss.lines().count(), 4);

    for out in ["g.ckpt", "g2.ckpt"] {
        ok(&gzm(
            p,
            &[
                "train-generator", "--config", "tiny.json", "--data", "d.jsonl", "--vqvae", "vq.ckpt", "--gaze", "off",
                "--fusion", "summation", "--out", out,
            ],
        ));
    }
    assert_eq!(fs::read(p.join("g.ckpt")).unwrap(), fs::read(p.join("g2.ckpt")).unwrap());
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("g.ckpt.config.json")).unwrap()).unwrap();
    assert_eq!(echo["generator"]["gaze"], false);
    assert_eq!(echo["generator"]["fusion"], "summation");
}

#[test]
fn predict_and_top_view() {
    let dir = setup();
    let p = dir.path();
    ok(&gzm(p, &["train-vqvae", "--config", "tiny.json", "--data", "d.jsonl", "--out", "vq.ckpt"]));
    ok(&gzm(
        p,
        &["train-generator", "--config", "tiny.json", "--data", "d.jsonl", "--vqvae", "vq.ckpt", "--out", "g.ckpt"],
    ));
    let data = read_dataset(&p.join("d.jsonl")).unwrap();
    let index = data.iter().position(|s| s.len() == 48).expect("a 48-frame sample").to_string();

    let bad = gzm(p, &["predict", "--ckpt", "g.ckpt", "--input", "d.jsonl", "--frames", "6", "--out", "p.jsonl"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("l = 4"));

    let out = gzm(
        p,
        &["predict", "--ckpt", "g.ckpt", "--input", "d.jsonl", "--index", &index, "--frames", "8", "--out", "p.jsonl"],
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("40 predicted frames"));
    let preds = read_dataset(&p.join("p.jsonl")).unwrap();
    let truth = &data[index.parse::<usize>().unwrap()];
    // Partial predictions from 8, 16, 24, 32 and 40 frames.
    assert_eq!(preds.len(), 5);
    for (k, pred) in preds.iter().enumerate() {
        assert_eq!(pred.len(), 48);
        let tau = 8 + 8 * k;
        assert_eq!(pred.hands.prefix(tau), truth.hands.prefix(tau));
        assert_eq!(pred.gaze, truth.gaze);
    }

    ok(&gzm(
        p,
        &["plot", "--prediction", "p.jsonl", "--input", "d.jsonl", "--index", &index, "--out", "top.svg"],
    ));
    let svg = fs::read_to_string(p.join("top.svg")).unwrap();
    assert!(svg.contains(r#"class="start""#) && svg.contains(r#"class="target""#));
    assert!(svg.contains(r#"class="target-zone""#));
    assert_eq!(svg.matches("marker-end").count(), 5);
}

#[test]
fn evaluate_is_byte_identical_across_runs_and_jobs() {
    let dir = setup();
    let p = dir.path();
    let args = ["evaluate", "--config", "tiny.json", "--data", "d.jsonl", "--out"];
    let first = gzm(p, &[&args[..], &["r1.csv"]].concat());
    let code = first.status.code();
    assert!(matches!(code, Some(0) | Some(5)), "{:?}", first);
    let second = Command::new(env!("CARGO_BIN_EXE_gzm"))
        .current_dir(p)
        .args(args)
        .arg("r2.csv")
        .env("GZM_JOBS", "3")
        .output()
        .unwrap();
    assert_eq!(second.status.code(), code);
    let a = fs::read(p.join("r1.csv")).unwrap();
    assert_eq!(a, fs::read(p.join("r2.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("validation,fold,fusion,gaze,input_frames,noise_e,metric,value,units\n"));
    assert!(p.join("r1.csv.config.json").exists());
    assert!(p.join("r1.csv.summary.csv").exists());

    ok(&gzm(p, &["plot", "--report", "r1.csv", "--out", "plots"]));
    let svg = fs::read_to_string(p.join("plots/frames_end_pose.svg")).unwrap();
    assert_eq!(svg.matches(r#"data-label="VQ-VAE floor""#).count(), 2);
}

#[test]
fn ablate_and_noise_sweep_shapes() {
    let dir = setup();
    let p = dir.path();
    let run = |cmd: &str, out: &str| {
        let o = gzm(p, &[cmd, "--config", "tiny.json", "--data", "d.jsonl", "--out", out]);
        assert!(matches!(o.status.code(), Some(0) | Some(5)), "{:?}", o);
        gzm_core::eval::read_csv(&p.join(out)).unwrap()
    };
    let rows = run("ablate", "a.csv");
    let mut fusions: Vec<String> = rows.iter().map(|r| r.fusion.to_string()).collect();
    fusions.sort();
    fusions.dedup();
    assert_eq!(fusions, ["convolution", "linear", "summation"]);
    assert!(rows.iter().all(|r| r.gaze && r.noise_e == 0.0));

    let rows = run("noise-sweep", "n.csv");
    assert!(rows.iter().all(|r| r.input_frames == 8 && r.noise_e > 0.0));
    assert!(rows.iter().all(|r| r.units.ends_with("^2")));
}

fn loss_column(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "loss").unwrap();
    r.records().map(|rec| rec.unwrap()[col].parse().unwrap()).collect()
}

/// Rolling means over 5 epochs must not increase.
fn assert_smoothed_non_increasing(loss: &[f64]) {
    let means: Vec<f64> = loss.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for (e, w) in means.windows(2).enumerate() {
        assert!(w[1] <= w[0], "smoothed loss rises after epoch {}: {} -> {}", e + 4, w[0], w[1]);
    }
}

#[test]
fn generator_loss_curve_is_non_increasing_under_smoothing() {
    let dir = setup();
    let p = dir.path();
    fs::write(
        p.join("curve.json"),
        r#"{"vqvae": {"hidden_channels": 16, "epochs": 10, "codebook_size": 16, "code_dim": 8},
            "generator": {"model_dim": 16, "heads": 2, "epochs": 20, "gaze_dim": 4}}"#,
    )
    .unwrap();
    ok(&gzm(p, &["train-vqvae", "--config", "curve.json", "--data", "d.jsonl", "--out", "vq.ckpt"]));
    ok(&gzm(
        p,
        &["train-generator", "--config", "curve.json", "--data", "d.jsonl", "--vqvae", "vq.ckpt", "--out", "g.ckpt"],
    ));
    let loss = loss_column(&p.join("g.ckpt.loss.csv"));
    assert_eq!(loss.len(), 20);
    assert_smoothed_non_increasing(&loss);
}

/// Default VQ-VAE on the full dataset. Fails: the embedding and commitment
/// terms keep oscillating at the plateau (see the README).
#[test]
#[ignore = "several minutes; known failure"]
fn default_vqvae_loss_curve_is_non_increasing_under_smoothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&gzm(p, &["synth", "--out", "d.jsonl"]));
    ok(&gzm(p, &["train-vqvae", "--data", "d.jsonl", "--out", "vq.ckpt"]));
    assert_smoothed_non_increasing(&loss_column(&p.join("vq.ckpt.loss.csv")));
}
