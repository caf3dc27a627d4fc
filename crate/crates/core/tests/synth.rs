use gzm_core::data::{Motion, ObjectKind, Sample, POSE_DIM};
use gzm_core::rng::stream;
use gzm_core::synth::io::{read_dataset, write_dataset};
use gzm_core::synth::{
    add_joint_noise, build_dataset, build_trajectories, check_split, generate_scene, split_cs_cm_csm,
    subject_style, NoiseSpec, SynthConfig, TableFrame, Validation, FOLDS,
};

fn small() -> SynthConfig {
    SynthConfig {
        subjects: 5,
        grasps_per_object: 2,
        ..SynthConfig::default()
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn default_corpus_has_465_samples() {
    let data = build_dataset(&SynthConfig::default()).unwrap();
    assert_eq!(data.len(), 465);
    for m in Motion::SINGLE_OBJECT {
        assert_eq!(data.iter().filter(|s| s.motion == m).count(), 75);
    }
    assert_eq!(data.iter().filter(|s| s.motion == Motion::WriteOnPaper).count(), 15);
}

#[test]
fn anchor_point_counts_follow_object_kind() {
    let style = subject_style(&SynthConfig::default(), 0);
    for seed in 0..20 {
        let mut rng = stream(seed, &[]);
        let pen = generate_scene(&mut rng, Motion::PickPen, &style).unwrap();
        assert_eq!(pen.objects.objects[pen.target_index].kind, ObjectKind::Pen);
        assert_eq!(pen.objects.objects[pen.target_index].encode().1, 2);
        let paper = generate_scene(&mut rng, Motion::MovePaper, &style).unwrap();
        assert_eq!(paper.objects.objects[paper.target_index].encode().1, 4);
        assert!((2..=3).contains(&pen.objects.len()));
    }
}

#[test]
fn scenes_are_deterministic() {
    let style = subject_style(&SynthConfig::default(), 4);
    let a = generate_scene(&mut stream(11, &[]), Motion::PickBottle, &style).unwrap();
    let b = generate_scene(&mut stream(11, &[]), Motion::PickBottle, &style).unwrap();
    assert_eq!(a, b);
}

#[test]
fn write_on_paper_uses_both_hands_with_paper_and_pen() {
    let traj = build_trajectories(&small()).unwrap();
    for t in traj.iter().filter(|t| t.sample.motion == Motion::WriteOnPaper) {
        let kinds: Vec<_> = t.scene.objects.objects.iter().map(|o| o.kind).collect();
        assert!(kinds.contains(&ObjectKind::Paper) && kinds.contains(&ObjectKind::Pen));
        assert_eq!(t.scene.assignments.len(), 2);
        assert!(t.scene.objects.len() <= 3);
    }
}

#[test]
fn trajectories_satisfy_construction_invariants() {
    let table = TableFrame::default();
    let traj = build_trajectories(&small()).unwrap();
    for t in &traj {
        let s = &t.sample;
        let n = s.len();
        for (hand, goal) in &t.grasp_points {
            let wrist = s.hands.joint(n - 1, hand.joint_offset());
            assert!(dist(wrist, *goal) < 0.02, "end wrist {:?} vs {:?}", wrist, goal);
            // no teleporting
            for i in 1..n {
                let step = dist(s.hands.joint(i, hand.joint_offset()), s.hands.joint(i - 1, hand.joint_offset()));
                assert!(step <= table.scale() / 8.0, "step {}", step);
            }
            // palms start near the table edge
            let start = s.hands.joint(0, hand.joint_offset());
            assert!(start[1] < -0.2, "{:?}", start);
        }
        let target = s.objects.objects[s.target].centroid();
        for i in 0..n {
            if i as f64 > 0.3 * n as f64 {
                assert!(dist(s.gaze.points[i], target) < 0.01);
            }
        }
        assert!(s.hands.as_slice().iter().all(|v| v.abs() <= 5.0));
        for o in &s.objects.objects {
            assert!(table.contains(o.centroid()));
        }
    }
}

#[test]
fn gaze_reaches_target_before_hand_covers_half_its_path() {
    for t in build_trajectories(&small()).unwrap() {
        let s = &t.sample;
        let target = s.objects.objects[s.target].centroid();
        let (hand, goal) = t.grasp_points[0];
        let start = s.hands.joint(0, hand.joint_offset());
        let total = dist(start, goal);
        let half = (0..s.len())
            .find(|&i| dist(start, s.hands.joint(i, hand.joint_offset())) >= 0.5 * total)
            .unwrap();
        let fix = (0..s.len()).find(|&i| dist(s.gaze.points[i], target) < 0.01).unwrap();
        assert!(fix < half, "fixation {} hand half {}", fix, half);
    }
}

#[test]
fn durations_correlate_within_subjects() {
    let data = build_dataset(&SynthConfig::default()).unwrap();
    let lens: Vec<f64> = data.iter().map(|s| s.len() as f64).collect();
    let (mut within, mut nw, mut across, mut na) = (0.0, 0.0, 0.0, 0.0);
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            let c = (lens[i] - mean) * (lens[j] - mean);
            if data[i].subject == data[j].subject {
                within += c;
                nw += 1.0;
            } else {
                across += c;
                na += 1.0;
            }
        }
    }
    assert!(within / nw > across / na + 1.0, "{} vs {}", within / nw, across / na);
}

#[test]
fn dataset_is_a_pure_function_of_config() {
    let a = build_dataset(&small()).unwrap();
    let b = build_dataset(&small()).unwrap();
    assert_eq!(a, b);
    let c = build_dataset(&SynthConfig { seed: 8, ..small() }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn noise_mean_norm_matches_requested_error() {
    let n = 100_000 / 42 + 1;
    let seq = gzm_core::data::MotionSequence::new(vec![0.0; n * POSE_DIM], 30).unwrap();
    for e in [0.1, 0.2, 0.3] {
        let mut rng = stream(5, &[]);
        let noisy = add_joint_noise(&seq, &NoiseSpec::new(e).unwrap(), &mut rng).unwrap();
        let norms: Vec<f64> = noisy.as_slice().chunks(3).map(|p| dist([p[0], p[1], p[2]], [0.0; 3])).collect();
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        assert!((mean / e - 1.0).abs() < 0.02, "e={} mean={}", e, mean);
    }
}

#[test]
fn paired_noise_is_identical_for_equal_seeds() {
    let data = build_dataset(&small()).unwrap();
    let spec = NoiseSpec::new(0.2).unwrap();
    let a = add_joint_noise(&data[0].hands, &spec, &mut stream(3, &[9])).unwrap();
    let b = add_joint_noise(&data[0].hands, &spec, &mut stream(3, &[9])).unwrap();
    assert_eq!(a, b);
}

#[test]
fn splits_are_sound_for_every_fold_and_mode() {
    let data = build_dataset(&SynthConfig::default()).unwrap();
    for mode in Validation::ALL {
        for fold in 0..FOLDS {
            let split = split_cs_cm_csm(&data, fold, mode).unwrap();
            check_split(&data, &split, mode).unwrap();
            assert!(!split.train.is_empty() && !split.test.is_empty());
            if mode != Validation::CrossMotion {
                let subjects = |idx: &[usize]| {
                    idx.iter().map(|&i| data[i].subject).collect::<std::collections::BTreeSet<_>>().len()
                };
                assert_eq!(subjects(&split.train), 12);
                assert_eq!(subjects(&split.test), 3);
            }
        }
    }
    assert!(split_cs_cm_csm(&data, 5, Validation::CrossSubject).is_err());
}

#[test]
fn dataset_file_round_trip_is_bitwise() {
    let data: Vec<Sample> = build_dataset(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&data, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, data);
    let first = std::fs::read(&path).unwrap();
    write_dataset(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}
