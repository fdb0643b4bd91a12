use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roa_core::io::{read_curve_csv, read_tensor};
use roa_core::scene::parse_scene_file;

const TINY: [&str; 10] = [
    "--input-size", "64x96", "--base-channels", "4", "--neck-channels", "4", "--kernel-size", "3", "--se-reduction", "2",
];

fn roa_bev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roa-bev")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = roa_bev(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn empty_scene_gives_six_zero_label_images() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("empty.json");
    ok(&["gen-synthetic", "--seed", "3", "--boxes", "0", "--out", p(&scene)]);
    let id = &parse_scene_file(&scene).unwrap()[0].id;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-labels", "--scene", p(&scene), "--out", p(&a)]);
    ok(&["gen-labels", "--scene", p(&scene), "--out", p(&b)]);
    for cam in 0..6 {
        for ext in ["pgm", "roat"] {
            let name = format!("{id}_cam{cam}.{ext}");
            let bytes = fs::read(a.join(&name)).unwrap();
            assert_eq!(bytes, fs::read(b.join(&name)).unwrap(), "{name}");
        }
        let pgm = fs::read(a.join(format!("{id}_cam{cam}.pgm"))).unwrap();
        let header = b"P5\n44 16\n255\n";
        assert!(pgm.starts_with(header));
        assert_eq!(pgm.len(), header.len() + 16 * 44);
        assert!(pgm[header.len()..].iter().all(|&v| v == 0));
        let t = read_tensor(&a.join(format!("{id}_cam{cam}.roat"))).unwrap();
        assert_eq!(t.shape(), &[1, 1, 16, 44]);
        assert_eq!(t.sum(), 0.0);
    }
}

#[test]
fn stride_and_region_type_flags() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.json");
    ok(&["gen-synthetic", "--seed", "1", "--boxes", "30", "--out", p(&scene)]);
    let id = &parse_scene_file(&scene).unwrap()[0].id;
    let out = dir.path().join("l");
    ok(&["gen-labels", "--scene", p(&scene), "--out", p(&out), "--stride", "8", "--region-type", "binary"]);
    for cam in 0..6 {
        let t = read_tensor(&out.join(format!("{id}_cam{cam}.roat"))).unwrap();
        assert_eq!(t.shape(), &[1, 1, 32, 88]);
        assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn failures_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = roa_bev(&["gen-labels", "--scene", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"version": 1, "scenes": [{"id": "x", "cameras": []}]}"#).unwrap();
    let out = roa_bev(&["gen-labels", "--scene", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly 6 cameras"));

    let out = roa_bev(&["gen-labels", "--scene", p(&bad), "--out", p(dir.path()), "--stride", "7"]);
    assert_ne!(out.status.code(), Some(0));
    let out = roa_bev(&["train", "--out", p(dir.path()), "--input-size", "60x96"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!roa_bev(&["no-such-command"]).status.success());
}

#[test]
fn forward_writes_one_prediction_per_camera() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.json");
    ok(&["gen-synthetic", "--seed", "2", "--boxes", "5", "--out", p(&scene)]);
    let id = parse_scene_file(&scene).unwrap()[0].id.clone();
    let out = dir.path().join("pred");
    let mut args = vec!["forward", "--scene", p(&scene), "--out", p(&out)];
    args.extend(TINY);
    let stdout = ok(&args);
    assert!(stdout.contains("l_roa"), "{stdout}");
    for cam in 0..6 {
        let t = read_tensor(&out.join(format!("{id}_cam{cam}_pred.roat"))).unwrap();
        assert_eq!(t.shape(), &[1, 1, 4, 6]);
        assert!(t.data().iter().all(|&v| v >= 0.0));
        assert!(out.join(format!("{id}_cam{cam}_pred.pgm")).exists());
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let train = |steps: &str, out: &Path, resume: Option<&Path>| {
        let mut args = vec!["train", "--steps", steps, "--boxes", "6", "--out", p(out)];
        args.extend(TINY);
        if let Some(r) = resume {
            args.extend(["--resume", p(r)]);
        }
        ok(&args)
    };
    let (full, half, rest) = (dir.path().join("full"), dir.path().join("half"), dir.path().join("rest"));
    train("4", &full, None);
    train("2", &half, None);
    let stdout = train("2", &rest, Some(&half.join("checkpoint")));
    assert!(stdout.starts_with("steps 2..=3"), "{stdout}");
    let full = read_curve_csv(&full.join("loss.csv")).unwrap();
    let rest = read_curve_csv(&rest.join("loss.csv")).unwrap();
    assert_eq!(rest, full[2..]);

    // a checkpoint drives forward in eval mode
    let scene = dir.path().join("s.json");
    ok(&["gen-synthetic", "--seed", "7", "--boxes", "6", "--out", p(&scene)]);
    let pred = dir.path().join("pred");
    let ckpt = dir.path().join("rest").join("checkpoint");
    ok(&["forward", "--scene", p(&scene), "--checkpoint", p(&ckpt), "--out", p(&pred)]);
}

#[test]
fn ablation_csv_has_one_row_per_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ablate.csv");
    let mut args = vec!["ablate-kernel", "--steps", "1", "--boxes", "4", "--out", p(&csv), "--scale-mode", "same_scale"];
    args.extend(&TINY[..6]);
    ok(&args);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "kernel_size,scale_mode,steps,seed,initial_l_roa,final_l_roa,param_count,lkb_param_count");
    let kernels: Vec<_> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kernels, ["3", "5", "7", "9", "11", "13"]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("same_scale")));
}
