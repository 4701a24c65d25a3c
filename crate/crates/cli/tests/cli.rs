use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use motionfit::features::{read_ftrv, write_ftrv, FeatureVideo};
use motionfit::fitting::{AnimationClip, LossMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn motionfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionfit")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", path(dir), "--channels", "16"];
    args.extend_from_slice(extra);
    let out = motionfit(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn quick_fit(s: &Path, out: &Path, extra: &[&str]) -> Output {
    let rig = s.join("rig.json");
    let ftrv = s.join("features.ftrv");
    let mut args = vec!["fit", "-q", "--rig", path(&rig), "--features", path(&ftrv), "--hidden", "16", "--layers", "2", "--out", path(out)];
    if !extra.contains(&"--iterations") {
        args.extend_from_slice(&["--iterations", "6", "--warmup-end", "3"]);
    }
    args.extend_from_slice(extra);
    motionfit(&args)
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_four_files_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--seed", "7", "--bones", "2", "--frames", "16"]);
    let m = manifest(&s.join("synth_manifest.json"));
    let files: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(files, ["mesh.obj", "rig.json", "features.ftrv", "gt_clip.json"]);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    for f in files {
        assert!(s.join(f).is_file());
    }
    assert_eq!(read_ftrv(s.join("features.ftrv")).unwrap().shape(), [16, 88, 160, 16]);
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, &["--seed", "3", "--frames", "4"]);
    synth(&b, &["--seed", "3", "--frames", "4"]);
    assert_eq!(fs::read(a.join("features.ftrv")).unwrap(), fs::read(b.join("features.ftrv")).unwrap());
    assert_eq!(fs::read(a.join("synth_manifest.json")).unwrap(), fs::read(b.join("synth_manifest.json")).unwrap());
}

#[test]
fn default_fit_produces_a_full_clip() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--seed", "7"]);
    let f = dir.path().join("f");
    let out = motionfit(&["fit", "-q", "--rig", path(&s.join("rig.json")), "--features", path(&s.join("features.ftrv")), "--out", path(&f)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let clip = AnimationClip::read(f.join("clip.json")).unwrap();
    assert_eq!(clip.frames(), 16);
    assert_eq!(fs::read_to_string(f.join("fit_log.txt")).unwrap().lines().count(), 1000);
    let m = manifest(&f.join("fit_manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["invocation"]["config"]["iterations"], 1000);
}

#[test]
fn mse_mode_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "4"]);
    let f = dir.path().join("f");
    let out = quick_fit(&s, &f, &["--loss-mode", "mse"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let clip = AnimationClip::read(f.join("clip.json")).unwrap();
    assert_eq!(clip.diagnostics.unwrap().loss_mode, LossMode::Mse);
    assert!(String::from_utf8_lossy(&out.stdout).contains("loss_mode=mse"));
    assert_eq!(manifest(&f.join("fit_manifest.json"))["invocation"]["config"]["loss_mode"], "mse");
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "4"]);
    let cfg = dir.path().join("fit.toml");
    fs::write(&cfg, "iterations = 5\nwarmup_end = 2\nw_fidelity = 0.5\nalpha = 0.02\n").unwrap();
    let f = dir.path().join("f");
    let out = quick_fit(&s, &f, &["--config", path(&cfg), "--alpha", "0.03"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = &manifest(&f.join("fit_manifest.json"))["invocation"]["config"];
    assert_eq!((c["iterations"].as_u64(), c["w_fidelity"].as_f64(), c["alpha"].as_f64()), (Some(6), Some(0.5), Some(0.03)));
    let g = dir.path().join("g");
    let rig = s.join("rig.json");
    let ftrv = s.join("features.ftrv");
    let out = motionfit(&["fit", "-q", "--rig", path(&rig), "--features", path(&ftrv), "--config", path(&cfg), "--hidden", "8", "--out", path(&g)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = &manifest(&g.join("fit_manifest.json"))["invocation"]["config"];
    assert_eq!((c["iterations"].as_u64(), c["alpha"].as_f64()), (Some(5), Some(0.02)));
}

#[test]
fn missing_feature_video_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "4"]);
    let out = motionfit(&["fit", "--rig", path(&s.join("rig.json")), "--features", path(&s.join("absent.ftrv")), "--out", path(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.ftrv"));
    assert!(!dir.path().join("f").exists());
}

#[test]
fn invalid_settings_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &[]);
    let start = Instant::now();
    let out = quick_fit(&s, &dir.path().join("f"), &["--iterations", "2", "--warmup-end", "5"]);
    let elapsed = start.elapsed();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup_end"));
    assert!(elapsed.as_millis() < 100, "{elapsed:?}");
}

#[test]
fn single_frame_video_cannot_be_fit_with_smoothness() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "1"]);
    let out = quick_fit(&s, &dir.path().join("f"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 frames, got 1"));
    let ok = quick_fit(&s, &dir.path().join("g"), &["--w-smooth", "0"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
}

#[test]
fn divergence_exits_with_the_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "4"]);
    let out = quick_fit(&s, &dir.path().join("f"), &["--learning-rate", "1e300"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss or gradient at iteration"));
}

#[test]
fn inconsistent_reference_frame_warns() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "3"]);
    let fv = read_ftrv(s.join("features.ftrv")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = (0..fv.data.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let noise = FeatureVideo::new(fv.frames, fv.height, fv.width, fv.channels, data).unwrap();
    write_ftrv(&noise, s.join("features.ftrv")).unwrap();
    let out = quick_fit(&s, &dir.path().join("f"), &["--iterations", "2", "--warmup-end", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: reference frame 0"));

    let clean = dir.path().join("clean");
    synth(&clean, &["--frames", "3"]);
    let out = quick_fit(&clean, &dir.path().join("g"), &["--iterations", "2", "--warmup-end", "1"]);
    assert!(!String::from_utf8_lossy(&out.stderr).contains("warning"));
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &[]);
    let gt = s.join("gt_clip.json");
    let e = dir.path().join("e");
    let out = motionfit(&["eval", "--rig", path(&s.join("rig.json")), "--clip", path(&gt), "--gt", path(&gt), "--out", path(&e)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&e);
    for key in ["mpjpe", "pve", "accel"] {
        assert_eq!(r[key].as_f64(), Some(0.0), "{key}");
    }
    assert!(r["pa_mpjpe"].as_f64().unwrap() < 1e-12);
    assert!(fs::read_to_string(e.join("report.txt")).unwrap().starts_with("summary frames=16 "));
}

#[test]
fn uniform_offset_is_removed_by_procrustes() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &[]);
    let gt = AnimationClip::read(s.join("gt_clip.json")).unwrap();
    let rig = motionfit::anim::load_rig(s.join("rig.json")).unwrap();
    // raw translation is scaled by 0.1 in the rig
    let poses = gt.poses.iter().map(|p| {
        let mut q = p.clone();
        let n = q.len();
        q[n - 3] += 10.0;
        q
    });
    AnimationClip::from_poses(&rig.model, poses.collect()).unwrap().write(dir.path().join("shifted.json")).unwrap();
    let e = dir.path().join("e");
    let out = motionfit(&["eval", "--rig", path(&s.join("rig.json")), "--clip", path(&dir.path().join("shifted.json")), "--gt", path(&s.join("gt_clip.json")), "--out", path(&e)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&e);
    assert!((r["mpjpe"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((r["pve"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(r["pa_mpjpe"].as_f64().unwrap() < 1e-12);
    assert!(r["accel"].as_f64().unwrap() < 1e-9);
}

#[test]
fn eval_rejects_frame_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, &["--frames", "4"]);
    synth(&b, &["--frames", "5"]);
    let out = motionfit(&["eval", "--rig", path(&a.join("rig.json")), "--clip", path(&a.join("gt_clip.json")), "--gt", path(&b.join("gt_clip.json")), "--out", path(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 predicted frames vs 5"));
}

#[test]
fn dump_writes_graymaps() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "4"]);
    let d = dir.path().join("d");
    let out = motionfit(&[
        "dump", "--rig", path(&s.join("rig.json")), "--features", path(&s.join("features.ftrv")), "--clip", path(&s.join("gt_clip.json")),
        "--frame", "2", "--channels", "0,3", "--out", path(&d),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["render_c0.pgm", "render_c3.pgm", "target_c0.pgm", "target_c3.pgm", "depth.pgm", "mask.pgm"] {
        let bytes = fs::read(d.join(f)).unwrap();
        assert!(bytes.starts_with(b"P5\n160 88\n255\n"), "{f}");
        assert_eq!(bytes.len(), b"P5\n160 88\n255\n".len() + 160 * 88);
    }
    let bad = motionfit(&["dump", "--rig", path(&s.join("rig.json")), "--features", path(&s.join("features.ftrv")), "--channels", "99", "--out", path(&d)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn replay_reproduces_and_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, &["--frames", "4", "--noise", "0.1"]);
    let f = dir.path().join("f");
    assert!(quick_fit(&s, &f, &[]).status.success());
    for (m, out) in [(s.join("synth_manifest.json"), "s2"), (f.join("fit_manifest.json"), "f2")] {
        let r = motionfit(&["replay", "-q", "--manifest", path(&m), "--out", path(&dir.path().join(out))]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(String::from_utf8_lossy(&r.stdout).contains("replay reproduced"));
    }
    assert_eq!(fs::read(f.join("clip.json")).unwrap(), fs::read(dir.path().join("f2/clip.json")).unwrap());

    fs::write(s.join("features.ftrv"), b"corrupt").unwrap();
    let r = motionfit(&["replay", "--manifest", path(&f.join("fit_manifest.json")), "--out", path(&dir.path().join("f3"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("changed since the recorded run"));
}

#[test]
fn unknown_subcommand_and_flags_exit_two() {
    assert_eq!(motionfit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(motionfit(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(motionfit(&["fit", "--loss-mode", "l1"]).status.code(), Some(2));
}
