use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use motionfit::anim::{load_rig, Rig, RigFile};
use motionfit::eval::{evaluate_clip, generate_scenario, perturb_features};
use motionfit::features::{read_ftrv, write_ftrv, FeatureVideo};
use motionfit::fitting::{fit_motion_with, reference_consistency, render_target, AnimationClip, FitConfig, FitError, LossMode};
use motionfit::mesh::{write_obj, Camera};
use motionfit::raster::{rasterize_features, render_depth_mask, write_pgm, write_pgm_masked};

use crate::args::{Cli, Command, DumpArgs, FitArgs, FitOverrides, SynthParams};
use crate::error::CliError;
use crate::manifest::{Invocation, Manifest};

pub const MESH_FILE: &str = "mesh.obj";
pub const RIG_FILE: &str = "rig.json";
pub const FEATURES_FILE: &str = "features.ftrv";
pub const GT_CLIP_FILE: &str = "gt_clip.json";
pub const CLIP_FILE: &str = "clip.json";
pub const LOG_FILE: &str = "fit_log.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
/// Reference-frame consistency below which `fit` warns.
pub const CONSISTENCY_WARNING: f64 = 0.95;

/// Output settings that do not affect results.
#[derive(Debug, Clone, Copy)]
pub struct Console {
    pub quiet: bool,
    pub log_every: usize,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let console = Console { quiet: cli.quiet, log_every: 100 };
    match cli.command {
        Command::Synth { params, out } => run(&Invocation::Synth(params), &out, console).map(|_| ()),
        Command::Fit(args) => {
            let console = Console { log_every: args.log_every, ..console };
            let out = args.out.clone();
            run(&resolve_fit(args)?, &out, console).map(|_| ())
        }
        Command::Eval { rig, clip, gt, out } => {
            let inv = Invocation::Eval { rig: existing(&rig, "rig")?, clip: existing(&clip, "clip")?, gt: existing(&gt, "ground-truth clip")? };
            run(&inv, &out, console).map(|_| ())
        }
        Command::Dump(args) => {
            let out = args.out.clone();
            run(&resolve_dump(args)?, &out, console).map(|_| ())
        }
        Command::Replay { manifest, out } => replay(&manifest, &out, console),
    }
}

fn existing(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    fs::canonicalize(path).map_err(|e| CliError::Usage(format!("{what} {}: {e}", path.display())))
}

/// Defaults, then the TOML file, then flags.
pub fn resolve_fit_config(file: Option<&Path>, overrides: &FitOverrides) -> Result<FitConfig, CliError> {
    let mut config = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
        None => FitConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate().map_err(CliError::Usage)?;
    Ok(config)
}

fn resolve_fit(args: FitArgs) -> Result<Invocation, CliError> {
    let rig = existing(&args.rig, "rig")?;
    let features = existing(&args.features, "feature video")?;
    let camera = args.camera.as_deref().map(|p| existing(p, "camera")).transpose()?;
    let config = resolve_fit_config(args.config.as_deref(), &args.overrides)?;
    Ok(Invocation::Fit { rig, features, camera, config })
}

fn resolve_dump(args: DumpArgs) -> Result<Invocation, CliError> {
    Ok(Invocation::Dump {
        rig: existing(&args.rig, "rig")?,
        features: existing(&args.features, "feature video")?,
        camera: args.camera.as_deref().map(|p| existing(p, "camera")).transpose()?,
        clip: args.clip.as_deref().map(|p| existing(p, "clip")).transpose()?,
        frame: args.frame,
        channels: args.channels,
    })
}

/// Executes `inv` into `out` and writes its manifest there.
pub fn run(inv: &Invocation, out: &Path, console: Console) -> Result<Manifest, CliError> {
    let outputs = match inv {
        Invocation::Synth(p) => {
            validate_synth(p)?;
            create_dir(out)?;
            synth(p, out)?
        }
        Invocation::Fit { rig, features, camera, config } => {
            let inputs = load_inputs(rig, features, camera.as_deref())?;
            create_dir(out)?;
            fit(inputs, config, out, console)?
        }
        Invocation::Eval { rig, clip, gt } => {
            let rig = load_rig(rig)?;
            let pred = AnimationClip::read(clip)?;
            let gt = AnimationClip::read(gt)?;
            create_dir(out)?;
            eval(&rig, &pred, &gt, out)?
        }
        Invocation::Dump { rig, features, camera, clip, frame, channels } => {
            let inputs = load_inputs(rig, features, camera.as_deref())?;
            let clip = clip.as_deref().map(AnimationClip::read).transpose()?;
            create_dir(out)?;
            dump(&inputs, clip.as_ref(), *frame, channels, out)?
        }
    };
    let manifest = Manifest::new(inv, out, &outputs)?;
    manifest.write(out)?;
    Ok(manifest)
}

fn replay(path: &Path, out: &Path, console: Console) -> Result<(), CliError> {
    let recorded = Manifest::read(path)?;
    recorded.verify_inputs()?;
    let fresh = run(&recorded.invocation, out, console)?;
    let diverged: Vec<&str> = recorded
        .outputs
        .iter()
        .filter(|r| !fresh.outputs.iter().any(|f| f.path == r.path && f.sha256 == r.sha256))
        .map(|r| r.path.as_str())
        .collect();
    if !diverged.is_empty() {
        return Err(CliError::Runtime(format!("replay diverged on {}", diverged.join(", "))));
    }
    println!("replay reproduced {} output(s) of {}", fresh.outputs.len(), recorded.command);
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn runtime(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn validate_synth(p: &SynthParams) -> Result<(), CliError> {
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(CliError::Usage(format!("noise must be finite and non-negative, got {}", p.noise)));
    }
    Ok(())
}

fn synth(p: &SynthParams, out: &Path) -> Result<Vec<String>, CliError> {
    let scenario = generate_scenario(p.seed, p.bones, p.vertices, p.frames, p.channels, p.amplitude)?;
    let features = if p.noise > 0.0 { perturb_features(&scenario.features, p.noise, p.seed) } else { scenario.features.clone() };

    let mesh_path = out.join(MESH_FILE);
    let mut w = BufWriter::new(fs::File::create(&mesh_path).map_err(runtime(&mesh_path))?);
    write_obj(scenario.mesh(), &mut w).and_then(|_| w.flush()).map_err(runtime(&mesh_path))?;
    RigFile::skeletal(MESH_FILE, Some(scenario.camera.clone()), &scenario.rig)
        .write(out.join(RIG_FILE))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_ftrv(&features, out.join(FEATURES_FILE)).map_err(|e| CliError::Runtime(e.to_string()))?;
    scenario.gt_clip().write(out.join(GT_CLIP_FILE))?;
    Ok([MESH_FILE, RIG_FILE, FEATURES_FILE, GT_CLIP_FILE].map(String::from).to_vec())
}

struct Inputs {
    rig: Rig,
    camera: Camera,
    features: FeatureVideo,
}

fn load_inputs(rig: &Path, features: &Path, camera: Option<&Path>) -> Result<Inputs, CliError> {
    let rig = load_rig(rig)?;
    let camera = match camera {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("camera {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("camera {}: {e}", path.display())))?
        }
        None => rig.camera.clone().ok_or_else(|| CliError::Usage("the rig has no camera; pass --camera".into()))?,
    };
    let features = read_ftrv(features)?;
    Ok(Inputs { rig, camera, features })
}

fn fit(inputs: Inputs, config: &FitConfig, out: &Path, console: Console) -> Result<Vec<String>, CliError> {
    let Inputs { rig, camera, features } = inputs;
    if config.w_smooth > 0.0 && features.frames < 2 {
        return Err(FitError::TooFewFrames(features.frames).into());
    }
    let consistency = reference_consistency(&rig.mesh, &features, &camera)?;
    if consistency < CONSISTENCY_WARNING {
        eprintln!(
            "warning: reference frame {} agrees poorly with the rest mesh (cosine {consistency:.4} < {CONSISTENCY_WARNING})",
            features.reference
        );
    }

    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(runtime(&log_path))?);
    let mut log_error = None;
    let last = config.iterations - 1;
    let result = fit_motion_with(&rig.model, &features, &camera, config, |record| {
        if let Err(e) = writeln!(log, "{record}") {
            log_error.get_or_insert(e);
        }
        if !console.quiet && (record.iteration % console.log_every.max(1) == 0 || record.iteration == last) {
            eprintln!("{record}");
        }
    });
    let flushed = log.flush();
    let clip = result?;
    if let Some(e) = log_error {
        return Err(runtime(&log_path)(e));
    }
    flushed.map_err(runtime(&log_path))?;
    clip.write(out.join(CLIP_FILE))?;

    let d = clip.diagnostics.as_ref().expect("fit attaches diagnostics");
    if !console.quiet {
        eprintln!("fit finished in {:.1}s", d.wall_time_s);
    }
    println!(
        "frames={} loss_mode={} final_total={:.9e} reference_consistency={consistency:.6}",
        clip.frames(),
        d.loss_mode.as_str(),
        d.final_total
    );
    Ok(vec![CLIP_FILE.into(), LOG_FILE.into()])
}

fn eval(rig: &Rig, pred: &AnimationClip, gt: &AnimationClip, out: &Path) -> Result<Vec<String>, CliError> {
    let report = evaluate_clip(&rig.model, pred, gt)?;
    let text = report.to_lines();
    let txt = out.join(REPORT_FILE);
    fs::write(&txt, &text).map_err(runtime(&txt))?;
    let json = out.join(REPORT_JSON_FILE);
    fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes") + "\n").map_err(runtime(&json))?;
    print!("{}", text.lines().next().map(|l| format!("{l}\n")).unwrap_or_default());
    Ok(vec![REPORT_FILE.into(), REPORT_JSON_FILE.into()])
}

fn dump(inputs: &Inputs, clip: Option<&AnimationClip>, frame: Option<usize>, channels: &[usize], out: &Path) -> Result<Vec<String>, CliError> {
    let fv = &inputs.features;
    let frame = frame.unwrap_or(fv.reference);
    if frame >= fv.frames {
        return Err(CliError::Usage(format!("frame {frame} out of range for {} frames", fv.frames)));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= fv.channels) {
        return Err(CliError::Usage(format!("channel {c} out of range for {} channels", fv.channels)));
    }
    let model = &inputs.rig.model;
    let pose = match clip {
        Some(clip) => clip
            .poses
            .get(frame)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("frame {frame} out of range for a {}-frame clip", clip.frames())))?,
        None => model.p_init(),
    };
    let posed = model.apply_pose(&pose)?;
    let target = render_target(model.rest(), fv, &inputs.camera, LossMode::Cosine)?;
    let image = rasterize_features(&posed, target.camera(), target.vertex_features(), target.background())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (w, h, d) = (fv.width, fv.height, fv.channels);
    let reference = fv.frame(frame);
    let mut names = Vec::new();
    let mut save = |name: String, values: &[f64], mask: Option<&[bool]>| -> Result<(), CliError> {
        let path = out.join(&name);
        write_pgm_masked(&path, w, h, values, mask).map_err(runtime(&path))?;
        names.push(name);
        Ok(())
    };
    for &c in channels {
        let rendered: Vec<f64> = image.features.data.iter().skip(c).step_by(d).copied().collect();
        save(format!("render_c{c}.pgm"), &rendered, None)?;
        let target: Vec<f64> = reference.data.iter().skip(c).step_by(d).copied().collect();
        save(format!("target_c{c}.pgm"), &target, None)?;
    }
    let depth = render_depth_mask(&posed, target.camera());
    save("depth.pgm".into(), &depth.depth, Some(&depth.mask))?;
    let coverage: Vec<f64> = depth.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let path = out.join("mask.pgm");
    write_pgm(&path, w, h, &coverage).map_err(runtime(&path))?;
    names.push("mask.pgm".into());
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.toml");
        fs::write(&path, "iterations = 50\nwarmup_end = 20\nw_smooth = 0.5\nloss_mode = \"mse\"\n").unwrap();
        let overrides = FitOverrides { w_smooth: Some(0.2), ..Default::default() };
        let c = resolve_fit_config(Some(&path), &overrides).unwrap();
        assert_eq!((c.iterations, c.warmup_end, c.w_smooth, c.loss_mode), (50, 20, 0.2, LossMode::Mse));
        assert_eq!(c.w_render, FitConfig::default().w_render);
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.toml");
        fs::write(&path, "iterations = 50\nbogus = 1\n").unwrap();
        assert!(matches!(resolve_fit_config(Some(&path), &FitOverrides::default()), Err(CliError::Usage(_))));
        let overrides = FitOverrides { iterations: Some(10), warmup_end: Some(20), ..Default::default() };
        assert!(matches!(resolve_fit_config(None, &overrides), Err(CliError::Usage(_))));
    }
}
