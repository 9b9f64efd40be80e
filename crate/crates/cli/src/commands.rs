use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use uvrefine::config::{Manifest, RunConfig};
use uvrefine::features::weights::{sha256_hex, with_normalization, IMAGENET_MEAN, IMAGENET_STD};
use uvrefine::features::{default_landmarks, diagnose_matches, FeatureNet, PointMatch, WeightsBundle};
use uvrefine::geometry::{sample_style_image, uv_coverage_mask};
use uvrefine::io::{load_mask, load_rgb, load_texture, save_mask, save_rgb, save_texture, validity_path};
use uvrefine::metrics::{evaluate_reprojected, evaluate_uv, EvalReport, Protocol};
use uvrefine::raster::{face_mask, rasterize, render};
use uvrefine::refine::{RefineProblem, Refiner};
use uvrefine::{CameraPose, FaceMesh, RgbImage, TextureMap};

use crate::args::{BatchArgs, Common, DiagnoseArgs, EvaluateArgs, FetchArgs, PrepareArgs, ProtocolArg, RefineArgs};
use crate::error::{CliError, CliResult};
use crate::grid;
use crate::jobs::parse_job_list;

pub const STYLE_FILE: &str = "style.png";
pub const FACE_MASK_FILE: &str = "face_mask.png";
pub const REFINED_FILE: &str = "refined.png";
pub const RUN_REPORT_FILE: &str = "report.json";
pub const GRID_FILE: &str = "report.png";
pub const DEPTH_FILE: &str = "depth.png";
pub const COVERAGE_FILE: &str = "coverage.png";

pub fn stage_file(stage: usize) -> String {
    format!("stage_{stage}.png")
}

fn load_config(common: &Common, extra: &[String]) -> CliResult<RunConfig> {
    let mut set = common.set.clone();
    set.extend_from_slice(extra);
    Ok(RunConfig::load(common.config.as_deref(), &set)?)
}

fn output_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

/// True when the command should run: outputs are absent or `force` is set.
fn may_write(outputs: &[PathBuf], force: bool) -> bool {
    if force {
        return true;
    }
    match outputs.iter().find(|p| p.exists()) {
        Some(p) => {
            eprintln!("{} exists; skipping (use --force to overwrite)", p.display());
            false
        }
        None => true,
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_manifest(dir: &Path, mut manifest: Manifest, outputs: &[PathBuf]) -> CliResult<()> {
    manifest.outputs = outputs
        .iter()
        .map(|p| p.strip_prefix(dir).unwrap_or(p).to_path_buf())
        .collect();
    let path = dir.join(format!("{}.manifest.json", manifest.command));
    write_text(&path, &manifest.to_json())
}

struct Scene {
    mesh: FaceMesh,
    pose: CameraPose,
    input: RgbImage,
}

fn load_scene(cfg: &RunConfig) -> CliResult<Scene> {
    let mesh = FaceMesh::load_obj(cfg.require("mesh")?)?;
    let pose = CameraPose::load(cfg.require("pose")?)?;
    let input = load_rgb(cfg.require("input_image")?)?;
    Ok(Scene { mesh, pose, input })
}

fn compute_style(cfg: &RunConfig, scene: &Scene) -> CliResult<uvrefine::geometry::StyleImage> {
    Ok(sample_style_image(
        &scene.input,
        &scene.mesh,
        &scene.pose,
        cfg.resolution,
        &cfg.style_params(),
    )?)
}

/// Always rebuilt from the inputs so that results do not depend on whether
/// (or at which precision) `prepare` wrote it.
fn style_texture(cfg: &RunConfig, scene: &Scene) -> CliResult<TextureMap> {
    Ok(compute_style(cfg, scene)?.texture)
}

pub fn prepare(args: &PrepareArgs) -> CliResult<()> {
    let common = &args.common;
    let cfg = load_config(common, &[])?;
    let dir = output_dir(&cfg)?;
    let style_path = dir.join(STYLE_FILE);
    let mut outputs = vec![style_path.clone(), validity_path(&style_path), dir.join(FACE_MASK_FILE)];
    if args.dump_raster {
        outputs.extend([dir.join(DEPTH_FILE), dir.join(COVERAGE_FILE)]);
    }
    if !may_write(&outputs, common.force) {
        return Ok(());
    }
    let scene = load_scene(&cfg)?;
    let style = compute_style(&cfg, &scene)?;
    save_texture(&style.texture, &style_path)?;
    save_mask(&face_mask(&scene.mesh, &scene.pose), &outputs[2])?;
    if args.dump_raster {
        let raster = rasterize(&scene.mesh, &scene.pose);
        save_rgb(&raster.depth_image(), &outputs[3])?;
        save_mask(&raster.coverage(), &outputs[4])?;
    }
    println!(
        "style texture {}: {:.1}% valid",
        style_path.display(),
        100.0 * style.texture.validity().fraction()
    );
    write_manifest(&dir, Manifest::new("prepare", &cfg), &outputs)
}

pub fn refine(args: &RefineArgs) -> CliResult<()> {
    let mut extra = Vec::new();
    if let Some(n) = args.stages {
        extra.push(format!("schedule.stages={n}"));
    }
    if let Some(n) = args.iterations {
        extra.push(format!("schedule.iterations={n}"));
    }
    let cfg = load_config(&args.common, &extra)?;
    let dir = output_dir(&cfg)?;
    let stages = cfg.schedule.stages;
    let mut outputs: Vec<PathBuf> = (1..=stages).map(|i| dir.join(stage_file(i))).collect();
    let refined_path = dir.join(REFINED_FILE);
    outputs.extend([refined_path.clone(), validity_path(&refined_path), dir.join(RUN_REPORT_FILE)]);
    if !may_write(&outputs, args.common.force) {
        return Ok(());
    }

    let scene = load_scene(&cfg)?;
    let content = load_texture(cfg.require("content_texture")?)?.resized(cfg.resolution)?;
    let style = style_texture(&cfg, &scene)?;
    let net = FeatureNet::from_source(&cfg.weights_source(), cfg.layer_selection())?;
    let problem = RefineProblem {
        mesh: &scene.mesh,
        pose: &scene.pose,
        input_image: &scene.input,
        style: &style,
    };
    let refiner = Refiner::new(&net, problem, cfg.refine_options()?, cfg.resolution)?;
    let (refined, report) = refiner.refine(&content, |tex, stage| {
        let path = dir.join(stage_file(stage.stage + 1));
        save_rgb(tex.pixels(), &path)?;
        println!(
            "stage {}: render loss {:.6} -> {:.6}",
            stage.stage + 1,
            stage.initial_render_loss,
            stage.final_render_loss
        );
        Ok(())
    })?;
    save_texture(&refined, &refined_path)?;
    let report_json = serde_json::to_string_pretty(&report).map_err(uvrefine::Error::from)?;
    write_text(&dir.join(RUN_REPORT_FILE), &report_json)?;
    let mut manifest = Manifest::new("refine", &cfg);
    manifest.weights_checksum = Some(net.checksum().to_string());
    let written: Vec<PathBuf> = outputs.into_iter().filter(|p| p.exists()).collect();
    write_manifest(&dir, manifest, &written)?;
    println!(
        "refined {}: render loss {:.6} -> {:.6}",
        refined_path.display(),
        report.initial_render_loss,
        report.final_render_loss
    );
    if let Some(a) = report.aborted() {
        return Err(CliError::Numerical {
            stage: a.stage + 1,
            scale: a.scale,
            iteration: a.iteration,
            term: a.term.clone(),
        });
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let cfg = load_config(&args.common, &[])?;
    let dir = output_dir(&cfg)?;
    let outputs = vec![dir.join("eval.json"), dir.join("eval.csv")];
    if !may_write(&outputs, args.common.force) {
        return Ok(());
    }
    let texture_path = args.texture.clone().unwrap_or_else(|| dir.join(REFINED_FILE));
    let texture = load_texture(&texture_path)?;
    let report = match args.protocol {
        ProtocolArg::Reprojected => {
            let scene = load_scene(&cfg)?;
            let rec = evaluate_reprojected(&args.id, &texture, &scene.mesh, &scene.pose, &scene.input)?;
            EvalReport::new(Protocol::Reprojected, vec![rec])
        }
        ProtocolArg::Uv => {
            let gt_path = args
                .ground_truth
                .as_deref()
                .ok_or_else(|| uvrefine::Error::Config("the uv protocol needs --ground-truth".into()))?;
            let gt = load_texture(gt_path)?;
            let region = match &args.region {
                Some(p) => load_mask(p)?,
                None => uv_coverage_mask(&FaceMesh::load_obj(cfg.require("mesh")?)?, texture.resolution())?,
            };
            EvalReport::new(Protocol::Uv, vec![evaluate_uv(&args.id, &texture, &gt, &region)?])
        }
    };
    write_text(&outputs[0], &report.to_json())?;
    write_text(&outputs[1], &report.to_csv())?;
    print!("{}", report.to_csv());
    write_manifest(&dir, Manifest::new("evaluate", &cfg), &outputs)
}

fn parse_point(s: &str) -> CliResult<[f64; 2]> {
    let bad = || uvrefine::Error::Config(format!("point `{s}` is not `x,y`"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    let x: f64 = x.trim().parse().map_err(|_| bad())?;
    let y: f64 = y.trim().parse().map_err(|_| bad())?;
    Ok([x, y])
}

#[derive(serde::Serialize)]
struct MatchRow<'a> {
    stage: usize,
    #[serde(flatten)]
    m: &'a PointMatch,
}

pub fn diagnose_matching(args: &DiagnoseArgs) -> CliResult<()> {
    let cfg = load_config(&args.common, &[])?;
    let dir = output_dir(&cfg)?;
    let stages = cfg.schedule.stages;
    let expected: Vec<String> = (1..=stages).map(stage_file).collect();
    if expected.iter().any(|f| !dir.join(f).exists()) {
        return Err(CliError::MissingCheckpoints { dir, expected });
    }
    let mut outputs = vec![dir.join("matching.json"), dir.join("matching.csv")];
    outputs.extend((1..=stages).map(|i| dir.join(format!("matching_stage_{i}.png"))));
    if !may_write(&outputs, args.common.force) {
        return Ok(());
    }
    let scene = load_scene(&cfg)?;
    let style = style_texture(&cfg, &scene)?;
    let landmarks: Vec<(String, [f64; 2])> = if args.points.is_empty() {
        default_landmarks(style.validity())
    } else {
        args.points
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((format!("point_{}", i + 1), parse_point(s)?)))
            .collect::<CliResult<_>>()?
    };
    let net = FeatureNet::from_source(&cfg.weights_source(), cfg.layer_selection())?;
    let mut rows = Vec::new();
    let mut csv = String::from("stage,name,x,y,valid,matched_x,matched_y,matched_in_valid_region,distance\n");
    for stage in 1..=stages {
        let checkpoint = load_rgb(&dir.join(stage_file(stage)))?;
        let matches = diagnose_matches(&net, &style, &checkpoint, &landmarks, args.stride)?;
        let mut left = style.pixels().clone();
        let mut right = checkpoint.clone();
        for (i, m) in matches.iter().enumerate() {
            grid::mark(&mut left, m.point, 3, grid::palette(i));
            grid::mark(&mut right, m.matched, 3, grid::palette(i));
            csv.push_str(&format!(
                "{stage},{},{:.3},{:.3},{},{:.3},{:.3},{},{:.6}\n",
                m.name, m.point[0], m.point[1], m.valid, m.matched[0], m.matched[1], m.matched_in_valid_region, m.distance
            ));
        }
        let side = cfg.resolution.max(64);
        save_rgb(&grid::row(&[&left, &right], side, 4), &outputs[1 + stage])?;
        rows.push((stage, matches));
    }
    let flat: Vec<MatchRow> = rows
        .iter()
        .flat_map(|(stage, ms)| ms.iter().map(move |m| MatchRow { stage: *stage, m }))
        .collect();
    write_text(&outputs[0], &serde_json::to_string_pretty(&flat).map_err(uvrefine::Error::from)?)?;
    write_text(&outputs[1], &csv)?;
    print!("{csv}");
    write_manifest(&dir, Manifest::new("diagnose-matching", &cfg), &outputs)
}

fn read_source(url: &str) -> CliResult<Vec<u8>> {
    let fail = |message: String| CliError::Download {
        url: url.to_string(),
        message,
    };
    if url.starts_with("http://") || url.starts_with("https://") {
        let response = ureq::get(url).call().map_err(|e| fail(e.to_string()))?;
        let mut bytes = Vec::new();
        response
            .into_body()
            .into_reader()
            .read_to_end(&mut bytes)
            .map_err(|e| fail(e.to_string()))?;
        Ok(bytes)
    } else {
        let path = Path::new(url.strip_prefix("file://").unwrap_or(url));
        fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => uvrefine::Error::MissingArtifact(path.to_path_buf()).into(),
            _ => CliError::io(path, e),
        })
    }
}

pub fn fetch_weights(args: &FetchArgs) -> CliResult<()> {
    let cfg = load_config(&args.common, &[])?;
    let out = match (&args.out, &cfg.paths.weights_bundle) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => output_dir(&cfg)?.join("weights.safetensors"),
    };
    if !may_write(std::slice::from_ref(&out), args.common.force) {
        return Ok(());
    }
    let bytes = read_source(&args.url)?;
    let found = sha256_hex(&bytes);
    if let Some(expected) = args.sha256.as_ref().or(cfg.weights.sha256.as_ref()) {
        if !found.eq_ignore_ascii_case(expected) {
            return Err(uvrefine::Error::ChecksumMismatch {
                path: PathBuf::from(&args.url),
                expected: expected.clone(),
                found,
            }
            .into());
        }
    }
    let bytes = with_normalization(&bytes, IMAGENET_MEAN, IMAGENET_STD)?;
    let bundle = WeightsBundle::from_bytes(&bytes)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(&out, &bytes).map_err(|e| CliError::io(&out, e))?;
    println!(
        "wrote {} ({} conv layers); pin it with weights.sha256 = \"{}\"",
        out.display(),
        bundle.layers.len(),
        sha256_hex(&bytes)
    );
    Ok(())
}

pub fn report(common: &Common) -> CliResult<()> {
    let cfg = load_config(common, &[])?;
    let dir = output_dir(&cfg)?;
    let out = dir.join(GRID_FILE);
    if !may_write(std::slice::from_ref(&out), common.force) {
        return Ok(());
    }
    let scene = load_scene(&cfg)?;
    let content = load_texture(cfg.require("content_texture")?)?;
    let refined = load_texture(&dir.join(REFINED_FILE))?;
    let rendered = render(&scene.mesh, &refined, &scene.pose)?.pixels;
    let tile = cfg.resolution.clamp(64, 512);
    save_rgb(
        &grid::row(&[&scene.input, content.pixels(), refined.pixels(), &rendered], tile, 4),
        &out,
    )?;
    println!("wrote {}", out.display());
    write_manifest(&dir, Manifest::new("report", &cfg), &[out])
}

pub fn batch(args: &BatchArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.jobs).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => uvrefine::Error::MissingArtifact(args.jobs.clone()).into(),
        _ => CliError::io(&args.jobs, e),
    })?;
    let jobs = parse_job_list(&text)?;
    let exe = std::env::current_exe().map_err(|e| CliError::io("current executable", e))?;
    let next = AtomicUsize::new(0);
    let codes = Mutex::new(vec![0; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..args.workers.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let mut cmd = Process::new(&exe);
                cmd.args(job.args());
                if args.force {
                    cmd.arg("--force");
                }
                let code = match cmd.status() {
                    Ok(st) => st.code().unwrap_or(1),
                    Err(e) => {
                        eprintln!("job on line {}: {e}", job.line);
                        1
                    }
                };
                eprintln!("job on line {} ({} {}): exit {code}", job.line, job.command, job.config.display());
                codes.lock().unwrap()[i] = code;
            });
        }
    });
    let codes = codes.into_inner().unwrap();
    let failed: Vec<i32> = codes.iter().copied().filter(|&c| c != 0).collect();
    match failed.first() {
        None => Ok(()),
        Some(&code) => Err(CliError::Batch {
            failed: failed.len(),
            total: jobs.len(),
            code,
        }),
    }
}
