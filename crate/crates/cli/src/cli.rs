//! Command line dispatch.
//!
//! Exit codes: 0 success, 1 operation failure (JSON diagnostics on stderr),
//! 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use portrait_forge_core::composite::{
    alpha_blend, poisson_blend, replace_background, Background, Mask, Palette, PoissonOptions,
};
use portrait_forge_core::cropkit::{center_crop_megapixel, face_anchored_crop, Bucket};
use portrait_forge_core::datasetkit::{
    apply_plan, build_dataset, validate_mix, AugPlan, DatasetManifest, PromptPool,
};
use portrait_forge_core::faceio::{detect_faces, embed_face, FaceBackend, FaceRecord, Landmarks};
use portrait_forge_core::genflow::{
    image_hash, perturb_landmarks, render_keypoints, run_two_step, synth_augment, KeypointImageSpec, PerturbConfig,
    Reference, SynthConfig, TwoStepPlan,
};
use portrait_forge_core::identity::{
    apply_filter, build_profile, compare_checkpoints, rank_images, summarize_distribution, CheckpointSet,
    FilterPolicy, RankingReport, ReferenceProfile,
};
use portrait_forge_core::{Error, ImageBuffer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Config, CONFIG_ENV};
use crate::server::{self, AppState};

#[derive(Parser, Debug)]
#[command(name = "portrait-forge", version, about = "Few-shot portrait dataset tooling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML config file
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Seed for seeded operations (overrides the config file)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset manifest to read
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Machine-readable output on stdout
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply a seeded augmentation plan to every manifest entry
    Augment {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crop to an aspect bucket, centered or anchored on the face
    Crop {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Anchor the crop on the detected face
        #[arg(long)]
        face: bool,
        /// Target bucket for --face, e.g. 832x1216 (default: nearest)
        #[arg(long)]
        bucket: Option<Bucket>,
        #[arg(long, default_value_t = 1.0)]
        target_mp: f64,
    },
    /// Replace a background or blend a masked region onto another image
    Composite {
        #[arg(long)]
        image: PathBuf,
        /// Grayscale mask, 255 = foreground
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, group = "mode")]
        background_image: Option<PathBuf>,
        /// Built-in palette name or comma-separated #rrggbb list
        #[arg(long, group = "mode")]
        palette: Option<String>,
        /// Destination image for alpha or Poisson blending
        #[arg(long, group = "mode")]
        onto: Option<PathBuf>,
        #[arg(long, requires = "onto")]
        poisson: bool,
        #[arg(long, requires = "poisson")]
        mixed_gradients: bool,
        /// Mask position in the destination, as X,Y
        #[arg(long, requires = "poisson", value_parser = parse_offset)]
        offset: Option<(i64, i64)>,
        #[arg(long, default_value_t = 0)]
        feather: u32,
    },
    /// Detect, filter, level and crop raw photos into a dataset
    BuildDataset {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Check concept shares and the real/synthetic mix of a manifest
    ValidateMix {
        #[arg(long)]
        max_share: Option<f64>,
        #[arg(long)]
        min_real: Option<f64>,
    },
    /// Embed faces of images (or of the manifest entries)
    Embed {
        images: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the reference profile built from the embeddings
        #[arg(long)]
        profile_out: Option<PathBuf>,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Rank candidates by distance to a reference profile
    Rank {
        #[arg(long)]
        profile: PathBuf,
        /// Embeddings from `embed`; otherwise the manifest images are embedded
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Apply a top-k% or quantile cut to a ranking report
    Filter {
        #[arg(long)]
        report: PathBuf,
        /// Discard the farthest K percent
        #[arg(long, conflicts_with = "quantile")]
        k: Option<f64>,
        /// Discard items beyond this distance quantile
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long)]
        min_n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Summarize a distance distribution (mean, median, KDE mode)
    Summarize {
        /// Ranking report, JSON array, or one number per line
        input: PathBuf,
        /// Only kept items of a ranking report
        #[arg(long)]
        kept_only: bool,
    },
    /// Order checkpoints by the mode of their distance distributions
    CompareCheckpoints {
        /// Files holding one checkpoint set or an array of them
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Randomly displace five facial landmarks
    Perturb {
        /// Five [x, y] points or a face record
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the five-keypoint conditioning image
    RenderKeypoints {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
    },
    /// Generate with a borrowed face layout, then with the subject's own
    TwoStep {
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        keypoints_source: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic training images from perturbed reference layouts
    SynthAugment {
        #[arg(long)]
        references: PathBuf,
        /// Prompt file, one per line, optional `tag<TAB>prompt`
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Run the HTTP API (and static UI, if configured)
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn parse_offset(s: &str) -> Result<(i64, i64), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |v: &str| v.trim().parse::<i64>().map_err(|e| e.to_string());
    Ok((p(x)?, p(y)?))
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Op(Error),
    /// Ran to completion but the result is a failure (report already printed).
    Verdict,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Op(e)
    }
}

type CmdResult = Result<Output, Failure>;

pub struct Output {
    json: Value,
    text: String,
    failed: bool,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Output {
            json,
            text: text.into(),
            failed: false,
        }
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::TooSmallInput(_) => "too_small_input",
        Error::SolverFailed { .. } => "solver_failed",
        Error::Backend(_) => "backend_error",
        Error::DegenerateLandmarks(_) => "degenerate_landmarks",
        Error::DegenerateProfile(_) => "degenerate_profile",
        Error::GeneratorUnreachable(_) => "generator_unreachable",
        Error::Protocol(_) => "protocol_error",
        Error::GenerationFailed(_) => "generation_failed",
        Error::TwoStepFailed { .. } => "two_step_failed",
        Error::Image(_) => "image_error",
        Error::Json(_) => "json_error",
        Error::Io { .. } => "io_error",
    }
}

pub fn diagnostic(e: &Error) -> Value {
    let mut d = json!({ "kind": error_kind(e), "message": e.to_string() });
    match e {
        Error::TwoStepFailed { step1_output, .. } => d["step1_output"] = json!(step1_output),
        Error::SolverFailed { iterations, residual } => {
            d["iterations"] = json!(iterations);
            d["residual"] = json!(residual);
        }
        Error::Io { path, .. } => d["path"] = json!(path),
        _ => {}
    }
    json!({ "error": d })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json_mode = cli.global.json;
    match dispatch(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if json_mode {
                let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).unwrap_or_default());
            } else if !out.text.is_empty() {
                let _ = writeln!(stdout, "{}", out.text);
            }
            i32::from(out.failed)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Verdict) => 1,
        Err(Failure::Op(e)) => {
            eprintln!("{}", diagnostic(&e));
            1
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let g = cli.global;
    let cfg = Config::resolve(g.config.as_deref())?;
    match cli.command {
        Command::Augment { plan, out } => augment(&g, &cfg, &plan, &out),
        Command::Crop {
            input,
            out,
            face,
            bucket,
            target_mp,
        } => crop(&cfg, &input, &out, face, bucket, target_mp),
        Command::Composite {
            image,
            mask,
            out,
            background_image,
            palette,
            onto,
            poisson,
            mixed_gradients,
            offset,
            feather,
        } => {
            let mode = match (background_image, palette, onto) {
                (Some(p), None, None) => BlendMode::BackgroundImage(p),
                (None, Some(p), None) => BlendMode::Palette(p),
                (None, None, Some(d)) if poisson => BlendMode::Poisson {
                    dst: d,
                    offset: offset.unwrap_or((0, 0)),
                    mixed: mixed_gradients,
                },
                (None, None, Some(d)) => BlendMode::Alpha(d),
                _ => {
                    return Err(Failure::Usage(
                        "one of --background-image, --palette or --onto is required".into(),
                    ))
                }
            };
            composite(&g, &cfg, &image, &mask, &out, mode, feather)
        }
        Command::BuildDataset { raw, out, subject } => build(&cfg, &raw, &out, subject),
        Command::ValidateMix { max_share, min_real } => {
            let manifest = need_manifest(&g)?;
            let mut policy = cfg.mix;
            if let Some(m) = max_share {
                policy.max_concept_share = m;
            }
            if min_real.is_some() {
                policy.min_real_fraction = min_real;
            }
            let report = validate_mix(&DatasetManifest::load(manifest)?, &policy)?;
            let mut text = format!(
                "{} entries, real {:.1}%, synthetic {:.1}%",
                report.total,
                100.0 * report.real_fraction,
                100.0 * report.synthetic_fraction
            );
            for v in &report.violations {
                text.push_str(&format!("\nviolation: {v}"));
            }
            for w in &report.warnings {
                text.push_str(&format!("\nwarning: {w}"));
            }
            let mut out = Output::new(serde_json::to_value(&report).map_err(Error::from)?, text);
            out.failed = !report.ok;
            Ok(out)
        }
        Command::Embed {
            images,
            out,
            profile_out,
            subject,
        } => embed(&g, &cfg, images, out.as_deref(), profile_out.as_deref(), subject),
        Command::Rank {
            profile,
            embeddings,
            out,
            csv,
        } => rank(&g, &cfg, &profile, embeddings.as_deref(), out.as_deref(), csv.as_deref()),
        Command::Filter {
            report,
            k,
            quantile,
            min_n,
            out,
            csv,
        } => {
            let mut policy = cfg.filter;
            if let Some(k) = k {
                policy = FilterPolicy {
                    min_n: policy.min_n,
                    ..FilterPolicy::top_k(k)
                };
            }
            if let Some(q) = quantile {
                policy = FilterPolicy {
                    min_n: policy.min_n,
                    ..FilterPolicy::quantile(q)
                };
            }
            if let Some(n) = min_n {
                policy.min_n = n;
            }
            let report: RankingReport = read_json(&report)?;
            let filtered = apply_filter(&report, &policy)?;
            write_report(&filtered, out.as_deref(), csv.as_deref())?;
            Ok(report_output(&filtered))
        }
        Command::Summarize { input, kept_only } => {
            let distances = read_distances(&input, kept_only)?;
            let s = summarize_distribution(&distances)?;
            let text = format!(
                "n={} mean={:.6} median={:.6} mode={:.6} min={:.6} max={:.6}",
                s.count, s.mean, s.median, s.kde_mode, s.min, s.max
            );
            Ok(Output::new(serde_json::to_value(&s).map_err(Error::from)?, text))
        }
        Command::CompareCheckpoints { inputs } => {
            let mut sets = Vec::new();
            for p in &inputs {
                let v: Value = read_json(p)?;
                if v.is_array() {
                    sets.extend(serde_json::from_value::<Vec<CheckpointSet>>(v).map_err(Error::from)?);
                } else {
                    sets.push(serde_json::from_value(v).map_err(Error::from)?);
                }
            }
            let cmp = compare_checkpoints(&sets)?;
            let text = cmp
                .entries
                .iter()
                .map(|e| match (&e.rank, &e.summary) {
                    (Some(r), Some(s)) => format!("{r}. {} mode={:.6} mean={:.6}", e.name, s.kde_mode, s.mean),
                    _ => format!("-  {} diverged (failure rate {:.2})", e.name, e.detection_failure_rate),
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(serde_json::to_value(&cmp).map_err(Error::from)?, text))
        }
        Command::Perturb { landmarks, rho, out } => {
            let lm = read_landmarks(&landmarks)?;
            let pc = PerturbConfig {
                rho: rho.unwrap_or(PerturbConfig::default().rho),
                seed: g.seed.unwrap_or(cfg.seed),
            };
            let moved = perturb_landmarks(&lm, &pc)?;
            let v = serde_json::to_value(moved).map_err(Error::from)?;
            if let Some(o) = out {
                write_json(&o, &v)?;
            }
            Ok(Output::new(v.clone(), v.to_string()))
        }
        Command::RenderKeypoints {
            landmarks,
            out,
            width,
            height,
        } => {
            let lm = read_landmarks(&landmarks)?;
            let spec = KeypointImageSpec::new(
                width.unwrap_or(cfg.keypoint_canvas[0]),
                height.unwrap_or(cfg.keypoint_canvas[1]),
            );
            let img = render_keypoints(&lm, &spec)?;
            img.save_png(&out)?;
            let hash = image_hash(&img)?;
            let text = format!("{} ({hash})", out.display());
            Ok(Output::new(
                json!({ "path": out, "sha256": hash, "radius": spec.disk_radius() }),
                text,
            ))
        }
        Command::TwoStep {
            references,
            keypoints_source,
            prompt,
            out,
        } => {
            let mut plan =
                TwoStepPlan::from_reference_dir(&references, &keypoints_source, &prompt, g.seed.unwrap_or(cfg.seed))?;
            plan.canvas = cfg.keypoint_canvas;
            let gen = cfg.generator.build()?;
            let backend = cfg.face_backend.build()?;
            let outcome = run_two_step(&plan, gen.as_ref(), backend.as_ref(), &out)?;
            let text = format!("final image: {}", outcome.final_output.display());
            Ok(Output::new(serde_json::to_value(&outcome).map_err(Error::from)?, text))
        }
        Command::SynthAugment {
            references,
            prompts,
            count,
            out,
            rho,
        } => synth(&g, &cfg, &references, prompts.as_deref(), count, &out, rho),
        Command::Serve {
            bind,
            data_dir,
            static_dir,
        } => {
            let bind = bind.unwrap_or(cfg.server.bind.clone());
            let data_dir = data_dir.unwrap_or(cfg.server.data_dir.clone());
            let static_dir = static_dir.or(cfg.server.static_dir.clone());
            let backend = cfg.face_backend.build()?;
            serve(&bind, &data_dir, static_dir, backend)?;
            Ok(Output::new(json!({ "stopped": true }), ""))
        }
    }
}

fn need_manifest(g: &GlobalArgs) -> Result<&Path, Failure> {
    g.manifest
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --manifest".into()))
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(d) => std::fs::create_dir_all(d).map_err(|e| Error::Io {
            path: d.to_owned(),
            source: e,
        }),
        None => Ok(()),
    }
}

fn augment(g: &GlobalArgs, cfg: &Config, plan_path: &Path, out: &Path) -> CmdResult {
    let mpath = need_manifest(g)?;
    let manifest = DatasetManifest::load(mpath)?;
    let mut plan = AugPlan::load(plan_path)?;
    if let Some(s) = g.seed {
        plan.master_seed = s;
    }
    let outcome = apply_plan(&manifest, manifest_dir(mpath), &plan, out, &cfg.bucket_set()?)?;
    let out_manifest = out.join("manifest.json");
    outcome.manifest.save(&out_manifest)?;
    let failures: Vec<Value> = outcome
        .failures
        .iter()
        .map(|(id, e)| json!({ "id": id, "error": e }))
        .collect();
    let mut o = Output::new(
        json!({
            "manifest": out_manifest,
            "entries": outcome.manifest.entries.len(),
            "failures": failures,
        }),
        format!(
            "{} entries written, {} failed; manifest {}",
            outcome.manifest.entries.len(),
            outcome.failures.len(),
            out_manifest.display()
        ),
    );
    for (id, e) in &outcome.failures {
        log::error!("{id}: {e}");
    }
    o.failed = !outcome.failures.is_empty();
    Ok(o)
}

fn first_face(backend: &dyn FaceBackend, img: &ImageBuffer) -> Result<Option<FaceRecord>, Error> {
    Ok(detect_faces(backend, img)?.into_iter().next())
}

fn crop(cfg: &Config, input: &Path, out: &Path, face: bool, bucket: Option<Bucket>, target_mp: f64) -> CmdResult {
    let img = ImageBuffer::open(input)?;
    let buckets = cfg.bucket_set()?;
    let (result, window, extra) = if face {
        let backend = cfg.face_backend.build()?;
        let f = first_face(backend.as_ref(), &img)?
            .ok_or_else(|| Error::InvalidArgument(format!("no face detected in {}", input.display())))?;
        let b = match bucket {
            Some(b) => b,
            None => buckets.nearest(img.width(), img.height())?,
        };
        let c = face_anchored_crop(&img, &f, b)?;
        let extra = json!({
            "bucket": c.bucket,
            "clamped_x": c.clamped_x,
            "clamped_y": c.clamped_y,
            "face_in_output": c.face_in_output(),
        });
        (c.image, c.window, extra)
    } else {
        if bucket.is_some() {
            return Err(Failure::Usage("--bucket only applies with --face".into()));
        }
        let (i, w) = center_crop_megapixel(&img, target_mp, &buckets)?;
        (i, w, json!({}))
    };
    ensure_parent(out)?;
    result.save_png(out)?;
    let mut v = json!({
        "path": out,
        "width": result.width(),
        "height": result.height(),
        "window": window,
    });
    if let (Some(o), Value::Object(e)) = (v.as_object_mut(), extra) {
        o.extend(e);
    }
    let text = format!("{} {}x{}", out.display(), result.width(), result.height());
    Ok(Output::new(v, text))
}

enum BlendMode {
    BackgroundImage(PathBuf),
    Palette(String),
    Alpha(PathBuf),
    Poisson { dst: PathBuf, offset: (i64, i64), mixed: bool },
}

fn composite(g: &GlobalArgs, cfg: &Config, image: &Path, mask: &Path, out: &Path, mode: BlendMode, feather: u32) -> CmdResult {
    let img = ImageBuffer::open(image)?;
    let mut m = Mask::open(mask)?;
    if feather > 0 {
        m = m.feather(feather);
    }
    let seed = g.seed.unwrap_or(cfg.seed);
    let mut info = json!({ "path": out });
    let result = match mode {
        BlendMode::BackgroundImage(p) => {
            let bg = ImageBuffer::open(&p)?;
            replace_background(&img, &m, Background::Image(&bg), seed)?
        }
        BlendMode::Palette(name) => {
            let palette: Palette = name.parse()?;
            info["palette"] = json!(palette.name());
            replace_background(&img, &m, Background::Palette(&palette), seed)?
        }
        BlendMode::Alpha(p) => alpha_blend(&img, &ImageBuffer::open(&p)?, &m)?,
        BlendMode::Poisson { dst, offset, mixed } => {
            let opts = PoissonOptions {
                mixed_gradients: mixed,
                ..Default::default()
            };
            let r = poisson_blend(&img, &ImageBuffer::open(&dst)?, &m, offset, &opts)?;
            info["residual"] = json!(r.residual);
            info["iterations"] = json!(r.iterations);
            r.image
        }
    };
    ensure_parent(out)?;
    result.save_png(out)?;
    Ok(Output::new(info, out.display().to_string()))
}

fn build(cfg: &Config, raw: &Path, out: &Path, subject: Option<String>) -> CmdResult {
    let mut bc = cfg.build.clone();
    if let Some(s) = subject {
        bc.subject_id = s;
    }
    let backend = cfg.face_backend.build()?;
    let report = build_dataset(raw, out, &cfg.bucket_set()?, backend.as_ref(), &bc)?;
    let mpath = out.join("manifest.json");
    report.manifest.save(&mpath)?;
    let mut text = format!("kept {}, rejected {}; manifest {}", report.kept, report.rejected.len(), mpath.display());
    for r in &report.rejected {
        text.push_str(&format!("\nrejected {}: {}", r.file, r.reason));
    }
    let v = json!({
        "manifest": mpath,
        "kept": report.kept,
        "rejected": report.rejected,
    });
    Ok(Output::new(v, text))
}

/// Per-image embedding as written by `embed` and read by `rank`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddedImage {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<FaceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub subject_id: String,
    pub items: Vec<EmbeddedImage>,
}

fn embed_images(backend: &Arc<dyn FaceBackend>, inputs: &[(String, PathBuf)]) -> Result<Vec<EmbeddedImage>, Error> {
    inputs
        .par_iter()
        .map(|(id, path)| {
            let img = ImageBuffer::open(path)?;
            let face = first_face(backend.as_ref(), &img)?;
            Ok(match face {
                Some(f) => EmbeddedImage {
                    id: id.clone(),
                    embedding: Some(embed_face(backend.as_ref(), &img, &f)?),
                    face: Some(f),
                    note: None,
                },
                None => EmbeddedImage {
                    id: id.clone(),
                    embedding: None,
                    face: None,
                    note: Some("no face".into()),
                },
            })
        })
        .collect()
}

fn manifest_inputs(mpath: &Path) -> Result<(String, Vec<(String, PathBuf)>), Error> {
    let m = DatasetManifest::load(mpath)?;
    let base = manifest_dir(mpath);
    let inputs = m
        .entries
        .iter()
        .map(|e| (e.id.clone(), DatasetManifest::resolve(base, e)))
        .collect();
    Ok((m.subject_id, inputs))
}

fn embed(
    g: &GlobalArgs,
    cfg: &Config,
    images: Vec<PathBuf>,
    out: Option<&Path>,
    profile_out: Option<&Path>,
    subject: Option<String>,
) -> CmdResult {
    let (subject_id, inputs) = match (&g.manifest, images.is_empty()) {
        (Some(m), true) => manifest_inputs(m)?,
        (None, false) => {
            let inputs = images
                .iter()
                .map(|p| {
                    let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    (id, p.clone())
                })
                .collect();
            (cfg.build.subject_id.clone(), inputs)
        }
        _ => return Err(Failure::Usage("give either image paths or --manifest".into())),
    };
    let subject_id = subject.unwrap_or(subject_id);
    let backend = cfg.face_backend.build()?;
    let items = embed_images(&backend, &inputs)?;
    let set = EmbeddingSet { subject_id, items };
    if let Some(o) = out {
        write_json(o, &set)?;
    }
    let embedded: Vec<Vec<f64>> = set.items.iter().filter_map(|i| i.embedding.clone()).collect();
    let mut text = format!("{} of {} images embedded", embedded.len(), set.items.len());
    let mut v = serde_json::to_value(&set).map_err(Error::from)?;
    if let Some(p) = profile_out {
        let profile = build_profile(&set.subject_id, &embedded)?;
        write_json(p, &profile)?;
        text.push_str(&format!("; profile {}", p.display()));
        v["profile"] = serde_json::to_value(&profile).map_err(Error::from)?;
    }
    Ok(Output::new(v, text))
}

fn report_output(r: &RankingReport) -> Output {
    let mut text: Vec<String> = r
        .items
        .iter()
        .map(|i| {
            format!(
                "{:>4} {:<24} {:.6} {:>6.1}%{}",
                i.rank,
                i.id,
                i.distance,
                i.percentile,
                if i.kept { "" } else { "  discarded" }
            )
        })
        .collect();
    if let Some(f) = &r.filter {
        text.push(format!("discarded {}", f.discarded));
        if let Some(n) = &f.note {
            text.push(format!("note: {n}"));
        }
    }
    Output::new(serde_json::to_value(r).unwrap_or(Value::Null), text.join("\n"))
}

fn write_report(r: &RankingReport, out: Option<&Path>, csv: Option<&Path>) -> Result<(), Error> {
    if let Some(o) = out {
        write_json(o, r)?;
    }
    if let Some(c) = csv {
        write_text(c, &r.to_csv())?;
    }
    Ok(())
}

fn rank(
    g: &GlobalArgs,
    cfg: &Config,
    profile: &Path,
    embeddings: Option<&Path>,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> CmdResult {
    let profile: ReferenceProfile = read_json(profile)?;
    let items = match (embeddings, &g.manifest) {
        (Some(e), None) => read_json::<EmbeddingSet>(e)?.items,
        (None, Some(m)) => {
            let (_, inputs) = manifest_inputs(m)?;
            embed_images(&cfg.face_backend.build()?, &inputs)?
        }
        _ => return Err(Failure::Usage("give either --embeddings or --manifest".into())),
    };
    let mut candidates = Vec::new();
    for it in items {
        match it.embedding {
            Some(e) => candidates.push((it.id, e)),
            None => log::warn!("{}: no face, not ranked", it.id),
        }
    }
    let report = rank_images(&candidates, &profile)?;
    write_report(&report, out, csv)?;
    Ok(report_output(&report))
}

fn read_distances(path: &Path, kept_only: bool) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    if let Ok(v) = serde_json::from_str::<Value>(&text) {
        if v.is_array() {
            return serde_json::from_value(v).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())));
        }
        let r: RankingReport =
            serde_json::from_value(v).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        return Ok(r.items.iter().filter(|i| i.kept || !kept_only).map(|i| i.distance).collect());
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{}: '{l}' is not a number", path.display())))
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LandmarkInput {
    Points(Landmarks),
    Face(FaceRecord),
}

fn read_landmarks(path: &Path) -> Result<Landmarks, Error> {
    Ok(match read_json::<LandmarkInput>(path)? {
        LandmarkInput::Points(p) => p,
        LandmarkInput::Face(f) => f.landmarks,
    })
}

fn synth(
    g: &GlobalArgs,
    cfg: &Config,
    references: &Path,
    prompts: Option<&Path>,
    count: Option<usize>,
    out: &Path,
    rho: Option<f64>,
) -> CmdResult {
    let pool = match prompts {
        Some(p) => PromptPool::load(p)?,
        None => PromptPool::default(),
    };
    let (subject_id, existing) = match &g.manifest {
        Some(m) => {
            let m = DatasetManifest::load(m)?;
            (m.subject_id, m.entries.len())
        }
        None => (cfg.build.subject_id.clone(), 0),
    };
    let backend = cfg.face_backend.build()?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(references)
        .map_err(|e| Error::Io {
            path: references.to_owned(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    let mut refs = Vec::new();
    for f in &files {
        let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match Reference::detect(&id, ImageBuffer::open(f)?, backend.as_ref())? {
            Some(r) => refs.push(r),
            None => log::warn!("{}: no face, not used as a reference", f.display()),
        }
    }
    let defaults = SynthConfig::default();
    let sc = SynthConfig {
        count: count.unwrap_or(defaults.count),
        perturb_rho: rho.unwrap_or(defaults.perturb_rho),
        master_seed: g.seed.unwrap_or(cfg.seed),
        canvas: cfg.keypoint_canvas,
        existing_entries: existing,
        max_concept_share: cfg.mix.max_concept_share,
        ..defaults
    };
    let gen = cfg.generator.build()?;
    let outcome = synth_augment(&refs, &pool, gen.as_ref(), &sc, out)?;
    let mut manifest = DatasetManifest::new(&subject_id);
    manifest.entries = outcome.entries.clone();
    let mpath = out.join("manifest.json");
    manifest.save(&mpath)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let failures: Vec<Value> = outcome
        .failures
        .iter()
        .map(|(id, e)| json!({ "id": id, "error": e }))
        .collect();
    let text = format!(
        "{} synthetic images, {} failed; manifest {}",
        outcome.entries.len(),
        outcome.failures.len(),
        mpath.display()
    );
    let mut o = Output::new(
        json!({
            "manifest": mpath,
            "generated": outcome.entries.len(),
            "failures": failures,
            "warnings": outcome.warnings,
        }),
        text,
    );
    o.failed = !outcome.failures.is_empty();
    Ok(o)
}

fn serve(bind: &str, data_dir: &Path, static_dir: Option<PathBuf>, backend: Arc<dyn FaceBackend>) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Io {
        path: data_dir.to_owned(),
        source: e,
    };
    let state = Arc::new(AppState::load(data_dir, backend).map_err(io)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| Error::Io {
            path: PathBuf::from(bind),
            source: e,
        })?;
        let addr = listener.local_addr().map_err(io)?;
        log::info!("listening on http://{addr}/api/v1");
        eprintln!("listening on http://{addr}/api/v1");
        server::serve(listener, state, static_dir).await.map_err(io)
    })
}
