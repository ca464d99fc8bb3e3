use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    generate, image_hash, perturb_landmarks, render_keypoints, GenRequest, GenerationRecord, Generator,
    KeypointImageSpec, PerturbConfig,
};
use crate::datasetkit::{entry_seed, ManifestEntry, PromptPool, ProvenanceRecord, Source};
use crate::error::{Error, Result};
use crate::faceio::{detect_faces, FaceBackend, FaceRecord, Landmarks};
use crate::geometry::Point;
use crate::imgcore::ImageBuffer;

/// Reference images used per generation unless told otherwise.
pub const DEFAULT_REFERENCE_COUNT: usize = 4;

/// Scales landmarks from a `src_w x src_h` image onto the canvas, each axis
/// independently.
pub fn map_landmarks_to_canvas(lm: &Landmarks, src: (u32, u32), canvas: (u32, u32)) -> Landmarks {
    let sx = canvas.0 as f64 / src.0 as f64;
    let sy = canvas.1 as f64 / src.1 as f64;
    lm.map(|p| Point::new(p.x * sx, p.y * sy))
}

/// A subject photo with its detected face.
#[derive(Clone, Debug)]
pub struct Reference {
    pub id: String,
    pub image: ImageBuffer,
    pub face: FaceRecord,
}

impl Reference {
    /// `None` when the backend finds no face.
    pub fn detect(id: &str, image: ImageBuffer, backend: &dyn FaceBackend) -> Result<Option<Reference>> {
        let face = detect_faces(backend, &image)?.into_iter().next();
        Ok(face.map(|face| Reference {
            id: id.to_owned(),
            image,
            face,
        }))
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn default_canvas() -> [u32; 2] {
    [1024, 1024]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepPlan {
    pub prompt: String,
    pub reference_paths: Vec<PathBuf>,
    /// Image of anyone whose face placement conditions the first step.
    pub keypoints_source: PathBuf,
    pub seeds: [u64; 2],
    #[serde(default = "default_canvas")]
    pub canvas: [u32; 2],
}

impl TwoStepPlan {
    /// Uses the first [`DEFAULT_REFERENCE_COUNT`] images of `dir` by name.
    pub fn from_reference_dir(dir: &Path, keypoints_source: &Path, prompt: &str, seed: u64) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        files.sort();
        files.truncate(DEFAULT_REFERENCE_COUNT);
        if files.is_empty() {
            return Err(Error::invalid(format!("no reference images in {}", dir.display())));
        }
        Ok(TwoStepPlan {
            prompt: prompt.to_owned(),
            reference_paths: files,
            keypoints_source: keypoints_source.to_owned(),
            seeds: [seed, seed.wrapping_add(1)],
            canvas: default_canvas(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepOutcome {
    pub step1_output: PathBuf,
    pub final_output: PathBuf,
    /// Step 1 then step 2.
    pub records: Vec<GenerationRecord>,
}

/// Generates with foreign keypoints, then regenerates with keypoints taken
/// from the subject's own first-step output. Files land in `out_dir`:
/// `step1.png`, `final.png`, the two keypoint images and `two_step.json`.
pub fn run_two_step(
    plan: &TwoStepPlan,
    gen: &dyn Generator,
    backend: &dyn FaceBackend,
    out_dir: &Path,
) -> Result<TwoStepOutcome> {
    if plan.reference_paths.is_empty() {
        return Err(Error::invalid("two-step plan has no reference images"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let references = plan
        .reference_paths
        .iter()
        .map(ImageBuffer::open)
        .collect::<Result<Vec<_>>>()?;
    let reference_ids: Vec<String> = plan.reference_paths.iter().map(|p| stem(p)).collect();
    let canvas = (plan.canvas[0], plan.canvas[1]);
    let spec = KeypointImageSpec::new(canvas.0, canvas.1);

    let source = ImageBuffer::open(&plan.keypoints_source)?;
    let source_face = detect_faces(backend, &source)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("no face found in the keypoints source image"))?;
    let kp1 = render_keypoints(
        &map_landmarks_to_canvas(&source_face.landmarks, source.dimensions(), canvas),
        &spec,
    )?;
    kp1.save_png(out_dir.join("step1_keypoints.png"))?;
    let step = |keypoints: &ImageBuffer, seed: u64| {
        generate(
            gen,
            &GenRequest {
                prompt: plan.prompt.clone(),
                seed,
                count: 1,
                reference_ids: reference_ids.clone(),
                references: references.clone(),
                keypoints: keypoints.clone(),
            },
        )
    };
    let (mut images, rec1) = step(&kp1, plan.seeds[0])?;
    let step1 = images.remove(0);
    let step1_path = out_dir.join("step1.png");
    step1.save_png(&step1_path)?;

    let face = detect_faces(backend, &step1)?.into_iter().next().ok_or_else(|| Error::TwoStepFailed {
        reason: "no face detected in the step-1 output".into(),
        step1_output: Some(step1_path.clone()),
    })?;
    let kp2 = render_keypoints(&map_landmarks_to_canvas(&face.landmarks, step1.dimensions(), canvas), &spec)?;
    kp2.save_png(out_dir.join("step2_keypoints.png"))?;
    let (mut images, rec2) = step(&kp2, plan.seeds[1])?;
    let final_path = out_dir.join("final.png");
    images.remove(0).save_png(&final_path)?;

    let outcome = TwoStepOutcome {
        step1_output: step1_path,
        final_output: final_path,
        records: vec![rec1, rec2],
    };
    let record_path = out_dir.join("two_step.json");
    let text = serde_json::to_string_pretty(&json!({ "plan": plan, "outcome": outcome }))?;
    std::fs::write(&record_path, text).map_err(|e| Error::io(&record_path, e))?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub perturb_rho: f64,
    pub master_seed: u64,
    pub canvas: [u32; 2],
    /// Size of the dataset the results will be merged into.
    pub existing_entries: usize,
    pub max_concept_share: f64,
    pub max_in_flight: usize,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            perturb_rho: 0.05,
            master_seed: 0,
            canvas: default_canvas(),
            existing_entries: 0,
            max_concept_share: 0.25,
            max_in_flight: 4,
            id_prefix: "synth".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthOutcome {
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Share warnings for a round-robin assignment of `count` samples.
fn share_warnings(pool: &PromptPool, cfg: &SynthConfig) -> Vec<String> {
    let mut per_tag: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..cfg.count {
        *per_tag.entry(pool.prompts[i % pool.len()].tag.as_str()).or_default() += 1;
    }
    let total = (cfg.existing_entries + cfg.count) as f64;
    per_tag
        .into_iter()
        .filter(|&(_, n)| n as f64 > cfg.max_concept_share * total + 1e-9)
        .map(|(tag, n)| {
            format!(
                "concept '{tag}' would make up {n}/{} = {:.1}% of the merged dataset (limit {:.0}%)",
                total,
                100.0 * n as f64 / total,
                100.0 * cfg.max_concept_share
            )
        })
        .collect()
}

/// Generates `cfg.count` synthetic images, cycling through the prompt pool.
/// Each sample perturbs the landmarks of a reference picked by its own seed,
/// so adding samples never changes earlier ones. Images go to
/// `out_dir/images/<id>.png` and their keypoints to `out_dir/keypoints/`.
pub fn synth_augment(
    refs: &[Reference],
    pool: &PromptPool,
    gen: &dyn Generator,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<SynthOutcome> {
    if refs.is_empty() {
        return Err(Error::invalid("synthetic augmentation needs at least one reference with a face"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("prompt pool is empty"));
    }
    let warnings = share_warnings(pool, cfg);
    for w in &warnings {
        log::warn!("{w}");
    }
    for sub in ["images", "keypoints"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let canvas = (cfg.canvas[0], cfg.canvas[1]);
    let spec = KeypointImageSpec::new(canvas.0, canvas.1);
    let reference_ids: Vec<String> = refs.iter().map(|r| r.id.clone()).collect();
    let references: Vec<ImageBuffer> = refs.iter().map(|r| r.image.clone()).collect();

    let sample = |i: usize| -> Result<ManifestEntry> {
        let id = format!("{}_{i:04}", cfg.id_prefix);
        let seed = entry_seed(cfg.master_seed, &id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &refs[rng.random_range(0..refs.len())];
        let perturb_seed: u64 = rng.random();
        let prompt = &pool.prompts[i % pool.len()];
        let lm = map_landmarks_to_canvas(&r.face.landmarks, r.image.dimensions(), canvas);
        let lm = perturb_landmarks(
            &lm,
            &PerturbConfig {
                rho: cfg.perturb_rho,
                seed: perturb_seed,
            },
        )?;
        let keypoints = render_keypoints(&lm, &spec)?;
        let kp_rel = format!("keypoints/{id}.png");
        keypoints.save_png(out_dir.join(&kp_rel))?;
        let (mut images, record) = generate(
            gen,
            &GenRequest {
                prompt: prompt.text.clone(),
                seed,
                count: 1,
                reference_ids: reference_ids.clone(),
                references: references.clone(),
                keypoints,
            },
        )?;
        let img = images.remove(0);
        let rel = format!("images/{id}.png");
        img.save_png(out_dir.join(&rel))?;
        Ok(ManifestEntry {
            id,
            path: rel,
            width: img.width(),
            height: img.height(),
            source: Source::Synthetic,
            concept_tags: vec![prompt.tag.clone()],
            provenance: vec![ProvenanceRecord::new(
                "generate",
                json!({
                    "record": record,
                    "keypoints_from": r.id,
                    "keypoints_path": kp_rel,
                    "perturb_rho": cfg.perturb_rho,
                    "image_sha256": image_hash(&img)?,
                }),
                Some(seed),
            )],
        })
    };

    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<ManifestEntry>> =
        pool_threads.install(|| (0..cfg.count).into_par_iter().map(sample).collect());

    let mut outcome = SynthOutcome {
        warnings,
        ..Default::default()
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => outcome.entries.push(e),
            Err(e) => outcome.failures.push((format!("{}_{i:04}", cfg.id_prefix), e.to_string())),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasetkit::parse_prompts;
    use crate::faceio::StubBackend;
    use crate::genflow::MockGenerator;

    fn reference(id: &str) -> Reference {
        let img = ImageBuffer::from_fn(200, 160, |x, y| [x as u8, y as u8, 77]).unwrap();
        Reference::detect(id, img, &StubBackend).unwrap().unwrap()
    }

    #[test]
    fn per_axis_mapping() {
        let lm = [Point::new(10.0, 10.0); 5];
        let m = map_landmarks_to_canvas(&lm, (100, 50), (200, 200));
        assert_eq!(m[0], Point::new(20.0, 40.0));
    }

    #[test]
    fn round_robin_and_share_warning() {
        let dir = tempfile::tempdir().unwrap();
        let pool = parse_prompts("a\nb\nc\nd\n");
        let cfg = SynthConfig {
            canvas: [128, 128],
            ..Default::default()
        };
        let out = synth_augment(&[reference("r0")], &pool, &MockGenerator, &cfg, dir.path()).unwrap();
        assert_eq!(out.entries.len(), 8);
        let mut per: BTreeMap<String, usize> = BTreeMap::new();
        for e in &out.entries {
            *per.entry(e.concept_tags[0].clone()).or_default() += 1;
            assert_eq!(e.source, Source::Synthetic);
        }
        assert!(per.values().all(|&n| n == 2));
        // 2 of 8 is exactly 25%: allowed
        assert!(out.warnings.is_empty());

        let single = parse_prompts("library\n");
        let cfg = SynthConfig {
            existing_entries: 20,
            ..cfg
        };
        assert_eq!(share_warnings(&single, &cfg).len(), 1);
    }

    #[test]
    fn zero_rho_single_reference_repeats_keypoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            canvas: [96, 96],
            perturb_rho: 0.0,
            ..Default::default()
        };
        let out = synth_augment(&[reference("r0")], &PromptPool::default(), &MockGenerator, &cfg, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("keypoints/synth_0000.png")).unwrap();
        for i in 1..8 {
            assert_eq!(std::fs::read(dir.path().join(format!("keypoints/synth_{i:04}.png"))).unwrap(), first);
        }
        assert!(out.failures.is_empty());
    }
}
