use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DatasetManifest, ManifestEntry, ProvenanceRecord, Source};
use crate::cropkit::{face_anchored_crop, BucketSet};
use crate::error::{Error, Result};
use crate::faceio::{detect_faces, landmark, BBox, FaceBackend, FaceRecord};
use crate::geometry::Point;
use crate::imgcore::{rotate, rotated_canvas, ImageBuffer};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub subject_id: String,
    /// A face counts as visible at or above this confidence.
    pub confidence_threshold: f64,
    /// Rotate so the eyes are level when the eye line is tilted by more
    /// than this many degrees. `None` disables levelling.
    pub level_eyes_above_deg: Option<f64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            subject_id: "subject".into(),
            confidence_threshold: 0.95,
            level_eyes_above_deg: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub file: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub manifest: DatasetManifest,
    pub kept: usize,
    pub rejected: Vec<Rejection>,
}

enum Outcome {
    Kept(ManifestEntry),
    Rejected(String),
}

/// Image files directly inside `dir`, sorted by name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Entry ids from file stems; clashing stems get their extension appended.
fn assign_ids(files: &[PathBuf]) -> Vec<String> {
    let stem = |p: &PathBuf| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for f in files {
        *counts.entry(stem(f)).or_default() += 1;
    }
    files
        .iter()
        .map(|f| {
            let s = stem(f);
            if counts[&s] > 1 {
                let ext = f.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default();
                format!("{s}_{ext}")
            } else {
                s
            }
        })
        .collect()
}

/// Rotates `img` so the face's eye line is horizontal, carrying the face
/// geometry along.
fn level_eyes(img: &ImageBuffer, face: &FaceRecord, angle_deg: f64) -> (ImageBuffer, FaceRecord) {
    let (ow, oh, t) = rotated_canvas(img.width(), img.height(), angle_deg);
    let rotated = rotate(img, angle_deg, [0, 0, 0]);
    let mut out = face.clone();
    out.landmarks = face.landmarks.map(|p| t.apply(p));
    let b = face.bbox;
    let corners = [
        Point::new(b.left, b.top),
        Point::new(b.left + b.width, b.top),
        Point::new(b.left, b.top + b.height),
        Point::new(b.left + b.width, b.top + b.height),
    ]
    .map(|p| t.apply(p));
    let min_x = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).max(0.0);
    let min_y = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).max(0.0);
    let max_x = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).min(ow as f64);
    let max_y = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).min(oh as f64);
    out.bbox = BBox {
        left: min_x,
        top: min_y,
        width: max_x - min_x,
        height: max_y - min_y,
    };
    (rotated, out)
}

fn eye_line_angle(face: &FaceRecord) -> f64 {
    let l = face.landmarks[landmark::LEFT_EYE];
    let r = face.landmarks[landmark::RIGHT_EYE];
    (r.y - l.y).atan2(r.x - l.x).to_degrees()
}

fn process(
    file: &Path,
    id: &str,
    out_dir: &Path,
    buckets: &BucketSet,
    backend: &dyn FaceBackend,
    cfg: &BuildConfig,
) -> Result<Outcome> {
    let img = match ImageBuffer::open(file) {
        Ok(i) => i,
        Err(e) => return Ok(Outcome::Rejected(format!("unreadable: {e}"))),
    };
    let faces = detect_faces(backend, &img)?;
    let visible: Vec<&FaceRecord> = faces.iter().filter(|f| f.confidence >= cfg.confidence_threshold).collect();
    let face = match visible.len() {
        1 => visible[0].clone(),
        0 if faces.is_empty() => return Ok(Outcome::Rejected("no-face".into())),
        0 => return Ok(Outcome::Rejected("low-confidence".into())),
        _ => return Ok(Outcome::Rejected("multi-face".into())),
    };
    let mut provenance = vec![ProvenanceRecord::new(
        "detect",
        json!({ "confidence": face.confidence, "bbox": face.bbox }),
        None,
    )];
    let (img, face) = match cfg.level_eyes_above_deg {
        Some(limit) if eye_line_angle(&face).abs() > limit => {
            let angle = eye_line_angle(&face);
            provenance.push(ProvenanceRecord::new("level_eyes", json!({ "angle_deg": angle }), None));
            level_eyes(&img, &face, angle)
        }
        _ => (img, face),
    };
    let bucket = buckets.nearest(img.width(), img.height())?;
    let crop = match face_anchored_crop(&img, &face, bucket) {
        Ok(c) => c,
        Err(Error::InvalidArgument(msg)) => return Ok(Outcome::Rejected(format!("bad-face-geometry: {msg}"))),
        Err(e) => return Err(e),
    };
    provenance.push(ProvenanceRecord::new(
        "face_anchored_crop",
        json!({
            "bucket": bucket.to_string(),
            "window": crop.window,
            "clamped_x": crop.clamped_x,
            "clamped_y": crop.clamped_y,
        }),
        None,
    ));
    let rel = format!("images/{id}.png");
    crop.image.save_png(out_dir.join(&rel))?;
    Ok(Outcome::Kept(ManifestEntry {
        id: id.to_owned(),
        path: rel,
        width: crop.image.width(),
        height: crop.image.height(),
        source: Source::Real,
        concept_tags: Vec::new(),
        provenance,
    }))
}

/// Keeps images with exactly one confidently detected face, crops each
/// around the face to its nearest bucket and writes it to
/// `out_dir/images/<id>.png`. Unreadable files are rejected with a reason;
/// a backend failure aborts the build.
pub fn build_dataset(
    raw_dir: &Path,
    out_dir: &Path,
    buckets: &BucketSet,
    backend: &dyn FaceBackend,
    cfg: &BuildConfig,
) -> Result<BuildReport> {
    let files = list_images(raw_dir)?;
    let ids = assign_ids(&files);
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let outcomes: Vec<Result<Outcome>> = files
        .par_iter()
        .zip(&ids)
        .map(|(f, id)| process(f, id, out_dir, buckets, backend, cfg))
        .collect();
    let mut manifest = DatasetManifest::new(&cfg.subject_id);
    let mut rejected = Vec::new();
    for (file, outcome) in files.iter().zip(outcomes) {
        match outcome? {
            Outcome::Kept(e) => manifest.entries.push(e),
            Outcome::Rejected(reason) => rejected.push(Rejection {
                file: file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                reason,
            }),
        }
    }
    Ok(BuildReport {
        kept: manifest.entries.len(),
        manifest,
        rejected,
    })
}
