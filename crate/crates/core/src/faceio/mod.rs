//! Face analysis: detection, five-point landmarks, alignment, embeddings and
//! a yaw heuristic, behind a pluggable [`FaceBackend`].
//!
//! Three backends ship with the crate:
//!
//! - [`StubBackend`]: deterministic, content-independent geometry and an
//!   8x8 luma-pooling embedding; used by tests and offline runs.
//! - [`ExternalProcessBackend`]: newline-delimited JSON over a child
//!   process's stdio (see [`protocol`]), so any ML runtime can serve
//!   MTCNN/FaceNet-style models.
//! - [`ModelFileBackend`]: an in-process dense network loaded from a JSON
//!   weights file, paired with stub detection.

mod external;
mod model;
pub mod protocol;
mod stub;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Affine2, Point, Similarity};
use crate::identity::unit_normalize;
use crate::imgcore::{warp_affine, ImageBuffer};

pub use external::ExternalProcessBackend;
pub use model::{DenseLayer, EmbeddingModel, ModelFileBackend};
pub use stub::{stub_embedding, StubBackend};

pub const EMBEDDING_DIM: usize = 128;

/// Side of the aligned face crop.
pub const ALIGNED_SIZE: u32 = 160;

/// Eye targets in the aligned crop, as fractions of its side.
pub const LEFT_EYE_TARGET: (f64, f64) = (0.35, 0.40);
pub const RIGHT_EYE_TARGET: (f64, f64) = (0.65, 0.40);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn center(&self) -> Point {
        Point::new(self.left + self.width / 2.0, self.top + self.height / 2.0)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            left: v[0],
            top: v[1],
            width: v[2],
            height: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.left, b.top, b.width, b.height]
    }
}

/// Index of each landmark in [`FaceRecord::landmarks`].
pub mod landmark {
    pub const LEFT_EYE: usize = 0;
    pub const RIGHT_EYE: usize = 1;
    pub const NOSE: usize = 2;
    pub const MOUTH_LEFT: usize = 3;
    pub const MOUTH_RIGHT: usize = 4;
}

pub type Landmarks = [Point; 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub bbox: BBox,
    /// Left eye, right eye, nose, left mouth corner, right mouth corner.
    pub landmarks: Landmarks,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
}

impl FaceRecord {
    /// Frontal five-point layout placed inside `bbox`, confidence 1.
    pub fn stub_layout(bbox: BBox) -> FaceRecord {
        const LAYOUT: [(f64, f64); 5] = [
            LEFT_EYE_TARGET,
            RIGHT_EYE_TARGET,
            (0.50, 0.55),
            (0.38, 0.72),
            (0.62, 0.72),
        ];
        let landmarks = LAYOUT.map(|(fx, fy)| {
            Point::new(bbox.left + fx * bbox.width, bbox.top + fy * bbox.height)
        });
        FaceRecord {
            bbox,
            landmarks,
            confidence: 1.0,
            embedding: None,
            yaw_deg: Some(0.0),
        }
    }

    /// Swaps eyes / mouth corners so that left points never lie to the right
    /// of their partners.
    pub fn canonicalize(mut self) -> FaceRecord {
        canonicalize_landmarks(&mut self.landmarks);
        self
    }

    /// Checks the record invariants (finite geometry, confidence range,
    /// unit embedding).
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let b = &self.bbox;
        if ![b.left, b.top, b.width, b.height].into_iter().all(finite)
            || b.width < 0.0
            || b.height < 0.0
        {
            return Err(Error::Backend(format!("invalid face box {b:?}")));
        }
        if !self.landmarks.iter().all(|p| finite(p.x) && finite(p.y)) {
            return Err(Error::Backend("non-finite landmark".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Backend(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if let Some(e) = &self.embedding {
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Backend(format!("embedding norm {norm} is not 1")));
            }
        }
        Ok(())
    }

    pub fn interocular_distance(&self) -> f64 {
        self.landmarks[landmark::LEFT_EYE].distance(self.landmarks[landmark::RIGHT_EYE])
    }
}

pub fn canonicalize_landmarks(lm: &mut Landmarks) {
    use landmark::*;
    if lm[LEFT_EYE].x > lm[RIGHT_EYE].x {
        lm.swap(LEFT_EYE, RIGHT_EYE);
    }
    if lm[MOUTH_LEFT].x > lm[MOUTH_RIGHT].x {
        lm.swap(MOUTH_LEFT, MOUTH_RIGHT);
    }
}

/// Mirrors landmarks across the vertical axis of a `width`-wide image and
/// re-canonicalizes them.
pub fn flip_landmarks(lm: &Landmarks, width: f64) -> Landmarks {
    let mut out = lm.map(|p| Point::new(width - p.x, p.y));
    canonicalize_landmarks(&mut out);
    out
}

fn checked_iod(lm: &Landmarks) -> Result<f64> {
    let iod = lm[landmark::LEFT_EYE].distance(lm[landmark::RIGHT_EYE]);
    if !(iod.is_finite() && iod > 1e-9) {
        return Err(Error::DegenerateLandmarks(
            "eye landmarks coincide".into(),
        ));
    }
    Ok(iod)
}

/// Crude yaw proxy: nose offset from the eye midpoint in units of
/// interocular distance, `asin(2r)` in degrees, positive toward the right
/// eye. Saturates at ±90°.
pub fn estimate_yaw(lm: &Landmarks) -> Result<f64> {
    let iod = checked_iod(lm)?;
    let mid = lm[landmark::LEFT_EYE].midpoint(lm[landmark::RIGHT_EYE]);
    let r = ((lm[landmark::NOSE].x - mid.x) / iod).clamp(-1.0, 1.0);
    Ok((2.0 * r).clamp(-1.0, 1.0).asin().to_degrees())
}

/// Similarity taking the eyes onto the canonical targets of a `size x size`
/// crop.
pub fn alignment_transform(lm: &Landmarks, size: u32) -> Result<Affine2> {
    checked_iod(lm)?;
    let s = size as f64;
    let dst = [
        Point::new(LEFT_EYE_TARGET.0 * s, LEFT_EYE_TARGET.1 * s),
        Point::new(RIGHT_EYE_TARGET.0 * s, RIGHT_EYE_TARGET.1 * s),
    ];
    let src = [lm[landmark::LEFT_EYE], lm[landmark::RIGHT_EYE]];
    Similarity::fit(&src, &dst)
        .map(|t| t.to_affine())
        .ok_or_else(|| Error::DegenerateLandmarks("eye landmarks coincide".into()))
}

/// Aligned `size x size` face crop (bilinear, black fill) plus the landmarks
/// expressed in crop coordinates.
pub fn align_face_with_landmarks(img: &ImageBuffer, face: &FaceRecord, size: u32) -> Result<(ImageBuffer, Landmarks)> {
    let t = alignment_transform(&face.landmarks, size)?;
    let crop = warp_affine(img, &t, size, size, [0, 0, 0])
        .ok_or_else(|| Error::DegenerateLandmarks("alignment is not invertible".into()))?;
    Ok((crop, face.landmarks.map(|p| t.apply(p))))
}

pub fn align_face(img: &ImageBuffer, face: &FaceRecord) -> Result<ImageBuffer> {
    align_face_with_landmarks(img, face, ALIGNED_SIZE).map(|(crop, _)| crop)
}

/// A face-analysis provider.
pub trait FaceBackend: Send + Sync {
    /// Faces in `img`, canonical landmark order, highest confidence first.
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>>;

    /// Raw embedding of an aligned crop; callers normalize.
    fn embed_aligned(&self, crop: &ImageBuffer, landmarks: &Landmarks) -> Result<Vec<f64>>;
}

/// Runs detection and post-processes the result: canonical landmark order,
/// yaw filled in, descending confidence.
pub fn detect_faces(backend: &dyn FaceBackend, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
    let mut faces = backend.detect(img)?;
    for f in &mut faces {
        f.validate()?;
        canonicalize_landmarks(&mut f.landmarks);
        if f.yaw_deg.is_none() {
            f.yaw_deg = estimate_yaw(&f.landmarks).ok();
        }
    }
    faces.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(faces)
}

/// Unit-norm embedding of `face` within `img`.
pub fn embed_face(backend: &dyn FaceBackend, img: &ImageBuffer, face: &FaceRecord) -> Result<Vec<f64>> {
    let (crop, lm) = align_face_with_landmarks(img, face, ALIGNED_SIZE)?;
    let raw = backend.embed_aligned(&crop, &lm)?;
    if raw.len() != EMBEDDING_DIM {
        return Err(Error::Backend(format!(
            "embedding has {} dimensions, expected {EMBEDDING_DIM}",
            raw.len()
        )));
    }
    unit_normalize(&raw).map_err(|_| Error::Backend("backend returned a zero embedding".into()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ExternalProcess,
    NeuralModelFile,
    #[default]
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Executable (external process) or weights file (model file).
    pub location: Option<String>,
    pub args: Vec<String>,
    pub timeout_ms: u64,
    pub pool_size: usize,
    /// `[height, width, channels]` of the model input.
    pub input_shape: Option<[usize; 3]>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Stub,
            location: None,
            args: Vec::new(),
            timeout_ms: 30_000,
            pool_size: 1,
            input_shape: None,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn build(&self) -> Result<Arc<dyn FaceBackend>> {
        match self.kind {
            BackendKind::Stub => Ok(Arc::new(StubBackend)),
            BackendKind::ExternalProcess => {
                let program = self
                    .location
                    .as_deref()
                    .ok_or_else(|| Error::invalid("external_process backend needs a location"))?;
                Ok(Arc::new(ExternalProcessBackend::new(
                    program,
                    &self.args,
                    self.pool_size.max(1),
                    self.timeout(),
                )))
            }
            BackendKind::NeuralModelFile => {
                let path = self
                    .location
                    .as_deref()
                    .ok_or_else(|| Error::invalid("neural_model_file backend needs a location"))?;
                Ok(Arc::new(ModelFileBackend::load(path, self.input_shape)?))
            }
        }
    }
}
