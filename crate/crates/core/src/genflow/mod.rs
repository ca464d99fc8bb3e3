//! Conditioning images, the generator interface and the generation
//! pipelines built on them.

mod client;
mod pipeline;

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::faceio::protocol::{decode_png_b64, encode_png_b64};
use crate::faceio::{landmark, Landmarks};
use crate::geometry::Point;
use crate::imgcore::{resample, ImageBuffer, ResampleKernel};

pub use client::{HttpGenerator, ReplayEntry, ReplayGenerator, DEFAULT_RETRIES};
pub use pipeline::{
    map_landmarks_to_canvas, run_two_step, synth_augment, Reference, SynthConfig, SynthOutcome, TwoStepOutcome,
    TwoStepPlan, DEFAULT_REFERENCE_COUNT,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// Maximum displacement as a fraction of the interocular distance.
    pub rho: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { rho: 0.05, seed: 0 }
    }
}

/// Moves every landmark by an independent offset drawn uniformly from the
/// disk of radius `rho * IOD`.
pub fn perturb_landmarks(lm: &Landmarks, cfg: &PerturbConfig) -> Result<Landmarks> {
    if !(cfg.rho.is_finite() && cfg.rho >= 0.0) {
        return Err(Error::invalid(format!("rho = {} must be >= 0", cfg.rho)));
    }
    let iod = lm[landmark::LEFT_EYE].distance(lm[landmark::RIGHT_EYE]);
    if !(iod.is_finite() && iod > 1e-9) {
        return Err(Error::DegenerateLandmarks(format!("interocular distance {iod}")));
    }
    if cfg.rho == 0.0 {
        return Ok(*lm);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_r = cfg.rho * iod;
    Ok(lm.map(|p| {
        let r = max_r * rng.random::<f64>().sqrt();
        let theta = TAU * rng.random::<f64>();
        Point::new(p.x + r * theta.cos(), p.y + r * theta.sin())
    }))
}

/// Colours of the five keypoint disks, in landmark order.
pub const KEYPOINT_COLORS: [[u8; 3]; 5] = [
    [0xFF, 0x00, 0x00],
    [0x00, 0xFF, 0x00],
    [0x00, 0x00, 0xFF],
    [0xFF, 0xFF, 0x00],
    [0xFF, 0x00, 0xFF],
];

pub const MIN_KEYPOINT_CANVAS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointImageSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_colors")]
    pub colors: [[u8; 3]; 5],
    /// Disk radius in pixels; defaults to 1% of the diagonal, at least 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

fn default_colors() -> [[u8; 3]; 5] {
    KEYPOINT_COLORS
}

impl KeypointImageSpec {
    pub fn new(width: u32, height: u32) -> Self {
        KeypointImageSpec {
            width,
            height,
            colors: KEYPOINT_COLORS,
            radius: None,
        }
    }

    pub fn disk_radius(&self) -> f64 {
        self.radius.unwrap_or_else(|| {
            let diag = (self.width as f64).hypot(self.height as f64);
            (0.01 * diag).max(2.0)
        })
    }
}

/// Black canvas with one filled disk per landmark; a pixel belongs to a disk
/// when its center lies within the radius. Later landmarks paint over
/// earlier ones; off-canvas parts are clipped.
pub fn render_keypoints(lm: &Landmarks, spec: &KeypointImageSpec) -> Result<ImageBuffer> {
    if spec.width < MIN_KEYPOINT_CANVAS || spec.height < MIN_KEYPOINT_CANVAS {
        return Err(Error::invalid(format!(
            "keypoint canvas {}x{} is below {MIN_KEYPOINT_CANVAS}x{MIN_KEYPOINT_CANVAS}",
            spec.width, spec.height
        )));
    }
    let (w, h) = (spec.width as usize, spec.height as usize);
    let r = spec.disk_radius();
    let mut data = vec![0u8; w * h * 3];
    for (p, color) in lm.iter().zip(&spec.colors) {
        if !(p.x.is_finite() && p.y.is_finite()) {
            continue;
        }
        let x0 = (p.x - r - 0.5).floor().max(0.0);
        let x1 = (p.x + r - 0.5).ceil().min(w as f64 - 1.0);
        let y0 = (p.y - r - 0.5).floor().max(0.0);
        let y1 = (p.y + r - 0.5).ceil().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let (dx, dy) = (x as f64 + 0.5 - p.x, y as f64 + 0.5 - p.y);
                if dx * dx + dy * dy <= r * r {
                    let i = (y * w + x) * 3;
                    data[i..i + 3].copy_from_slice(color);
                }
            }
        }
    }
    ImageBuffer::new(spec.width, spec.height, 3, data)
}

/// Hex SHA-256 of the image's PNG encoding.
pub fn image_hash(img: &ImageBuffer) -> Result<String> {
    Ok(hex::encode(Sha256::digest(img.to_png()?)))
}

/// Request body sent to the generation service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub seed: u64,
    pub count: u32,
    pub reference_images_png_b64: Vec<String>,
    pub keypoints_png_b64: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub images_png_b64: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GenRequest {
    pub prompt: String,
    pub seed: u64,
    pub count: u32,
    pub reference_ids: Vec<String>,
    pub references: Vec<ImageBuffer>,
    pub keypoints: ImageBuffer,
}

impl GenRequest {
    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::invalid("generation needs at least one reference image"));
        }
        if self.reference_ids.len() != self.references.len() {
            return Err(Error::invalid("reference ids and images differ in number"));
        }
        if self.count == 0 {
            return Err(Error::invalid("sample count must be >= 1"));
        }
        Ok(())
    }

    pub fn to_wire(&self) -> Result<WireRequest> {
        Ok(WireRequest {
            prompt: self.prompt.clone(),
            seed: self.seed,
            count: self.count,
            reference_images_png_b64: self.references.iter().map(encode_png_b64).collect::<Result<_>>()?,
            keypoints_png_b64: encode_png_b64(&self.keypoints)?,
        })
    }
}

/// What was asked of the generator, enough to re-issue the call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub seed: u64,
    pub count: u32,
    pub reference_ids: Vec<String>,
    pub keypoints_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub attempts: u32,
}

pub struct GenOutput {
    pub images: Vec<ImageBuffer>,
    pub attempts: u32,
}

/// A text-to-image service conditioned on reference images and keypoints.
pub trait Generator: Send + Sync {
    fn generate(&self, req: &WireRequest) -> Result<GenOutput>;

    fn endpoint(&self) -> Option<String> {
        None
    }
}

/// Decodes the images of a service response, mapping service-side errors.
pub fn decode_response(resp: &WireResponse, expected: u32) -> Result<Vec<ImageBuffer>> {
    if let Some(e) = &resp.error {
        return Err(Error::GenerationFailed(e.clone()));
    }
    if resp.images_png_b64.len() != expected as usize {
        return Err(Error::Protocol(format!(
            "asked for {expected} images, got {}",
            resp.images_png_b64.len()
        )));
    }
    resp.images_png_b64.iter().map(|s| decode_png_b64(s)).collect()
}

/// Runs one generation call and stamps it with its record.
pub fn generate(gen: &dyn Generator, req: &GenRequest) -> Result<(Vec<ImageBuffer>, GenerationRecord)> {
    req.validate()?;
    let out = gen.generate(&req.to_wire()?)?;
    let record = GenerationRecord {
        prompt: req.prompt.clone(),
        seed: req.seed,
        count: req.count,
        reference_ids: req.reference_ids.clone(),
        keypoints_sha256: image_hash(&req.keypoints)?,
        endpoint: gen.endpoint(),
        attempts: out.attempts,
    };
    Ok((out.images, record))
}

/// Deterministic in-process stand-in for a generation service: every sample
/// is the first reference resized to the keypoint canvas with the non-black
/// keypoint pixels painted on top.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockGenerator;

impl MockGenerator {
    pub fn respond(req: &WireRequest) -> Result<WireResponse> {
        let kp = decode_png_b64(&req.keypoints_png_b64)?;
        let first = req
            .reference_images_png_b64
            .first()
            .ok_or_else(|| Error::invalid("no reference images"))?;
        let base = resample(&decode_png_b64(first)?.to_rgb(), kp.width(), kp.height(), ResampleKernel::Bilinear)?;
        let mut data = base.into_data();
        for (px, k) in data.chunks_mut(3).zip(kp.to_rgb().data().chunks(3)) {
            if k != [0, 0, 0] {
                px.copy_from_slice(k);
            }
        }
        let img = ImageBuffer::new(kp.width(), kp.height(), 3, data)?;
        let encoded = encode_png_b64(&img)?;
        Ok(WireResponse {
            images_png_b64: vec![encoded; req.count as usize],
            error: None,
        })
    }
}

impl Generator for MockGenerator {
    fn generate(&self, req: &WireRequest) -> Result<GenOutput> {
        let resp = MockGenerator::respond(req)?;
        Ok(GenOutput {
            images: decode_response(&resp, req.count)?,
            attempts: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eyes_at_100() -> Landmarks {
        [
            Point::new(100.0, 100.0),
            Point::new(200.0, 100.0),
            Point::new(150.0, 140.0),
            Point::new(120.0, 170.0),
            Point::new(180.0, 170.0),
        ]
    }

    #[test]
    fn zero_rho_is_identity() {
        let lm = eyes_at_100();
        assert_eq!(perturb_landmarks(&lm, &PerturbConfig { rho: 0.0, seed: 5 }).unwrap(), lm);
    }

    #[test]
    fn displacement_bound_over_many_seeds() {
        let lm = eyes_at_100();
        for seed in 0..1000 {
            let cfg = PerturbConfig { rho: 0.05, seed };
            let out = perturb_landmarks(&lm, &cfg).unwrap();
            assert_eq!(out, perturb_landmarks(&lm, &cfg).unwrap());
            for (a, b) in lm.iter().zip(&out) {
                assert!(a.distance(*b) <= 5.0 + 1e-9);
            }
            let iod = out[0].distance(out[1]);
            assert!((90.0 - 1e-9..=110.0 + 1e-9).contains(&iod));
        }
    }

    #[test]
    fn degenerate_and_negative_rho_rejected() {
        let mut lm = eyes_at_100();
        assert!(perturb_landmarks(&lm, &PerturbConfig { rho: -0.1, seed: 0 }).is_err());
        lm[1] = lm[0];
        assert!(matches!(
            perturb_landmarks(&lm, &PerturbConfig::default()),
            Err(Error::DegenerateLandmarks(_))
        ));
    }

    #[test]
    fn disks_carry_their_colours() {
        let spec = KeypointImageSpec::new(512, 512);
        let lm = eyes_at_100();
        let img = render_keypoints(&lm, &spec).unwrap();
        for (p, c) in lm.iter().zip(KEYPOINT_COLORS) {
            assert_eq!(img.rgb(p.x as u32, p.y as u32), c);
        }
        assert_eq!(img.rgb(0, 0), [0, 0, 0]);
        assert_eq!(img.to_png().unwrap(), render_keypoints(&lm, &spec).unwrap().to_png().unwrap());
        assert!((spec.disk_radius() - 0.01 * 512f64.hypot(512.0)).abs() < 1e-12);
        assert_eq!(KeypointImageSpec::new(64, 64).disk_radius(), 2.0);
    }

    #[test]
    fn off_canvas_landmark_leaves_no_trace() {
        let mut lm = eyes_at_100();
        lm[0] = Point::new(-50.0, -50.0);
        let img = render_keypoints(&lm, &KeypointImageSpec::new(512, 512)).unwrap();
        assert!(img.data().chunks(3).all(|p| p != KEYPOINT_COLORS[0]));
        assert!(render_keypoints(&lm, &KeypointImageSpec::new(63, 512)).is_err());
    }

    #[test]
    fn mock_echoes_reference() {
        let reference = ImageBuffer::filled(32, 32, [10, 20, 30]).unwrap();
        let keypoints = render_keypoints(&eyes_at_100(), &KeypointImageSpec::new(256, 256)).unwrap();
        let req = GenRequest {
            prompt: "p".into(),
            seed: 1,
            count: 4,
            reference_ids: vec!["r0".into()],
            references: vec![reference],
            keypoints: keypoints.clone(),
        };
        let (images, record) = generate(&MockGenerator, &req).unwrap();
        assert_eq!(images.len(), 4);
        assert_eq!(images[0].dimensions(), (256, 256));
        assert_eq!(images[0].rgb(0, 0), [10, 20, 30]);
        assert_eq!(record.keypoints_sha256, image_hash(&keypoints).unwrap());
        assert_eq!(record.reference_ids, vec!["r0".to_string()]);
    }
}
