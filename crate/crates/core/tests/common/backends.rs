//! Scripted face backends and a generator wrapper that records its calls.

#![allow(dead_code)]

use std::sync::Mutex;

use portrait_forge_core::faceio::{stub_embedding, BBox, FaceBackend, FaceRecord, Landmarks};
use portrait_forge_core::genflow::{GenOutput, Generator, WireRequest};
use portrait_forge_core::{ImageBuffer, Result};

/// Finds the centroid of the near-white pixels and reports a square face of
/// side `side` centered there. No white pixels, no face.
pub struct SpotBackend {
    pub side: f64,
}

pub fn white_centroid(img: &ImageBuffer, threshold: u8) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.pixel(x, y)[..3].iter().all(|&v| v >= threshold) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1.0;
            }
        }
    }
    (n > 0.0).then(|| (sx / n, sy / n))
}

/// Intensity-weighted centroid over the whole image, for a dark background.
pub fn luma_centroid(img: &ImageBuffer) -> (f64, f64) {
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v: f64 = img.pixel(x, y)[..3].iter().map(|&c| c as f64).sum();
            sx += v * (x as f64 + 0.5);
            sy += v * (y as f64 + 0.5);
            total += v;
        }
    }
    (sx / total, sy / total)
}

impl FaceBackend for SpotBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
        Ok(white_centroid(img, 200)
            .map(|(cx, cy)| {
                FaceRecord::stub_layout(BBox {
                    left: cx - self.side / 2.0,
                    top: cy - self.side / 2.0,
                    width: self.side,
                    height: self.side,
                })
            })
            .into_iter()
            .collect())
    }

    fn embed_aligned(&self, crop: &ImageBuffer, _lm: &Landmarks) -> Result<Vec<f64>> {
        Ok(stub_embedding(crop))
    }
}

/// Sees a centered face only in images of exactly `dims`.
pub struct SizeGatedBackend {
    pub dims: (u32, u32),
}

impl FaceBackend for SizeGatedBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
        if img.dimensions() != self.dims {
            return Ok(Vec::new());
        }
        Ok(vec![portrait_forge_core::faceio::StubBackend::face_for(img.width(), img.height())])
    }

    fn embed_aligned(&self, crop: &ImageBuffer, _lm: &Landmarks) -> Result<Vec<f64>> {
        Ok(stub_embedding(crop))
    }
}

/// Passes calls through to `inner`, keeping every request.
pub struct Recording<G> {
    pub inner: G,
    pub calls: Mutex<Vec<WireRequest>>,
}

impl<G> Recording<G> {
    pub fn new(inner: G) -> Self {
        Recording {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<WireRequest> {
        self.calls.lock().unwrap().clone()
    }
}

impl<G: Generator> Generator for Recording<G> {
    fn generate(&self, req: &WireRequest) -> Result<GenOutput> {
        self.calls.lock().unwrap().push(req.clone());
        self.inner.generate(req)
    }
}
