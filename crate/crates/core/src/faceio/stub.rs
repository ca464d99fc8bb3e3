use super::{BBox, FaceBackend, FaceRecord, Landmarks, EMBEDDING_DIM};
use crate::error::Result;
use crate::imgcore::ImageBuffer;

/// Deterministic backend that ignores image content when detecting.
///
/// Detection always yields one frontal face whose box is the centered square
/// of side `min(w, h) / 2`. The embedding is the 8x8 grid of mean luma values
/// of the aligned crop, tiled twice to 128 dimensions.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubBackend;

impl StubBackend {
    pub fn face_for(width: u32, height: u32) -> FaceRecord {
        let side = width.min(height) as f64 / 2.0;
        FaceRecord::stub_layout(BBox {
            left: (width as f64 - side) / 2.0,
            top: (height as f64 - side) / 2.0,
            width: side,
            height: side,
        })
    }
}

impl FaceBackend for StubBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
        Ok(vec![StubBackend::face_for(img.width(), img.height())])
    }

    fn embed_aligned(&self, crop: &ImageBuffer, _landmarks: &Landmarks) -> Result<Vec<f64>> {
        Ok(stub_embedding(crop))
    }
}

/// Pooled-luma embedding (not normalized). An all-black crop maps to the
/// uniform vector so the result always has a direction.
pub fn stub_embedding(crop: &ImageBuffer) -> Vec<f64> {
    const GRID: usize = 8;
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let luma = crop.luma();
    let mut sums = [0.0f64; GRID * GRID];
    let mut counts = [0usize; GRID * GRID];
    for y in 0..h {
        let gy = y * GRID / h;
        for x in 0..w {
            let gx = x * GRID / w;
            sums[gy * GRID + gx] += luma[y * w + x];
            counts[gy * GRID + gx] += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    if means.iter().all(|&m| m == 0.0) {
        return vec![1.0; EMBEDDING_DIM];
    }
    means.iter().cycle().take(EMBEDDING_DIM).copied().collect()
}
