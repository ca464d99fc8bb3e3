use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FaceBackend, FaceRecord, Landmarks, StubBackend, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::imgcore::{resample, ImageBuffer, ResampleKernel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major `outputs x inputs`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
}

/// A small fully-connected embedding network stored as JSON.
///
/// The input tensor is the aligned crop resized to `input_shape`
/// (`[height, width, channels]`, channels 1 = luma or 3 = RGB), scaled to
/// `[0, 1]` and flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub input_shape: [usize; 3],
    pub layers: Vec<DenseLayer>,
}

impl EmbeddingModel {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(Error::invalid(format!(
                "unsupported input shape {:?}",
                self.input_shape
            )));
        }
        let mut width = h * w * c;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.bias.len()
                || layer.weights.iter().any(|row| row.len() != width)
            {
                return Err(Error::invalid(format!(
                    "layer {i} does not accept {width} inputs"
                )));
            }
            width = layer.bias.len();
        }
        if width != EMBEDDING_DIM {
            return Err(Error::invalid(format!(
                "model emits {width} values, expected {EMBEDDING_DIM}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, crop: &ImageBuffer) -> Result<Vec<f64>> {
        let [h, w, c] = self.input_shape;
        let sized = resample(crop, w as u32, h as u32, ResampleKernel::Bilinear)?;
        let mut x: Vec<f64> = if c == 1 {
            sized.luma().into_iter().map(|v| v / 255.0).collect()
        } else {
            sized
                .to_rgb()
                .data()
                .iter()
                .map(|&v| v as f64 / 255.0)
                .collect()
        };
        for layer in &self.layers {
            x = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| {
                    let v = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b;
                    match layer.activation {
                        Activation::Linear => v,
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    }
                })
                .collect();
        }
        Ok(x)
    }
}

/// In-process embedder loaded from a model file; detection uses the stub
/// geometry.
pub struct ModelFileBackend {
    model: EmbeddingModel,
}

impl ModelFileBackend {
    pub fn new(model: EmbeddingModel) -> Result<Self> {
        model.validate()?;
        Ok(ModelFileBackend { model })
    }

    pub fn load(path: impl AsRef<Path>, expected_shape: Option<[usize; 3]>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: EmbeddingModel = serde_json::from_str(&text)?;
        if let Some(shape) = expected_shape {
            if shape != model.input_shape {
                return Err(Error::invalid(format!(
                    "model input shape {:?} differs from configured {shape:?}",
                    model.input_shape
                )));
            }
        }
        ModelFileBackend::new(model)
    }
}

impl FaceBackend for ModelFileBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
        StubBackend.detect(img)
    }

    fn embed_aligned(&self, crop: &ImageBuffer, _landmarks: &Landmarks) -> Result<Vec<f64>> {
        self.model.forward(crop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faceio::{detect_faces, embed_face};

    fn model() -> EmbeddingModel {
        let inputs = 4 * 4;
        EmbeddingModel {
            input_shape: [4, 4, 1],
            layers: vec![DenseLayer {
                weights: (0..EMBEDDING_DIM)
                    .map(|o| (0..inputs).map(|i| ((o * 7 + i * 3) % 11) as f64 - 5.0).collect())
                    .collect(),
                bias: vec![0.1; EMBEDDING_DIM],
                activation: Activation::Tanh,
            }],
        }
    }

    #[test]
    fn model_backend_is_bit_reproducible() {
        let backend = ModelFileBackend::new(model()).unwrap();
        let img = ImageBuffer::from_fn(90, 70, |x, y| [(x * 2) as u8, (y * 3) as u8, 9]).unwrap();
        let run = || {
            let face = detect_faces(&backend, &img).unwrap().remove(0);
            embed_face(&backend, &img, &face).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut m = model();
        m.layers[0].bias.pop();
        assert!(ModelFileBackend::new(m).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, serde_json::to_string(&model()).unwrap()).unwrap();
        assert!(ModelFileBackend::load(&p, Some([4, 4, 1])).is_ok());
        assert!(ModelFileBackend::load(&p, Some([8, 8, 1])).is_err());
    }
}
