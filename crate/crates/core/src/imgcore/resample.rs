use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKernel {
    Bilinear,
    /// Keys cubic convolution, a = -0.5.
    Bicubic,
    Lanczos3,
}

impl ResampleKernel {
    pub fn support(self) -> f64 {
        match self {
            ResampleKernel::Bilinear => 1.0,
            ResampleKernel::Bicubic => 2.0,
            ResampleKernel::Lanczos3 => 3.0,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            ResampleKernel::Bilinear => (1.0 - ax).max(0.0),
            ResampleKernel::Bicubic => {
                const A: f64 = -0.5;
                if ax <= 1.0 {
                    ((A + 2.0) * ax - (A + 3.0)) * ax * ax + 1.0
                } else if ax < 2.0 {
                    ((A * ax - 5.0 * A) * ax + 8.0 * A) * ax - 4.0 * A
                } else {
                    0.0
                }
            }
            ResampleKernel::Lanczos3 => {
                if ax >= 3.0 {
                    0.0
                } else {
                    sinc(ax) * sinc(ax / 3.0)
                }
            }
        }
    }
}

impl std::str::FromStr for ResampleKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(ResampleKernel::Bilinear),
            "bicubic" => Ok(ResampleKernel::Bicubic),
            "lanczos3" | "lanczos" => Ok(ResampleKernel::Lanczos3),
            other => Err(Error::invalid(format!("unknown kernel {other:?}"))),
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Normalized filter taps for every output coordinate along one axis.
///
/// Sample centers are aligned (`src = (dst + 0.5) * in/out - 0.5`); when
/// shrinking, the kernel is stretched by the scale factor. Taps that fall off
/// the edge are folded onto the nearest edge sample.
pub fn axis_weights(in_len: usize, out_len: usize, kernel: ResampleKernel) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let radius = kernel.support() * stretch;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - radius).floor() as i64;
            let hi = (center + radius).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for i in lo..=hi {
                let w = kernel.weight((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, in_len as i64 - 1) as usize;
                total += w;
                match taps.last_mut() {
                    Some(last) if last.0 == idx => last.1 += w,
                    _ => taps.push((idx, w)),
                }
            }
            if total.abs() < 1e-12 {
                let idx = (center.round().max(0.0) as usize).min(in_len - 1);
                return vec![(idx, 1.0)];
            }
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Separable resampling to `out_w x out_h`.
pub fn resample(img: &ImageBuffer, out_w: u32, out_h: u32, kernel: ResampleKernel) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "resample target {out_w}x{out_h} has a zero dimension"
        )));
    }
    let (w, h) = img.dimensions();
    if (w, h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let c = img.channels() as usize;
    let src = img.data();
    let (w, h, ow, oh) = (w as usize, h as usize, out_w as usize, out_h as usize);

    // Horizontal pass: h rows of ow pixels, kept in f64.
    let mut tmp = vec![0.0f64; ow * h * c];
    if ow == w {
        for (t, s) in tmp.iter_mut().zip(src) {
            *t = *s as f64;
        }
    } else {
        let xw = axis_weights(w, ow, kernel);
        for y in 0..h {
            for (ox, taps) in xw.iter().enumerate() {
                let out = &mut tmp[(y * ow + ox) * c..(y * ow + ox + 1) * c];
                for &(sx, wt) in taps {
                    let base = (y * w + sx) * c;
                    for ch in 0..c {
                        out[ch] += wt * src[base + ch] as f64;
                    }
                }
            }
        }
    }

    let mut data = vec![0u8; ow * oh * c];
    let finish = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    if oh == h {
        for (d, t) in data.iter_mut().zip(&tmp) {
            *d = finish(*t);
        }
    } else {
        let yw = axis_weights(h, oh, kernel);
        let mut acc = vec![0.0f64; c];
        for (oy, taps) in yw.iter().enumerate() {
            for ox in 0..ow {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for &(sy, wt) in taps {
                    let base = (sy * ow + ox) * c;
                    for ch in 0..c {
                        acc[ch] += wt * tmp[base + ch];
                    }
                }
                let o = (oy * ow + ox) * c;
                for ch in 0..c {
                    data[o + ch] = finish(acc[ch]);
                }
            }
        }
    }
    ImageBuffer::new(out_w, out_h, img.channels(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResizeMode {
    None,
    UpsampleOnly {
        #[serde(default = "default_up")]
        factor: f64,
    },
    DownThenUp {
        #[serde(default = "default_down")]
        down: f64,
        #[serde(default = "default_up")]
        up: f64,
    },
}

fn default_down() -> f64 {
    0.5
}

fn default_up() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplePolicy {
    #[serde(flatten)]
    pub mode: ResizeMode,
    #[serde(default = "default_kernel")]
    pub kernel: ResampleKernel,
}

fn default_kernel() -> ResampleKernel {
    ResampleKernel::Lanczos3
}

impl Default for ResamplePolicy {
    fn default() -> Self {
        ResamplePolicy {
            mode: ResizeMode::None,
            kernel: default_kernel(),
        }
    }
}

fn scaled(len: u32, factor: f64) -> Result<u32> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("scale factor {factor} must be > 0")));
    }
    Ok(((len as f64 * factor).round() as u32).max(1))
}

pub fn apply_resize_policy(img: &ImageBuffer, policy: &ResamplePolicy) -> Result<ImageBuffer> {
    let (w, h) = img.dimensions();
    match policy.mode {
        ResizeMode::None => Ok(img.clone()),
        ResizeMode::UpsampleOnly { factor } => {
            resample(img, scaled(w, factor)?, scaled(h, factor)?, policy.kernel)
        }
        ResizeMode::DownThenUp { down, up } => {
            let small = resample(img, scaled(w, down)?, scaled(h, down)?, policy.kernel)?;
            let (sw, sh) = small.dimensions();
            resample(&small, scaled(sw, up)?, scaled(sh, up)?, policy.kernel)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KERNELS: [ResampleKernel; 3] = [
        ResampleKernel::Bilinear,
        ResampleKernel::Bicubic,
        ResampleKernel::Lanczos3,
    ];

    #[test]
    fn weights_are_a_partition_of_unity() {
        for k in KERNELS {
            for (i, o) in [(16, 8), (16, 23), (5, 1), (1, 7), (100, 33)] {
                for taps in axis_weights(i, o, k) {
                    let s: f64 = taps.iter().map(|t| t.1).sum();
                    assert!((s - 1.0).abs() < 1e-12, "{k:?} {i}->{o}: {s}");
                }
            }
        }
    }

    #[test]
    fn constant_image_preserved() {
        let img = ImageBuffer::filled(2, 2, [128, 128, 128]).unwrap();
        for k in KERNELS {
            let out = resample(&img, 4, 4, k).unwrap();
            assert!(out.data().iter().all(|&v| v == 128), "{k:?}");
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let img = ImageBuffer::from_fn(9, 6, |x, y| [(x * 27) as u8, (y * 40) as u8, 3]).unwrap();
        for k in KERNELS {
            assert_eq!(resample(&img, 9, 6, k).unwrap(), img);
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        let img = ImageBuffer::filled(2, 2, [0, 0, 0]).unwrap();
        assert!(matches!(
            resample(&img, 0, 3, ResampleKernel::Bilinear),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn none_policy_is_identity_and_upsample_matches_direct() {
        let img = ImageBuffer::from_fn(6, 5, |x, y| [(x * 40) as u8, (y * 50) as u8, 9]).unwrap();
        assert_eq!(apply_resize_policy(&img, &ResamplePolicy::default()).unwrap(), img);
        let up = ResamplePolicy {
            mode: ResizeMode::UpsampleOnly { factor: 2.0 },
            kernel: ResampleKernel::Lanczos3,
        };
        assert_eq!(
            apply_resize_policy(&img, &up).unwrap(),
            resample(&img, 12, 10, ResampleKernel::Lanczos3).unwrap()
        );
    }

    #[test]
    fn policy_json_shape() {
        let p: ResamplePolicy =
            serde_json::from_str(r#"{"mode":"down_then_up","kernel":"bicubic"}"#).unwrap();
        assert_eq!(p.mode, ResizeMode::DownThenUp { down: 0.5, up: 2.0 });
        assert_eq!(p.kernel, ResampleKernel::Bicubic);
    }
}
