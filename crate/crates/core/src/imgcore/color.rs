use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};

/// Signed jitter amounts. Brightness scales HSV value and saturation scales
/// HSV saturation, both multiplicatively by `1 + pct/100`; hue shifts in
/// degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColorJitterParams {
    #[serde(default)]
    pub brightness_pct: f64,
    #[serde(default)]
    pub saturation_pct: f64,
    #[serde(default)]
    pub hue_deg: f64,
}

impl ColorJitterParams {
    /// Magnitudes of the mild tier (±5 %, ±5°).
    pub const MILD: ColorJitterParams = ColorJitterParams {
        brightness_pct: 5.0,
        saturation_pct: 5.0,
        hue_deg: 5.0,
    };

    /// Magnitudes of the strong tier (±15 %, ±15°).
    pub const STRONG: ColorJitterParams = ColorJitterParams {
        brightness_pct: 15.0,
        saturation_pct: 15.0,
        hue_deg: 15.0,
    };
}

/// `(h in [0, 360), s in [0, 1], v in [0, 1])`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn color_jitter(img: &ImageBuffer, params: &ColorJitterParams) -> ImageBuffer {
    let c = img.channels() as usize;
    let sat_mul = 1.0 + params.saturation_pct / 100.0;
    let val_mul = 1.0 + params.brightness_pct / 100.0;
    let mut data = img.data().to_vec();
    for px in data.chunks_exact_mut(c) {
        let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
        let h = (h + params.hue_deg).rem_euclid(360.0);
        let s = (s * sat_mul).clamp(0.0, 1.0);
        let v = (v * val_mul).clamp(0.0, 1.0);
        px[..3].copy_from_slice(&hsv_to_rgb(h, s, v));
    }
    ImageBuffer::new(img.width(), img.height(), img.channels(), data).expect("same geometry")
}

/// Per-channel linear stretch sending the `clip_fraction` and
/// `1 - clip_fraction` quantiles to 0 and 255. Channels whose quantiles
/// coincide pass through unchanged. Alpha is never touched.
pub fn auto_levels(img: &ImageBuffer, clip_fraction: f64) -> Result<ImageBuffer> {
    if !(0.0..0.5).contains(&clip_fraction) {
        return Err(Error::invalid(format!(
            "clip fraction {clip_fraction} outside [0, 0.5)"
        )));
    }
    let c = img.channels() as usize;
    let n = (img.width() as usize * img.height() as usize) as f64;
    let clip = clip_fraction * n;
    let mut data = img.data().to_vec();
    for ch in 0..3 {
        let mut hist = [0usize; 256];
        for px in img.data().chunks_exact(c) {
            hist[px[ch] as usize] += 1;
        }
        let mut acc = 0usize;
        let lo = (0..256)
            .find(|&v| {
                acc += hist[v];
                acc as f64 > clip
            })
            .unwrap_or(0);
        acc = 0;
        let hi = (0..256)
            .rev()
            .find(|&v| {
                acc += hist[v];
                acc as f64 > clip
            })
            .unwrap_or(255);
        if hi <= lo {
            continue;
        }
        let span = (hi - lo) as f64;
        let mut lut = [0u8; 256];
        for (v, out) in lut.iter_mut().enumerate() {
            *out = ((v as f64 - lo as f64) * 255.0 / span).round().clamp(0.0, 255.0) as u8;
        }
        for px in data.chunks_exact_mut(c) {
            px[ch] = lut[px[ch] as usize];
        }
    }
    ImageBuffer::new(img.width(), img.height(), img.channels(), data)
}
