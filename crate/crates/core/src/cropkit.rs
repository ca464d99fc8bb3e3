//! Aspect-ratio buckets and cropping strategies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faceio::FaceRecord;
use crate::geometry::Point;
use crate::imgcore::{resample, ImageBuffer, ResampleKernel};

/// Bucket areas must stay within this band (~1 MP).
pub const BUCKET_AREA_RANGE: (u64, u64) = (900_000, 1_100_000);

/// Landscape half of the ~1 MP SDXL training resolutions; the portrait half
/// is the transpose, plus the square.
const SDXL_LANDSCAPE: [(u32, u32); 20] = [
    (1024, 960),
    (1088, 960),
    (1088, 896),
    (1152, 896),
    (1152, 832),
    (1216, 832),
    (1280, 768),
    (1344, 768),
    (1344, 704),
    (1408, 704),
    (1472, 704),
    (1536, 640),
    (1600, 640),
    (1664, 576),
    (1728, 576),
    (1792, 576),
    (1856, 512),
    (1920, 512),
    (1984, 512),
    (2048, 512),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bucket {
    pub width: u32,
    pub height: u32,
}

impl Bucket {
    pub const fn new(width: u32, height: u32) -> Self {
        Bucket { width, height }
    }

    pub fn area(self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn aspect(self) -> f64 {
        self.width as f64 / self.height as f64
    }
}

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("bucket {s:?} is not WxH")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::invalid(format!("bucket {s:?} has a bad dimension")))
        };
        Ok(Bucket::new(parse(w)?, parse(h)?))
    }
}

/// A validated list of ~1 MP buckets with pairwise distinct aspect ratios.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketSet {
    buckets: Vec<Bucket>,
}

impl Default for BucketSet {
    fn default() -> Self {
        let mut buckets = vec![Bucket::new(1024, 1024)];
        for &(w, h) in &SDXL_LANDSCAPE {
            buckets.push(Bucket::new(w, h));
            buckets.push(Bucket::new(h, w));
        }
        BucketSet::new(buckets).expect("built-in bucket list is valid")
    }
}

impl BucketSet {
    pub fn new(buckets: Vec<Bucket>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::invalid("bucket set is empty"));
        }
        for b in &buckets {
            let area = b.area();
            if area < BUCKET_AREA_RANGE.0 || area > BUCKET_AREA_RANGE.1 {
                return Err(Error::invalid(format!(
                    "bucket {b} has area {area}, outside [{}, {}]",
                    BUCKET_AREA_RANGE.0, BUCKET_AREA_RANGE.1
                )));
            }
        }
        for (i, a) in buckets.iter().enumerate() {
            for b in &buckets[i + 1..] {
                // w1/h1 == w2/h2 exactly, in integers
                if a.width as u64 * b.height as u64 == b.width as u64 * a.height as u64 {
                    return Err(Error::invalid(format!(
                        "buckets {a} and {b} share an aspect ratio"
                    )));
                }
            }
        }
        Ok(BucketSet { buckets })
    }

    /// Parses either a JSON array of `"WxH"` strings or plain text with one
    /// `WxH` per line (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let entries: Vec<String> = if trimmed.starts_with('[') {
            serde_json::from_str(trimmed)?
        } else {
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect()
        };
        let buckets = entries
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Bucket>>>()?;
        BucketSet::new(buckets)
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    /// Bucket minimizing `|ln(aspect_in / aspect_bucket)|`; ties go to the
    /// larger area, then the smaller width.
    pub fn nearest(&self, w: u32, h: u32) -> Result<Bucket> {
        nearest_bucket(w, h, &self.buckets)
    }
}

pub fn nearest_bucket(w: u32, h: u32, buckets: &[Bucket]) -> Result<Bucket> {
    if w == 0 || h == 0 {
        return Err(Error::invalid("image dimensions must be at least 1x1"));
    }
    let target = (w as f64 / h as f64).ln();
    let score = |b: &Bucket| (target - b.aspect().ln()).abs();
    let mut best: Option<(f64, Bucket)> = None;
    for &b in buckets {
        let d = score(&b);
        best = match best {
            None => Some((d, b)),
            Some((bd, bb)) => {
                let better = if (d - bd).abs() <= 1e-12 {
                    b.area() > bb.area() || (b.area() == bb.area() && b.width < bb.width)
                } else {
                    d < bd
                };
                if better {
                    Some((d, b))
                } else {
                    Some((bd, bb))
                }
            }
        };
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::invalid("bucket set is empty"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

impl CropWindow {
    pub fn fits(&self, w: u32, h: u32) -> bool {
        self.width > 0
            && self.height > 0
            && self.left as u64 + self.width as u64 <= w as u64
            && self.top as u64 + self.height as u64 <= h as u64
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        img.crop(self.left, self.top, self.width, self.height)
    }
}

/// Largest `(w, h)` with the bucket's aspect ratio that fits in `img_w x img_h`.
fn largest_window(img_w: u32, img_h: u32, bucket: Bucket) -> (u32, u32) {
    let (iw, ih) = (img_w as u64, img_h as u64);
    let (bw, bh) = (bucket.width as u64, bucket.height as u64);
    if iw * bh >= ih * bw {
        let ww = ((ih as f64 * bucket.aspect()).round() as u32).clamp(1, img_w);
        (ww, img_h)
    } else {
        let wh = ((iw as f64 / bucket.aspect()).round() as u32).clamp(1, img_h);
        (img_w, wh)
    }
}

fn resample_window(img: &ImageBuffer, win: CropWindow, bucket: Bucket) -> Result<ImageBuffer> {
    let cropped = if win.fits(img.width(), img.height())
        && (win.left, win.top, win.width, win.height) == (0, 0, img.width(), img.height())
    {
        img.clone()
    } else {
        win.apply(img)?
    };
    resample(&cropped, bucket.width, bucket.height, ResampleKernel::Lanczos3)
}

/// Centered crop to the nearest bucket's aspect ratio, resampled to that
/// bucket. Fails with `TooSmallInput` below half the target area.
pub fn center_crop_megapixel(img: &ImageBuffer, target_mp: f64, buckets: &BucketSet) -> Result<(ImageBuffer, CropWindow)> {
    if !(target_mp.is_finite() && target_mp > 0.0) {
        return Err(Error::invalid(format!("target megapixels {target_mp} must be > 0")));
    }
    let (w, h) = img.dimensions();
    let area = w as f64 * h as f64;
    if area < target_mp * 1e6 * 0.5 {
        return Err(Error::TooSmallInput(format!(
            "{w}x{h} ({:.3} MP) is below half of {target_mp} MP",
            area / 1e6
        )));
    }
    let bucket = buckets.nearest(w, h)?;
    let (ww, wh) = largest_window(w, h, bucket);
    let win = CropWindow {
        left: (w - ww) / 2,
        top: (h - wh) / 2,
        width: ww,
        height: wh,
    };
    Ok((resample_window(img, win, bucket)?, win))
}

/// Result of a face-anchored crop, with enough geometry to audit placement.
#[derive(Clone, Debug)]
pub struct AnchoredCrop {
    pub image: ImageBuffer,
    pub bucket: Bucket,
    pub window: CropWindow,
    /// Window was pushed back inside the image horizontally / vertically.
    pub clamped_x: bool,
    pub clamped_y: bool,
    /// Face center relative to the window origin, source pixels.
    pub face_in_window: Point,
}

impl AnchoredCrop {
    /// Face center in output (bucket) pixels.
    pub fn face_in_output(&self) -> Point {
        Point::new(
            self.face_in_window.x * self.bucket.width as f64 / self.window.width as f64,
            self.face_in_window.y * self.bucket.height as f64 / self.window.height as f64,
        )
    }
}

/// Crops the largest bucket-aspect window that puts the face center at one
/// half of the width and one third of the height, clamped into the image,
/// then resamples it to the bucket with Lanczos-3.
pub fn face_anchored_crop(img: &ImageBuffer, face: &FaceRecord, bucket: Bucket) -> Result<AnchoredCrop> {
    let (w, h) = img.dimensions();
    let b = face.bbox;
    const TOL: f64 = 1e-6;
    if !(b.width > 0.0
        && b.height > 0.0
        && b.left >= -TOL
        && b.top >= -TOL
        && b.left + b.width <= w as f64 + TOL
        && b.top + b.height <= h as f64 + TOL)
    {
        return Err(Error::invalid(format!(
            "face box {:?} lies outside the {w}x{h} image",
            b
        )));
    }
    let center = b.center();
    let (ww, wh) = largest_window(w, h, bucket);
    let place = |ideal: f64, max: u32| -> (u32, bool) {
        let rounded = ideal.round();
        let clamped = rounded.clamp(0.0, max as f64);
        (clamped as u32, clamped != rounded)
    };
    let (left, clamped_x) = place(center.x - ww as f64 / 2.0, w - ww);
    let (top, clamped_y) = place(center.y - wh as f64 / 3.0, h - wh);
    let window = CropWindow {
        left,
        top,
        width: ww,
        height: wh,
    };
    let image = resample_window(img, window, bucket)?;
    Ok(AnchoredCrop {
        image,
        bucket,
        window,
        clamped_x,
        clamped_y,
        face_in_window: Point::new(center.x - left as f64, center.y - top as f64),
    })
}

/// Applies a user-supplied list of crop windows (e.g. manual multi-variation
/// crops), validating each against the image.
pub fn crop_variations(img: &ImageBuffer, windows: &[CropWindow]) -> Result<Vec<ImageBuffer>> {
    windows.iter().map(|w| w.apply(img)).collect()
}
