use super::ImageBuffer;
use crate::geometry::{Affine2, Point};

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = img.dimensions();
    let c = img.channels() as usize;
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let i = img.index(x, y);
            data.extend_from_slice(&src[i..i + c]);
        }
    }
    ImageBuffer::new(w, h, img.channels(), data).expect("same geometry as input")
}

const EDGE_EPS: f64 = 1e-6;

/// Bilinear sample at continuous image coordinates `p` (pixel centers at
/// `i + 0.5`). Returns `None` when `p` falls outside the pixel area.
pub fn sample_bilinear(img: &ImageBuffer, p: Point, out: &mut [f64]) -> Option<()> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(p.x >= -EDGE_EPS && p.x <= w + EDGE_EPS && p.y >= -EDGE_EPS && p.y <= h + EDGE_EPS) {
        return None;
    }
    let fx = (p.x - 0.5).clamp(0.0, w - 1.0);
    let fy = (p.y - 0.5).clamp(0.0, h - 1.0);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let (p00, p10, p01, p11) = (
        img.pixel(x0, y0),
        img.pixel(x1, y0),
        img.pixel(x0, y1),
        img.pixel(x1, y1),
    );
    for (ch, o) in out.iter_mut().enumerate() {
        let top = p00[ch] as f64 * (1.0 - tx) + p10[ch] as f64 * tx;
        let bottom = p01[ch] as f64 * (1.0 - tx) + p11[ch] as f64 * tx;
        *o = top * (1.0 - ty) + bottom * ty;
    }
    Some(())
}

/// Resamples `img` through `forward` (source -> output coordinates) onto an
/// `out_w x out_h` canvas. Uncovered pixels take `fill` (alpha, if present,
/// becomes 0 there).
pub fn warp_affine(img: &ImageBuffer, forward: &Affine2, out_w: u32, out_h: u32, fill: [u8; 3]) -> Option<ImageBuffer> {
    let inverse = forward.inverse()?;
    let c = img.channels() as usize;
    let mut data = Vec::with_capacity(out_w as usize * out_h as usize * c);
    let mut px = vec![0.0; c];
    for y in 0..out_h {
        for x in 0..out_w {
            let src = inverse.apply(Point::new(x as f64 + 0.5, y as f64 + 0.5));
            if sample_bilinear(img, src, &mut px).is_some() {
                data.extend(px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
            } else {
                data.extend_from_slice(&fill);
                if c == 4 {
                    data.push(0);
                }
            }
        }
    }
    ImageBuffer::new(out_w, out_h, img.channels(), data).ok()
}

fn snap_up(v: f64) -> u32 {
    let r = v.round();
    let v = if (v - r).abs() < 1e-6 { r } else { v.ceil() };
    (v as u32).max(1)
}

/// Canvas size and source->canvas transform for rotating a `w x h` image by
/// `angle_deg` about its center, with the canvas grown to the bounding box.
pub fn rotated_canvas(w: u32, h: u32, angle_deg: f64) -> (u32, u32, Affine2) {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (wf, hf) = (w as f64, h as f64);
    let ow = snap_up(wf * cos.abs() + hf * sin.abs());
    let oh = snap_up(wf * sin.abs() + hf * cos.abs());
    let t = Affine2::translation(-wf / 2.0, -hf / 2.0)
        .then(&Affine2::rotation_deg(angle_deg))
        .then(&Affine2::translation(ow as f64 / 2.0, oh as f64 / 2.0));
    (ow, oh, t)
}

/// Counter-clockwise rotation with an expanded canvas; uncovered corners take
/// `fill_rgb`.
pub fn rotate(img: &ImageBuffer, angle_deg: f64, fill_rgb: [u8; 3]) -> ImageBuffer {
    if angle_deg.rem_euclid(360.0) == 0.0 {
        return img.clone();
    }
    let (ow, oh, t) = rotated_canvas(img.width(), img.height(), angle_deg);
    warp_affine(img, &t, ow, oh, fill_rgb).expect("rotation is invertible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flip_reverses_rows() {
        let img = ImageBuffer::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(flip_horizontal(&img).data(), &[4, 5, 6, 1, 2, 3]);
    }

    #[test]
    fn symmetric_image_is_flip_fixed_point() {
        let img = ImageBuffer::from_fn(6, 3, |x, y| {
            let m = x.min(5 - x) as u8;
            [m * 20, y as u8, 1]
        })
        .unwrap();
        assert_eq!(flip_horizontal(&img), img);
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(data in proptest::collection::vec(any::<u8>(), 16 * 16 * 3)) {
            let img = ImageBuffer::new(16, 16, 3, data).unwrap();
            prop_assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = ImageBuffer::from_fn(5, 3, |x, y| [x as u8, y as u8, 2]).unwrap();
        assert_eq!(rotate(&img, 0.0, [0, 0, 0]), img);
        assert_eq!(rotate(&img, 360.0, [0, 0, 0]), img);
    }

    #[test]
    fn quarter_turn_transposes() {
        let a = [10, 20, 30];
        let b = [200, 100, 50];
        let img = ImageBuffer::new(2, 1, 3, [a, b].concat()).unwrap();
        let r = rotate(&img, 90.0, [0, 0, 0]);
        assert_eq!(r.dimensions(), (1, 2));
        // counter-clockwise: the right pixel ends on top
        assert_eq!(r.rgb(0, 0), b);
        assert_eq!(r.rgb(0, 1), a);
    }

    #[test]
    fn forty_five_degrees_fills_corners() {
        let img = ImageBuffer::filled(8, 8, [255, 255, 255]).unwrap();
        let r = rotate(&img, 45.0, [0, 0, 0]);
        let (w, h) = r.dimensions();
        // bounding box of an 8x8 square at 45 degrees: 8*sqrt(2) = 11.31
        assert_eq!((w, h), (12, 12));
        for (x, y) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
            // corner pixel center vs. the rotated square |u|+|v| <= 4*sqrt(2)
            let (u, v) = (x as f64 + 0.5 - 6.0, y as f64 + 0.5 - 6.0);
            assert!(u.abs() + v.abs() > 4.0 * 2f64.sqrt());
            assert_eq!(r.rgb(x, y), [0, 0, 0]);
        }
        assert_eq!(r.rgb(6, 6), [255, 255, 255]);
    }
}
