//! Reference implementations written independently of the library code.
//! Slow and direct on purpose.

#![allow(dead_code)]

use portrait_forge_core::composite::Mask;
use portrait_forge_core::ImageBuffer;

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-12, "singular system");
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Discrete Poisson problem for one channel, spelled out cell by cell:
/// `4 f_p - sum_{q in N_p ∩ Ω} f_q = sum_q (g_p - g_q) + sum_{q in N_p \ Ω} f*_q`
/// where `g` is the source (offset so that source origin lands at `offset`)
/// and `f*` the destination. The region must stay off the border.
pub struct DensePoisson {
    pub cells: Vec<(usize, usize)>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

pub fn dense_poisson(src: &ImageBuffer, dst: &ImageBuffer, mask: &Mask, offset: (i64, i64), ch: usize) -> DensePoisson {
    let (w, h) = (dst.width() as usize, dst.height() as usize);
    let inside = |x: usize, y: usize| -> bool {
        let (mx, my) = (x as i64 - offset.0, y as i64 - offset.1);
        mx >= 0
            && my >= 0
            && (mx as u32) < mask.width()
            && (my as u32) < mask.height()
            && mask.get(mx as u32, my as u32) >= 128
    };
    let mut cells = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if inside(x, y) {
                cells.push((x, y));
            }
        }
    }
    let index = |x: usize, y: usize| cells.iter().position(|&c| c == (x, y));
    let g = |x: usize, y: usize| -> f64 {
        let sx = (x as i64 - offset.0).clamp(0, src.width() as i64 - 1) as u32;
        let sy = (y as i64 - offset.1).clamp(0, src.height() as i64 - 1) as u32;
        src.pixel(sx, sy)[ch] as f64
    };
    let n = cells.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (k, &(x, y)) in cells.iter().enumerate() {
        a[k][k] = 4.0;
        let nbrs = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
        for (qx, qy) in nbrs {
            b[k] += g(x, y) - g(qx, qy);
            match index(qx, qy) {
                Some(j) => a[k][j] -= 1.0,
                None => b[k] += dst.pixel(qx as u32, qy as u32)[ch] as f64,
            }
        }
    }
    DensePoisson { cells, a, b }
}

pub fn relative_residual(a: &[Vec<f64>], x: &[f64], b: &[f64]) -> f64 {
    let r: f64 = a
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let ax: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum();
            (bi - ax).powi(2)
        })
        .sum();
    let bn: f64 = b.iter().map(|v| v * v).sum();
    (r / bn).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub enum Filter {
    Triangle,
    KeysCubic,
    Lanczos3,
}

impl Filter {
    pub fn radius(self) -> f64 {
        match self {
            Filter::Triangle => 1.0,
            Filter::KeysCubic => 2.0,
            Filter::Lanczos3 => 3.0,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        let t = x.abs();
        match self {
            Filter::Triangle => {
                if t < 1.0 {
                    1.0 - t
                } else {
                    0.0
                }
            }
            // Keys (1981) with a = -0.5
            Filter::KeysCubic => {
                if t < 1.0 {
                    1.5 * t * t * t - 2.5 * t * t + 1.0
                } else if t < 2.0 {
                    -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
                } else {
                    0.0
                }
            }
            Filter::Lanczos3 => {
                if t == 0.0 {
                    1.0
                } else if t < 3.0 {
                    let pi = std::f64::consts::PI;
                    3.0 * (pi * t).sin() * (pi * t / 3.0).sin() / (pi * pi * t * t)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Direct 2-D convolution: every output pixel is the normalized sum over the
/// filter footprint (stretched by the scale factor when shrinking), with
/// coordinates clamped to the edge. Pixel centers at +0.5.
pub fn naive_resample(img: &ImageBuffer, ow: u32, oh: u32, f: Filter) -> Vec<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let c = img.channels() as usize;
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;
    let (stx, sty) = (sx.max(1.0), sy.max(1.0));
    let mut out = Vec::with_capacity(ow as usize * oh as usize * c);
    for oy in 0..oh {
        let cy = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..ow {
            let cx = (ox as f64 + 0.5) * sx - 0.5;
            let mut acc = vec![0.0; c];
            let mut total = 0.0;
            let ry = f.radius() * sty;
            let rx = f.radius() * stx;
            for j in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
                let wy = f.eval((j as f64 - cy) / sty);
                for i in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
                    let wgt = wy * f.eval((i as f64 - cx) / stx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let px = img.pixel(i.clamp(0, w - 1) as u32, j.clamp(0, h - 1) as u32);
                    for k in 0..c {
                        acc[k] += wgt * px[k] as f64;
                    }
                    total += wgt;
                }
            }
            for v in acc {
                out.push((v / total).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// `1 - cos` between `e` and the normalized mean of `refs`.
pub fn brute_distance(e: &[f64], refs: &[Vec<f64>]) -> f64 {
    let dim = e.len();
    let mut m = vec![0.0; dim];
    for r in refs {
        for i in 0..dim {
            m[i] += r[i];
        }
    }
    let mn = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = e.iter().zip(&m).map(|(a, b)| a * b).sum();
    1.0 - dot / (mn * en)
}

/// Ids sorted by brute-force distance, ties by id.
pub fn brute_rank(cands: &[(String, Vec<f64>)], refs: &[Vec<f64>]) -> Vec<String> {
    let mut v: Vec<(f64, String)> = cands.iter().map(|(id, e)| (brute_distance(e, refs), id.clone())).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    v.into_iter().map(|(_, id)| id).collect()
}

/// Gaussian-kernel density maximized by brute force on a fine grid.
pub fn brute_kde_mode(data: &[f64], h: f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let dens = |x: f64| data.iter().map(|d| (-0.5 * ((x - d) / h).powi(2)).exp()).sum::<f64>();
    (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .max_by(|a, b| dens(*a).total_cmp(&dens(*b)))
        .unwrap()
}
