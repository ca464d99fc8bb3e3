//! Background replacement, alpha compositing and Poisson (seamless) cloning.

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{resample, ImageBuffer, ResampleKernel};

/// Single-channel 8-bit mask; 255 marks the subject.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Mask> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "mask buffer of {} bytes does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Mask { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Mask> {
        Mask::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Mask> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Mask::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Any image is accepted; colour inputs are reduced to luma.
    pub fn decode(bytes: &[u8]) -> Result<Mask> {
        let luma = image::load_from_memory(bytes)?.to_luma8();
        let (w, h) = luma.dimensions();
        Mask::new(w, h, luma.into_raw())
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Mask> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Mask::decode(&bytes)
    }

    /// Box-blurs the mask with a `(2r+1)^2` window (edge taps clamped).
    pub fn feather(&self, radius: u32) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let blur = |src: &[u32], horizontal: bool| -> Vec<u32> {
            let mut out = vec![0u32; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0;
                    for k in -r..=r {
                        let (sx, sy) = if horizontal {
                            ((x + k).clamp(0, w - 1), y)
                        } else {
                            (x, (y + k).clamp(0, h - 1))
                        };
                        s += src[(sy * w + sx) as usize];
                    }
                    out[(y * w + x) as usize] = s;
                }
            }
            out
        };
        let src: Vec<u32> = self.data.iter().map(|&v| v as u32).collect();
        let summed = blur(&blur(&src, true), false);
        let n = ((2 * r + 1) * (2 * r + 1)) as u32;
        let data = summed.iter().map(|s| ((2 * s + n) / (2 * n)) as u8).collect();
        Mask { data, ..*self }
    }
}

/// Background colour source for [`replace_background`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Palette {
    Colors { name: String, colors: Vec<[u8; 3]> },
    GrayRange { name: String, lo: u8, hi: u8 },
}

fn hex(s: &str) -> [u8; 3] {
    let v = u32::from_str_radix(s.trim_start_matches('#'), 16).expect("valid hex literal");
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

impl Palette {
    pub fn pastel() -> Palette {
        Palette::Colors {
            name: "pastel".into(),
            colors: ["#55efc4", "#81ecec", "#74b9ff", "#a29bfe", "#ffeaa7", "#fab1a0", "#ff7675", "#fd79a8"]
                .iter()
                .map(|h| hex(h))
                .collect(),
        }
    }

    pub fn rainbow() -> Palette {
        Palette::Colors {
            name: "rainbow".into(),
            colors: ["#2ecc71", "#3498db", "#9b59b6", "#f1c40f", "#e67e22", "#e74c3c"]
                .iter()
                .map(|h| hex(h))
                .collect(),
        }
    }

    pub fn gray() -> Palette {
        Palette::GrayRange { name: "gray".into(), lo: 0, hi: 255 }
    }

    pub fn dark_gray() -> Palette {
        Palette::GrayRange { name: "dark_gray".into(), lo: 0, hi: 127 }
    }

    pub fn light_gray() -> Palette {
        Palette::GrayRange { name: "light_gray".into(), lo: 128, hi: 255 }
    }

    pub fn builtin() -> Vec<Palette> {
        vec![
            Palette::pastel(),
            Palette::rainbow(),
            Palette::gray(),
            Palette::dark_gray(),
            Palette::light_gray(),
        ]
    }

    pub fn name(&self) -> &str {
        match self {
            Palette::Colors { name, .. } | Palette::GrayRange { name, .. } => name,
        }
    }

    /// Deterministic colour choice for a seed.
    pub fn pick(&self, seed: u64) -> [u8; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Palette::Colors { colors, .. } => colors[rng.random_range(0..colors.len())],
            Palette::GrayRange { lo, hi, .. } => {
                let g = rng.random_range(*lo..=*hi);
                [g, g, g]
            }
        }
    }
}

impl FromStr for Palette {
    type Err = Error;

    /// Built-in names (case and `-`/`_` insensitive) or a comma-separated
    /// list of `#rrggbb` colours.
    fn from_str(s: &str) -> Result<Palette> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        if let Some(p) = Palette::builtin().into_iter().find(|p| p.name() == key) {
            return Ok(p);
        }
        let colors = s
            .split(',')
            .map(|c| {
                let c = c.trim().trim_start_matches('#');
                if c.len() == 6 && c.chars().all(|ch| ch.is_ascii_hexdigit()) {
                    Ok(hex(c))
                } else {
                    Err(Error::invalid(format!("unknown palette or colour '{s}'")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Palette::Colors { name: "custom".into(), colors })
    }
}

pub enum Background<'a> {
    Image(&'a ImageBuffer),
    Palette(&'a Palette),
}

/// `(m*a + (255-m)*b) / 255` rounded half up, exact in integers.
#[inline]
pub fn blend_channel(a: u8, b: u8, m: u8) -> u8 {
    let (a, b, m) = (a as u32, b as u32, m as u32);
    ((2 * (m * a + (255 - m) * b) + 255) / 510) as u8
}

fn check_dims(what: &str, a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

fn blend_images(fg: &ImageBuffer, bg: &ImageBuffer, mask: &Mask) -> Result<ImageBuffer> {
    let ch = fg.channels() as usize;
    let bg = if bg.channels() as usize == ch {
        bg.clone()
    } else if ch == 3 {
        bg.to_rgb()
    } else {
        // widen bg to RGBA with opaque alpha
        let rgb = bg.to_rgb();
        let data = rgb.data().chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect();
        ImageBuffer::new(rgb.width(), rgb.height(), 4, data)?
    };
    let data = fg
        .data()
        .chunks(ch)
        .zip(bg.data().chunks(ch))
        .zip(mask.data())
        .flat_map(|((a, b), &m)| (0..ch).map(move |c| blend_channel(a[c], b[c], m)))
        .collect();
    ImageBuffer::new(fg.width(), fg.height(), fg.channels(), data)
}

/// Composites `img` over a background image (resized to fit) or a palette
/// colour chosen from `seed`.
pub fn replace_background(img: &ImageBuffer, mask: &Mask, background: Background<'_>, seed: u64) -> Result<ImageBuffer> {
    check_dims("mask and image differ", img.dimensions(), (mask.width, mask.height))?;
    let bg = match background {
        Background::Image(b) => {
            if b.dimensions() == img.dimensions() {
                b.clone()
            } else {
                resample(b, img.width(), img.height(), ResampleKernel::Lanczos3)?
            }
        }
        Background::Palette(p) => ImageBuffer::filled(img.width(), img.height(), p.pick(seed))?,
    };
    blend_images(img, &bg, mask)
}

pub fn alpha_blend(src: &ImageBuffer, dst: &ImageBuffer, mask: &Mask) -> Result<ImageBuffer> {
    check_dims("source and destination differ", src.dimensions(), dst.dimensions())?;
    check_dims("mask and image differ", src.dimensions(), (mask.width, mask.height))?;
    blend_images(src, dst, mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonOptions {
    /// Relative residual `‖b - Ax‖ / ‖b‖` at which to stop.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Per edge, use whichever of the source/destination gradients is larger.
    pub mixed_gradients: bool,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        PoissonOptions {
            tolerance: 1e-6,
            max_iters: 10_000,
            mixed_gradients: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonResult {
    pub image: ImageBuffer,
    /// Unclamped per-channel solution over the whole destination (row-major).
    pub planes: Vec<Vec<f64>>,
    /// Worst relative residual over channels.
    pub residual: f64,
    pub iterations: usize,
}

/// The linear system of one Poisson solve: unknown `k` sits at destination
/// pixel `cells[k]`; `neighbors[k]` lists in-region neighbour unknowns.
pub struct PoissonSystem {
    pub width: u32,
    pub height: u32,
    pub cells: Vec<(u32, u32)>,
    pub neighbors: Vec<Vec<usize>>,
}

impl PoissonSystem {
    /// `A x` with `A = 4I - adjacency`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, nb) in self.neighbors.iter().enumerate() {
            out[k] = 4.0 * x[k] - nb.iter().map(|&j| x[j]).sum::<f64>();
        }
    }
}

const OFFSETS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Builds the region `Ω = {p : mask(p - offset) >= 128}` in destination
/// coordinates.
pub fn poisson_system(mask: &Mask, dst_w: u32, dst_h: u32, offset: (i64, i64)) -> Result<PoissonSystem> {
    let (w, h) = (dst_w as i64, dst_h as i64);
    let mut index = vec![usize::MAX; (w * h) as usize];
    let mut cells = Vec::new();
    for my in 0..mask.height {
        for mx in 0..mask.width {
            if mask.get(mx, my) < 128 {
                continue;
            }
            let (x, y) = (mx as i64 + offset.0, my as i64 + offset.1);
            if x < 1 || y < 1 || x >= w - 1 || y >= h - 1 {
                return Err(Error::invalid(format!(
                    "blend region reaches the destination border at ({x}, {y})"
                )));
            }
            index[(y * w + x) as usize] = cells.len();
            cells.push((x as u32, y as u32));
        }
    }
    if cells.is_empty() {
        return Err(Error::invalid("mask selects no pixels"));
    }
    let neighbors = cells
        .iter()
        .map(|&(x, y)| {
            OFFSETS
                .iter()
                .map(|(dx, dy)| index[((y as i64 + dy) * w + x as i64 + dx) as usize])
                .filter(|&j| j != usize::MAX)
                .collect()
        })
        .collect();
    Ok(PoissonSystem { width: dst_w, height: dst_h, cells, neighbors })
}

struct ChannelSolve {
    plane: Vec<f64>,
    residual: f64,
    iterations: usize,
}

const POLISH_FACTOR: f64 = 1e-3;

fn conjugate_gradient(sys: &PoissonSystem, b: &[f64], x: &mut [f64], tol: f64, max_iters: usize) -> (f64, usize) {
    let n = b.len();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (0.0, 0);
    }
    let mut ax = vec![0.0; n];
    sys.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut ap = vec![0.0; n];
    let mut it = 0;
    // stopping right at `tol` leaves ~1e-4 error in 8-bit units on small
    // systems; overshoot, and only treat `tol` itself as the failure bound
    let target = tol * POLISH_FACTOR;
    while rr.sqrt() / b_norm >= target && it < max_iters {
        sys.apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
        it += 1;
    }
    // report the true residual, not the recurrence
    sys.apply(x, &mut ax);
    let res = b.iter().zip(&ax).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt();
    (res / b_norm, it)
}

/// Right-hand side of the Poisson system for one channel.
pub fn poisson_rhs(
    sys: &PoissonSystem,
    src: &ImageBuffer,
    dst: &ImageBuffer,
    offset: (i64, i64),
    channel: usize,
    mixed: bool,
) -> Vec<f64> {
    let (sw, sh) = (src.width() as i64, src.height() as i64);
    let s = |x: i64, y: i64| -> f64 {
        let (x, y) = (x.clamp(0, sw - 1), y.clamp(0, sh - 1));
        src.pixel(x as u32, y as u32)[channel] as f64
    };
    let d = |x: i64, y: i64| dst.pixel(x as u32, y as u32)[channel] as f64;
    sys.cells
        .iter()
        .map(|&(x, y)| {
            let (x, y) = (x as i64, y as i64);
            let (sx, sy) = (x - offset.0, y - offset.1);
            let mut b = 0.0;
            for (dx, dy) in OFFSETS {
                let mut g = s(sx, sy) - s(sx + dx, sy + dy);
                if mixed {
                    let gd = d(x, y) - d(x + dx, y + dy);
                    if gd.abs() > g.abs() {
                        g = gd;
                    }
                }
                b += g;
                // Dirichlet term from destination pixels outside the region
                if !sys.contains((x + dx) as u32, (y + dy) as u32) {
                    b += d(x + dx, y + dy);
                }
            }
            b
        })
        .collect()
}

impl PoissonSystem {
    /// Cells are stored in row-major destination order.
    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.cells.binary_search_by(|&(cx, cy)| (cy, cx).cmp(&(y, x))).is_ok()
    }
}

/// Seamless cloning of `src` into `dst`. `mask` has the dimensions of `src`
/// and `offset` is where the source origin lands in `dst`.
pub fn poisson_blend(
    src: &ImageBuffer,
    dst: &ImageBuffer,
    mask: &Mask,
    offset: (i64, i64),
    opts: &PoissonOptions,
) -> Result<PoissonResult> {
    check_dims("mask and source differ", src.dimensions(), (mask.width, mask.height))?;
    let sys = poisson_system(mask, dst.width(), dst.height(), offset)?;
    let src = src.to_rgb();
    let color_channels = 3;

    let solves: Vec<ChannelSolve> = (0..color_channels)
        .into_par_iter()
        .map(|c| {
            let b = poisson_rhs(&sys, &src, dst, offset, c, opts.mixed_gradients);
            // warm start from the destination values
            let mut x: Vec<f64> = sys.cells.iter().map(|&(x, y)| dst.pixel(x, y)[c] as f64).collect();
            let (residual, iterations) = conjugate_gradient(&sys, &b, &mut x, opts.tolerance, opts.max_iters);
            let mut plane: Vec<f64> = (0..dst.height())
                .flat_map(|y| (0..dst.width()).map(move |x| (x, y)))
                .map(|(x, y)| dst.pixel(x, y)[c] as f64)
                .collect();
            for (k, &(px, py)) in sys.cells.iter().enumerate() {
                plane[(py * dst.width() + px) as usize] = x[k];
            }
            ChannelSolve { plane, residual, iterations }
        })
        .collect();

    let residual = solves.iter().map(|s| s.residual).fold(0.0, f64::max);
    let iterations = solves.iter().map(|s| s.iterations).max().unwrap_or(0);
    if !(residual < opts.tolerance) {
        return Err(Error::SolverFailed { iterations, residual });
    }
    let ch = dst.channels() as usize;
    let mut data = dst.data().to_vec();
    for (i, px) in data.chunks_mut(ch).enumerate() {
        for (c, s) in solves.iter().enumerate() {
            px[c] = s.plane[i].round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(PoissonResult {
        image: ImageBuffer::new(dst.width(), dst.height(), dst.channels(), data)?,
        planes: solves.into_iter().map(|s| s.plane).collect(),
        residual,
        iterations,
    })
}
