//! Planar points and 2-D affine / similarity transforms.
//!
//! Image coordinates are continuous with the origin at the top-left corner of
//! the top-left pixel; pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and has its
//! center at `(i + 0.5, j + 0.5)`. Positive rotation angles turn content
//! counter-clockwise as displayed (y grows downward).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// `x' = a*x + b*y + tx`, `y' = c*x + d*y + ty`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2 {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    pub fn scaling(s: f64) -> Self {
        Affine2 {
            a: s,
            d: s,
            ..Self::IDENTITY
        }
    }

    /// Counter-clockwise (as displayed) rotation about the origin.
    pub fn rotation_deg(deg: f64) -> Self {
        let (sin, cos) = deg.to_radians().sin_cos();
        Affine2 {
            a: cos,
            b: sin,
            c: -sin,
            d: cos,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Rotation by `deg` and uniform scaling by `scale` about `center`.
    pub fn rotate_scale_about(center: Point, deg: f64, scale: f64) -> Self {
        Affine2::translation(-center.x, -center.y)
            .then(&Affine2::rotation_deg(deg))
            .then(&Affine2::scaling(scale))
            .then(&Affine2::translation(center.x, center.y))
    }

    /// Composition: apply `self` first, then `next`.
    pub fn then(&self, next: &Affine2) -> Affine2 {
        Affine2 {
            a: next.a * self.a + next.b * self.c,
            b: next.a * self.b + next.b * self.d,
            c: next.c * self.a + next.d * self.c,
            d: next.c * self.b + next.d * self.d,
            tx: next.a * self.tx + next.b * self.ty + next.tx,
            ty: next.c * self.tx + next.d * self.ty + next.ty,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.determinant();
        if det.abs() < 1e-15 || !det.is_finite() {
            return None;
        }
        let a = self.d / det;
        let b = -self.b / det;
        let c = -self.c / det;
        let d = self.a / det;
        Some(Affine2 {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        })
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )
    }
}

/// Uniform scale + rotation + translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    /// Counter-clockwise as displayed, degrees.
    pub rotation_deg: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn to_affine(&self) -> Affine2 {
        Affine2::rotation_deg(self.rotation_deg)
            .then(&Affine2::scaling(self.scale))
            .then(&Affine2::translation(self.tx, self.ty))
    }

    /// Least-squares similarity mapping `src[i]` onto `dst[i]`.
    ///
    /// Returns `None` when the source points are (numerically) coincident.
    pub fn fit(src: &[Point], dst: &[Point]) -> Option<Similarity> {
        if src.len() != dst.len() || src.is_empty() {
            return None;
        }
        let n = src.len() as f64;
        let mean = |pts: &[Point]| {
            let (sx, sy) = pts
                .iter()
                .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
            Point::new(sx / n, sy / n)
        };
        let ms = mean(src);
        let md = mean(dst);
        // Complex-number formulation: dst - md = z * (src - ms), z = s * e^{i phi}
        // with y pointing down, so the displayed angle is -phi.
        let (mut num_re, mut num_im, mut den) = (0.0, 0.0, 0.0);
        for (p, q) in src.iter().zip(dst) {
            let (ux, uy) = (p.x - ms.x, p.y - ms.y);
            let (vx, vy) = (q.x - md.x, q.y - md.y);
            num_re += vx * ux + vy * uy;
            num_im += vy * ux - vx * uy;
            den += ux * ux + uy * uy;
        }
        if den < 1e-18 {
            return None;
        }
        let (zr, zi) = (num_re / den, num_im / den);
        let scale = zr.hypot(zi);
        let rotation_deg = -zi.atan2(zr).to_degrees();
        let rot = Affine2::rotation_deg(rotation_deg).then(&Affine2::scaling(scale));
        let moved = rot.apply(ms);
        Some(Similarity {
            scale,
            rotation_deg,
            tx: md.x - moved.x,
            ty: md.y - moved.y,
        })
    }
}
