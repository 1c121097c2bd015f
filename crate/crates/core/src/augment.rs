//! Scene-plane transformations applied before optical simulation.
//!
//! Rotation and perspective act on the source digit image; shifts act on the
//! scene after it has been placed on the PSF grid, so the digit can move
//! anywhere in the captured field; rescaling draws a new object height.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::simcam::{rescale_to_height, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    #[default]
    None,
    Shift,
    Rescale,
    Rotate,
    Perspective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Object-height range for [`TransformKind::Rescale`], meters.
    pub height_range_m: (f64, f64),
    /// Rotation range, degrees.
    pub angle_range_deg: (f64, f64),
    pub distortion: f64,
    /// Probability that a perspective warp is applied.
    pub probability: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            kind: TransformKind::None,
            height_range_m: (0.02, 0.20),
            angle_range_deg: (-90.0, 90.0),
            distortion: 0.5,
            probability: 1.0,
        }
    }
}

impl TransformSpec {
    pub fn of(kind: TransformKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.height_range_m;
        if !(a > 0.0 && a <= b) {
            return Err(Error::Config(format!("invalid height range [{a}, {b}]")));
        }
        let (a, b) = self.angle_range_deg;
        if !(a <= b) {
            return Err(Error::Config(format!("invalid angle range [{a}, {b}]")));
        }
        if !(0.0..=1.0).contains(&self.distortion) || !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config("distortion and probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Inclusive bounding box `(row_min, row_max, col_min, col_max)` of nonzero pixels.
pub fn support_bbox(img: &RealGrid) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for c in 0..img.channels {
        for i in 0..img.height {
            for j in 0..img.width {
                if img.get(c, i, j) != 0.0 {
                    bb = Some(match bb {
                        None => (i, i, j, j),
                        Some((a, b, d, e)) => (a.min(i), b.max(i), d.min(j), e.max(j)),
                    });
                }
            }
        }
    }
    bb
}

/// Inclusive ranges `((dy_min, dy_max), (dx_min, dx_max))` of integer shifts
/// keeping the support inside the grid. Empty images only admit zero.
pub fn feasible_offsets(img: &RealGrid) -> ((isize, isize), (isize, isize)) {
    match support_bbox(img) {
        None => ((0, 0), (0, 0)),
        Some((r0, r1, c0, c1)) => (
            (-(r0 as isize), (img.height - 1 - r1) as isize),
            (-(c0 as isize), (img.width - 1 - c1) as isize),
        ),
    }
}

/// Translate by `(dy, dx)` pixels with zero fill.
pub fn shift(img: &RealGrid, dy: isize, dx: isize) -> RealGrid {
    let mut out = RealGrid::zeros(img.height, img.width, img.channels);
    out.pitch_m = img.pitch_m;
    let (h, w) = (img.height as isize, img.width as isize);
    for c in 0..img.channels {
        for i in 0..h {
            let ti = i + dy;
            if !(0..h).contains(&ti) {
                continue;
            }
            for j in 0..w {
                let tj = j + dx;
                if (0..w).contains(&tj) {
                    out.set(c, ti as usize, tj as usize, img.get(c, i as usize, j as usize));
                }
            }
        }
    }
    out
}

/// Shift drawn uniformly over the feasible integer offsets.
pub fn random_shift(img: &RealGrid, rng: &mut impl Rng) -> RealGrid {
    let ((y0, y1), (x0, x1)) = feasible_offsets(img);
    let dy = rng.random_range(y0 as i64..=y1 as i64) as isize;
    let dx = rng.random_range(x0 as i64..=x1 as i64) as isize;
    shift(img, dy, dx)
}

pub fn random_rescale(spec: &TransformSpec, rng: &mut impl Rng) -> f64 {
    let (a, b) = spec.height_range_m;
    if a == b {
        a
    } else {
        rng.random_range(a..=b)
    }
}

/// Bilinear sample of plane `c` at `(y, x)`; samples outside the grid are zero.
fn sample(img: &RealGrid, c: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (h, w) = (img.height as isize, img.width as isize);
    let at = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= h || j >= w {
            0.0
        } else {
            img.get(c, i as usize, j as usize)
        }
    };
    let (i, j) = (y0 as isize, x0 as isize);
    (1.0 - fy) * ((1.0 - fx) * at(i, j) + fx * at(i, j + 1))
        + fy * ((1.0 - fx) * at(i + 1, j) + fx * at(i + 1, j + 1))
}

/// Inverse warp: output pixel `(x, y)` reads the input at `h_inv · (x, y, 1)`.
pub fn warp(img: &RealGrid, h_inv: &Matrix3<f64>) -> RealGrid {
    let mut out = RealGrid::zeros(img.height, img.width, img.channels);
    out.pitch_m = img.pitch_m;
    for i in 0..img.height {
        for j in 0..img.width {
            let p = h_inv * Vector3::new(j as f64, i as f64, 1.0);
            if p.z.abs() < 1e-300 {
                continue;
            }
            let (x, y) = (p.x / p.z, p.y / p.z);
            for c in 0..img.channels {
                out.set(c, i, j, sample(img, c, y, x));
            }
        }
    }
    out
}

/// Counter-clockwise rotation (in display orientation) about the image center.
pub fn rotate(img: &RealGrid, angle_rad: f64) -> RealGrid {
    let (cy, cx) = ((img.height as f64 - 1.0) / 2.0, (img.width as f64 - 1.0) / 2.0);
    let (s, c) = angle_rad.sin_cos();
    // output (x, y) -> input: rotate back by -angle about the center; rows grow downward
    let to_origin = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let back = Matrix3::new(1.0, 0.0, cx, 0.0, 1.0, cy, 0.0, 0.0, 1.0);
    let r_inv = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    warp(img, &(back * r_inv * to_origin))
}

pub fn random_rotate(img: &RealGrid, spec: &TransformSpec, rng: &mut impl Rng) -> RealGrid {
    let (a, b) = spec.angle_range_deg;
    let deg = if a == b { a } else { rng.random_range(a..=b) };
    rotate(img, deg.to_radians())
}

/// Homography mapping each `src[k]` onto `dst[k]` (points as `(x, y)`).
pub fn homography_from_points(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for k in 0..4 {
        let ((x, y), (u, v)) = (src[k], dst[k]);
        let r = 2 * k;
        a.set_row(r, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        b[r] = u;
        b[r + 1] = v;
    }
    let lu = a.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::SingularHomography);
    }
    let h = lu.solve(&b).ok_or(Error::SingularHomography)?;
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Image corners `(x, y)`: top-left, top-right, bottom-right, bottom-left.
pub fn image_corners(height: usize, width: usize) -> [(f64, f64); 4] {
    let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
}

/// Corners displaced inward by independent draws of up to `distortion` times
/// the half-width / half-height.
pub fn perturbed_corners(height: usize, width: usize, distortion: f64, rng: &mut impl Rng) -> [(f64, f64); 4] {
    let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut draw = |half: f64| {
        let m = distortion * half;
        if m > 0.0 {
            rng.random_range(0.0..=m)
        } else {
            0.0
        }
    };
    let c = image_corners(height, width);
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let mut out = c;
    for k in 0..4 {
        let dx = draw(hw);
        let dy = draw(hh);
        out[k] = (c[k].0 + signs[k].0 * dx, c[k].1 + signs[k].1 * dy);
    }
    out
}

pub const PERSPECTIVE_ATTEMPTS: usize = 10;

/// Warp the full image onto a randomly perturbed quadrilateral.
pub fn random_perspective(img: &RealGrid, spec: &TransformSpec, rng: &mut impl Rng) -> Result<RealGrid> {
    if rng.random::<f64>() >= spec.probability {
        return Ok(img.clone());
    }
    let start = image_corners(img.height, img.width);
    for _ in 0..PERSPECTIVE_ATTEMPTS {
        let end = perturbed_corners(img.height, img.width, spec.distortion, rng);
        // output pixels on the perturbed quad read from the original corners
        match homography_from_points(&end, &start) {
            Ok(h_inv) => return Ok(warp(img, &h_inv)),
            Err(Error::SingularHomography) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SingularHomography)
}

/// Place a digit on the PSF grid and apply the configured transformation.
pub fn transform_example(img: &RealGrid, cfg: &SimConfig, spec: &TransformSpec, rng: &mut impl Rng) -> Result<RealGrid> {
    match spec.kind {
        TransformKind::None => rescale_to_height(img, cfg, cfg.object_height_m),
        TransformKind::Shift => {
            let scene = rescale_to_height(img, cfg, cfg.object_height_m)?;
            Ok(random_shift(&scene, rng))
        }
        TransformKind::Rescale => {
            let h = random_rescale(spec, rng);
            rescale_to_height(img, cfg, h)
        }
        TransformKind::Rotate => rescale_to_height(&random_rotate(img, spec, rng), cfg, cfg.object_height_m),
        TransformKind::Perspective => {
            let warped = random_perspective(img, spec, rng)?;
            rescale_to_height(&warped, cfg, cfg.object_height_m)
        }
    }
}
