//! Amplitude-mask models: the programmable color SLM, fixed random and MLS
//! coded-aperture baselines, and ingestion of measured PSFs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bilinear_resize, centered_coord, ComplexGrid, RealGrid, C64};
use crate::io::{read_pfm, read_real_grid};
use crate::optics::normalize_channels;

/// Image sensor sampling; defaults to the Sony IMX477R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// `(rows, cols)` at full resolution.
    pub full_res: (usize, usize),
    pub pixel_m: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self::imx477()
    }
}

impl SensorGeometry {
    pub fn imx477() -> Self {
        Self {
            full_res: (3040, 4056),
            pixel_m: 1.55e-6,
        }
    }

    /// Physical `(height, width)` in meters.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.full_res.0 as f64 * self.pixel_m,
            self.full_res.1 as f64 * self.pixel_m,
        )
    }

    /// Grid dimensions after dividing the resolution by `factor` (rounded).
    pub fn downsampled_dims(&self, factor: f64) -> (usize, usize) {
        (
            ((self.full_res.0 as f64 / factor).round() as usize).max(1),
            ((self.full_res.1 as f64 / factor).round() as usize).max(1),
        )
    }
}

/// Per-sub-pixel color filter of the SLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubpixelColor {
    Red,
    Green,
    Blue,
}

impl SubpixelColor {
    /// Index into [`crate::optics::RGB_WAVELENGTHS_M`].
    pub fn channel(self) -> usize {
        self as usize
    }
}

/// Sub-pixel lattice of an amplitude SLM restricted to its active crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmGeometry {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Transmissive aperture `(height, width)` in meters.
    pub subpixel_size: (f64, f64),
    /// Lattice spacing `(row, col)` in meters.
    pub pixel_pitch: (f64, f64),
}

impl SlmGeometry {
    pub const ST7735R_SUBPIXEL: (f64, f64) = (0.06e-3, 0.18e-3);
    pub const ST7735R_PITCH: (f64, f64) = (0.073e-3, 0.22e-3);

    /// ST7735R sub-pixels exposing `coverage` of the sensor.
    pub fn st7735r(sensor: &SensorGeometry, coverage: f64) -> Self {
        let (n_rows, n_cols) = active_subpixels(sensor, coverage);
        Self {
            n_rows,
            n_cols,
            subpixel_size: Self::ST7735R_SUBPIXEL,
            pixel_pitch: Self::ST7735R_PITCH,
        }
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear transmissive fraction per axis (geometric mean of the two axes).
    pub fn fill_factor(&self) -> f64 {
        self.area_fill_factor().sqrt()
    }

    /// Transmissive fraction of each lattice cell's area.
    pub fn area_fill_factor(&self) -> f64 {
        (self.subpixel_size.0 * self.subpixel_size.1) / (self.pixel_pitch.0 * self.pixel_pitch.1)
    }

    /// Center `(y_k, x_k)` of sub-pixel `k` (row-major), with the lattice
    /// centered on the optical axis.
    pub fn center(&self, k: usize) -> (f64, f64) {
        let (r, c) = (k / self.n_cols, k % self.n_cols);
        (
            (r as f64 - (self.n_rows as f64 - 1.0) / 2.0) * self.pixel_pitch.0,
            (c as f64 - (self.n_cols as f64 - 1.0) / 2.0) * self.pixel_pitch.1,
        )
    }

    /// Color stripes cycle R, G, B down the rows.
    pub fn color(&self, k: usize) -> SubpixelColor {
        match (k / self.n_cols) % 3 {
            0 => SubpixelColor::Red,
            1 => SubpixelColor::Green,
            _ => SubpixelColor::Blue,
        }
    }

    /// Physical `(height, width)` spanned by the active lattice.
    pub fn active_extent(&self) -> (f64, f64) {
        (
            self.n_rows as f64 * self.pixel_pitch.0,
            self.n_cols as f64 * self.pixel_pitch.1,
        )
    }
}

/// Sub-pixel rows and columns whose lattice cells fit in the axis-centered
/// window spanning `coverage` of the sensor height and width.
pub fn active_subpixels(sensor: &SensorGeometry, coverage: f64) -> (usize, usize) {
    let coverage = coverage.clamp(0.0, 1.0);
    let (h, w) = sensor.extent();
    let (ph, pw) = SlmGeometry::ST7735R_PITCH;
    // small slack absorbs rounding of extents that land exactly on a multiple
    let n = |extent: f64, pitch: f64| (((coverage * extent) / pitch + 1e-9).floor() as usize).max(1);
    (n(h, ph), n(w, pw))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Learnable SLM weights; the effective amplitude is `sigmoid(theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmState {
    pub geometry: SlmGeometry,
    pub raw_weights: Vec<f64>,
    pub trainable: bool,
}

impl SlmState {
    pub fn new(geometry: SlmGeometry, raw_weights: Vec<f64>, trainable: bool) -> Result<Self> {
        if raw_weights.len() != geometry.len() {
            return Err(crate::error::dim_mismatch(
                "SLM weight count",
                geometry.len(),
                raw_weights.len(),
            ));
        }
        Ok(Self {
            geometry,
            raw_weights,
            trainable,
        })
    }

    /// Weights drawn i.i.d. from `U(0, 1)` with a seeded generator.
    pub fn random(geometry: SlmGeometry, seed: u64, trainable: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_weights = (0..geometry.len())
            .map(|_| logit(rng.random_range(1e-6..1.0 - 1e-6)))
            .collect();
        Self {
            geometry,
            raw_weights,
            trainable,
        }
    }

    /// Effective amplitudes `w_k = sigmoid(theta_k)`.
    pub fn weights(&self) -> Vec<f64> {
        self.raw_weights.iter().map(|&t| sigmoid(t)).collect()
    }
}

/// Which field pixels each sub-pixel covers on a particular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRaster {
    pub height: usize,
    pub width: usize,
    pub pitch_m: f64,
    pub footprints: Vec<Vec<usize>>,
    pub colors: Vec<SubpixelColor>,
}

impl MaskRaster {
    /// Assign field pixels whose centers fall inside each sub-pixel aperture
    /// (half-open on both axes).
    pub fn new(geometry: &SlmGeometry, height: usize, width: usize, pitch_m: f64) -> Result<Self> {
        let (ah, aw) = geometry.subpixel_size;
        let row_range = |c: f64, half: f64, n: usize| -> (usize, usize) {
            // pixel i is inside when c - half <= x_i < c + half
            // the tolerance keeps samples that sit on an edge up to rounding
            let lo = ((c - half) / pitch_m + (n / 2) as f64 - 1e-9).ceil();
            let hi = ((c + half) / pitch_m + (n / 2) as f64 - 1e-9).ceil();
            let clamp = |v: f64| v.max(0.0).min(n as f64) as usize;
            (clamp(lo), clamp(hi))
        };
        let mut footprints = Vec::with_capacity(geometry.len());
        let mut colors = Vec::with_capacity(geometry.len());
        for k in 0..geometry.len() {
            let (yc, xc) = geometry.center(k);
            let (i0, i1) = row_range(yc, ah / 2.0, height);
            let (j0, j1) = row_range(xc, aw / 2.0, width);
            let mut fp = Vec::new();
            for i in i0..i1 {
                for j in j0..j1 {
                    fp.push(i * width + j);
                }
            }
            if fp.is_empty() {
                return Err(Error::ResolutionTooCoarse { subpixel: k });
            }
            footprints.push(fp);
            colors.push(geometry.color(k));
        }
        Ok(Self {
            height,
            width,
            pitch_m,
            footprints,
            colors,
        })
    }

    /// Amplitude mask for wavelength `channel`; `None` ignores the color filters.
    pub fn rasterize(&self, weights: &[f64], channel: Option<usize>) -> ComplexGrid {
        let mut g = ComplexGrid::zeros(self.height, self.width, self.pitch_m);
        for (k, fp) in self.footprints.iter().enumerate() {
            if channel.is_some_and(|c| self.colors[k].channel() != c) {
                continue;
            }
            for &p in fp {
                g.data[p] = C64::new(weights[k], 0.0);
            }
        }
        g
    }

    /// Transpose of [`MaskRaster::rasterize`] with respect to the weights:
    /// accumulates `Re(upstream)` over each matching footprint into `grad`.
    pub fn adjoint_accumulate(&self, upstream: &[C64], channel: Option<usize>, grad: &mut [f64]) {
        for (k, fp) in self.footprints.iter().enumerate() {
            if channel.is_some_and(|c| self.colors[k].channel() != c) {
                continue;
            }
            grad[k] += fp.iter().map(|&p| upstream[p].re).sum::<f64>();
        }
    }
}

/// Real-valued amplitude mask of `state` on a `height x width` field for one
/// wavelength channel.
pub fn rasterize_mask(state: &SlmState, height: usize, width: usize, pitch_m: f64, channel: usize) -> Result<ComplexGrid> {
    let raster = MaskRaster::new(&state.geometry, height, width, pitch_m)?;
    Ok(raster.rasterize(&state.weights(), Some(channel)))
}

/// Feedback taps per register length, matching the table used by SciPy's
/// `max_len_seq`.
fn mls_taps(n_bits: u32) -> Option<&'static [usize]> {
    Some(match n_bits {
        2 => &[1],
        3 => &[2],
        4 => &[3],
        5 => &[3],
        6 => &[5],
        7 => &[6],
        8 => &[7, 6, 1],
        9 => &[5],
        10 => &[7],
        11 => &[9],
        12 => &[11, 10, 4],
        13 => &[12, 11, 8],
        14 => &[13, 12, 2],
        15 => &[14],
        16 => &[15, 13, 4],
        _ => return None,
    })
}

/// Maximum length sequence of `2^n - 1` bits from an all-ones initial state.
pub fn mls_sequence(n_bits: u32) -> Result<Vec<u8>> {
    let taps = mls_taps(n_bits).ok_or(Error::UnsupportedDegree(n_bits))?;
    let n = n_bits as usize;
    let mut state = vec![1u8; n];
    let len = (1usize << n) - 1;
    let mut seq = Vec::with_capacity(len);
    let mut idx = 0;
    for _ in 0..len {
        let mut feedback = state[idx];
        seq.push(feedback);
        for &t in taps {
            feedback ^= state[(t + idx) % n];
        }
        state[idx] = feedback;
        idx = (idx + 1) % n;
    }
    Ok(seq)
}

pub const CODED_APERTURE_FEATURE_M: f64 = 30e-6;
pub const CODED_APERTURE_D2_M: f64 = 0.5e-3;

fn coded_aperture_row() -> Vec<u8> {
    let s = mls_sequence(6).expect("degree 6 is tabulated");
    s.iter().chain(&s).copied().collect()
}

/// 126 x 126 binary mask: outer product of a twice-tiled length-63 MLS.
pub fn coded_aperture_mask() -> RealGrid {
    let s = coded_aperture_row();
    let n = s.len();
    let mut data = Vec::with_capacity(n * n);
    for &a in &s {
        for &b in &s {
            data.push((a * b) as f64);
        }
    }
    RealGrid::from_plane(n, n, data)
        .expect("square mask")
        .with_pitch(CODED_APERTURE_FEATURE_M)
}

/// Area-weighted resampling matrix from `n_src` cells of size `src_pitch`
/// (centered on the axis) onto `n_dst` pixels of size `dst_pitch`.
fn overlap_weights(n_src: usize, src_pitch: f64, n_dst: usize, dst_pitch: f64) -> Vec<Vec<(usize, f64)>> {
    let src_lo = -(n_src as f64) * src_pitch / 2.0;
    (0..n_dst)
        .map(|i| {
            let c = centered_coord(i, n_dst, dst_pitch);
            let (a, b) = (c - dst_pitch / 2.0, c + dst_pitch / 2.0);
            let k0 = ((a - src_lo) / src_pitch).floor().max(0.0) as usize;
            let k1 = (((b - src_lo) / src_pitch).ceil().max(0.0) as usize).min(n_src);
            (k0..k1)
                .filter_map(|k| {
                    let lo = src_lo + k as f64 * src_pitch;
                    let ov = (b.min(lo + src_pitch) - a.max(lo)).max(0.0);
                    (ov > 0.0).then_some((k, ov / dst_pitch))
                })
                .collect()
        })
        .collect()
}

/// Coded-aperture transmittance on a field grid: each field pixel takes the
/// fraction of its area that is open.
pub fn coded_aperture_field(height: usize, width: usize, pitch_m: f64) -> ComplexGrid {
    let s: Vec<f64> = coded_aperture_row().iter().map(|&v| v as f64).collect();
    let project = |n: usize| -> Vec<f64> {
        overlap_weights(s.len(), CODED_APERTURE_FEATURE_M, n, pitch_m)
            .into_iter()
            .map(|taps| taps.iter().map(|&(k, w)| w * s[k]).sum())
            .collect()
    };
    let (rows, cols) = (project(height), project(width));
    let data = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| C64::new(r * c, 0.0)))
        .collect();
    ComplexGrid {
        height,
        width,
        data,
        pitch_m,
    }
}

/// Clamp negatives to zero and normalize every channel to unit sum.
pub fn sanitize_psf(mut psf: RealGrid) -> Result<RealGrid> {
    psf.data.iter_mut().for_each(|v| {
        if !(*v > 0.0) {
            *v = 0.0;
        }
    });
    normalize_channels(&mut psf)?;
    Ok(psf)
}

/// Read a measured PSF (`.pfm`, otherwise `LCT1`).
pub fn load_measured_psf(path: impl AsRef<Path>) -> Result<RealGrid> {
    let path = path.as_ref();
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let raw = if is_pfm {
        read_pfm(path)?
    } else {
        read_real_grid(path)?
    };
    sanitize_psf(raw)
}

/// Bilinearly resample a PSF to `height x width` and renormalize.
pub fn resample_psf(psf: &RealGrid, height: usize, width: usize) -> Result<RealGrid> {
    if (psf.height, psf.width) == (height, width) {
        return sanitize_psf(psf.clone());
    }
    sanitize_psf(bilinear_resize(psf, height, width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &[u8]) -> String {
        s.iter().map(|b| char::from(b'0' + b)).collect()
    }

    #[test]
    fn sensor_extent() {
        let (h, w) = SensorGeometry::imx477().extent();
        assert!((h - 4.712e-3).abs() < 1e-6);
        assert!((w - 6.2868e-3).abs() < 1e-6);
    }

    #[test]
    fn fill_factor_is_82_percent() {
        let g = SlmGeometry::st7735r(&SensorGeometry::imx477(), 0.8);
        assert!((g.fill_factor() - 0.82).abs() < 0.01);
        assert!((g.area_fill_factor() - 0.0108 / 0.01606).abs() < 1e-9);
    }

    #[test]
    fn active_subpixels_default_crop() {
        let s = SensorGeometry::imx477();
        assert_eq!(active_subpixels(&s, 0.8), (51, 22));
        assert_eq!(active_subpixels(&s, 1e-9), (1, 1));
    }

    #[test]
    fn mls_matches_reference_sequences() {
        assert_eq!(bits(&mls_sequence(2).unwrap()), "110");
        assert_eq!(bits(&mls_sequence(3).unwrap()), "1110100");
        assert_eq!(bits(&mls_sequence(4).unwrap()), "111101011001000");
        assert_eq!(bits(&mls_sequence(5).unwrap()), "1111100110100100001010111011000");
        assert_eq!(
            bits(&mls_sequence(6).unwrap()),
            "111111010101100110111011010010011100010111100101000110000100000"
        );
    }

    #[test]
    fn mls_degree_bounds() {
        assert!(matches!(mls_sequence(1), Err(Error::UnsupportedDegree(1))));
        assert!(matches!(mls_sequence(17), Err(Error::UnsupportedDegree(17))));
        assert_eq!(mls_sequence(16).unwrap().len(), 65535);
    }

    #[test]
    fn coded_aperture_counts() {
        let m = coded_aperture_mask();
        assert_eq!((m.height, m.width), (126, 126));
        assert_eq!(m.sum(), 4096.0);
    }

    #[test]
    fn coded_aperture_field_at_feature_pitch_averages_neighbours() {
        let f = coded_aperture_field(130, 128, CODED_APERTURE_FEATURE_M);
        let m = coded_aperture_mask();
        let seq: Vec<f64> = (0..126).map(|k| m.get(0, k, 0)).collect();
        let cell = |k: isize| if (0..126).contains(&k) { seq[k as usize] } else { 0.0 };
        // pixel centers sit on feature edges, so each pixel straddles two cells
        for i in 0..130isize {
            for j in 0..128isize {
                let r = 0.5 * (cell(i - 3) + cell(i - 2));
                let c = 0.5 * (cell(j - 2) + cell(j - 1));
                let z = f.get(i as usize, j as usize).re;
                assert!((z - r * c).abs() < 1e-12, "{i} {j}");
            }
        }
        assert!((f.data.iter().map(|z| z.re).sum::<f64>() - 4096.0).abs() < 1e-9);
    }

    #[test]
    fn coded_aperture_field_preserves_open_area() {
        let pitch = 12.4e-6;
        let f = coded_aperture_field(380, 507, pitch);
        let open = f.data.iter().map(|z| z.re).sum::<f64>() * pitch * pitch;
        let expected = 4096.0 * CODED_APERTURE_FEATURE_M.powi(2);
        assert!((open - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn footprint_of_single_subpixel() {
        let geom = SlmGeometry {
            n_rows: 3,
            n_cols: 2,
            ..SlmGeometry::st7735r(&SensorGeometry::imx477(), 0.8)
        };
        let raster = MaskRaster::new(&geom, 64, 64, 10e-6).unwrap();
        for fp in &raster.footprints {
            assert_eq!(fp.len(), 6 * 18);
        }
    }

    #[test]
    fn coarse_field_is_rejected() {
        let geom = SlmGeometry::st7735r(&SensorGeometry::imx477(), 0.8);
        assert!(matches!(
            MaskRaster::new(&geom, 20, 20, 300e-6),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }

    #[test]
    fn negative_psf_pixels_are_clamped() {
        let g = RealGrid::from_plane(1, 4, vec![-1.0, 1.0, 3.0, f64::NAN]).unwrap();
        let p = sanitize_psf(g).unwrap();
        assert_eq!(p.data, vec![0.0, 0.25, 0.75, 0.0]);
    }
}
