//! Dense 2-D grids, FFTs, zero-padded linear convolution and bilinear resampling.
//!
//! Real grids are stored planar: channel `c`, row `i`, column `j` lives at
//! `data[(c * height + i) * width + j]`. Every optics-path computation is done
//! in `f64`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{dim_mismatch, Error, Result};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub pitch_m: Option<f64>,
}

impl RealGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            pitch_m: None,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            data: vec![value; height * width * channels],
            ..Self::zeros(height, width, channels)
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(dim_mismatch(
                "grid payload length",
                height * width * channels,
                data.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            pitch_m: None,
        })
    }

    /// Single-channel grid built from a row-major plane.
    pub fn from_plane(height: usize, width: usize, plane: Vec<f64>) -> Result<Self> {
        Self::from_vec(height, width, 1, plane)
    }

    pub fn with_pitch(mut self, pitch_m: f64) -> Self {
        self.pitch_m = Some(pitch_m);
        self
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn channel(&self, c: usize) -> RealGrid {
        RealGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.plane(c).to_vec(),
            pitch_m: self.pitch_m,
        }
    }

    pub fn channel_sums(&self) -> Vec<f64> {
        (0..self.channels).map(|c| self.plane(c).iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Average of all channels, as a single-channel grid.
    pub fn channel_mean(&self) -> RealGrid {
        let n = self.plane_len();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        RealGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data: out,
            pitch_m: self.pitch_m,
        }
    }

    /// Stack single- or multi-channel grids of equal plane size along the channel axis.
    pub fn stack(grids: &[RealGrid]) -> Result<RealGrid> {
        let first = grids
            .first()
            .ok_or_else(|| Error::DimensionMismatch("cannot stack zero grids".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for g in grids {
            if (g.height, g.width) != (first.height, first.width) {
                return Err(dim_mismatch(
                    "stacked plane",
                    (first.height, first.width),
                    (g.height, g.width),
                ));
            }
            data.extend_from_slice(&g.data);
            channels += g.channels;
        }
        Ok(RealGrid {
            height: first.height,
            width: first.width,
            channels,
            data,
            pitch_m: first.pitch_m,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealGrid {
        RealGrid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn to_complex(&self, c: usize) -> ComplexGrid {
        ComplexGrid {
            height: self.height,
            width: self.width,
            data: self.plane(c).iter().map(|&v| C64::new(v, 0.0)).collect(),
            pitch_m: self.pitch_m.unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<C64>,
    pub pitch_m: f64,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize, pitch_m: f64) -> Self {
        Self {
            height,
            width,
            data: vec![C64::new(0.0, 0.0); height * width],
            pitch_m,
        }
    }

    pub fn from_vec(height: usize, width: usize, pitch_m: f64, data: Vec<C64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_mismatch("complex grid payload", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
            pitch_m,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.width + j]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn squared_modulus(&self) -> RealGrid {
        RealGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|z| z.norm_sqr()).collect(),
            pitch_m: Some(self.pitch_m),
        }
    }

    pub fn hadamard(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(dim_mismatch(
                "element-wise product",
                (self.height, self.width),
                (other.height, other.width),
            ));
        }
        Ok(ComplexGrid {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
            ..self.clone()
        })
    }
}

/// Cached row/column plans for a fixed 2-D transform size.
///
/// The forward transform is unnormalized; the inverse carries the `1/(HW)`
/// factor, so `inverse(forward(x)) == x`.
#[derive(Clone)]
pub struct Fft2Plan {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2Plan")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2Plan {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "FFT dimensions must be positive");
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [C64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "buffer does not match FFT plan");
        let (h, w) = (self.height, self.width);
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![C64::new(0.0, 0.0); scratch_len];
        if w > 1 {
            row.process_with_scratch(data, &mut scratch);
        }
        if h > 1 {
            let mut t = vec![C64::new(0.0, 0.0); h * w];
            transpose(data, &mut t, h, w);
            col.process_with_scratch(&mut t, &mut scratch);
            transpose(&t, data, w, h);
        }
    }

    pub fn forward_inplace(&self, data: &mut [C64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse transform (conjugate-linear adjoint of `forward_inplace`).
    pub fn inverse_unnormalized_inplace(&self, data: &mut [C64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    pub fn inverse_inplace(&self, data: &mut [C64]) {
        self.inverse_unnormalized_inplace(data);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }
}

fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const B: usize = 16;
    for i0 in (0..rows).step_by(B) {
        for j0 in (0..cols).step_by(B) {
            for i in i0..(i0 + B).min(rows) {
                for j in j0..(j0 + B).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

pub fn fft2(g: &ComplexGrid) -> ComplexGrid {
    let plan = Fft2Plan::new(g.height, g.width);
    let mut out = g.clone();
    plan.forward_inplace(&mut out.data);
    out
}

pub fn ifft2(g: &ComplexGrid) -> ComplexGrid {
    let plan = Fft2Plan::new(g.height, g.width);
    let mut out = g.clone();
    plan.inverse_inplace(&mut out.data);
    out
}

/// Smallest 2·3·5-smooth integer `>= n`.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Zero-padded linear convolution of same-size planes with a reusable kernel spectrum.
///
/// The kernel center is pixel `(H/2, W/2)`; the output is the `H x W` window of
/// the full linear convolution aligned with the input, so a unit delta at the
/// kernel center is the identity. The padded transform size is the smallest
/// fast FFT length `>= 2H` (resp. `2W`), which produces the same values as
/// padding to exactly `2H x 2W`.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    pub height: usize,
    pub width: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    fft: Fft2Plan,
}

impl ConvPlan {
    pub fn new(height: usize, width: usize) -> Self {
        let pad_h = fast_len(2 * height);
        let pad_w = fast_len(2 * width);
        Self {
            height,
            width,
            pad_h,
            pad_w,
            fft: Fft2Plan::new(pad_h, pad_w),
        }
    }

    pub fn fft(&self) -> &Fft2Plan {
        &self.fft
    }

    /// Spectrum of a zero-padded plane (placed at the origin of the padded grid).
    pub fn spectrum(&self, plane: &[f64]) -> Vec<C64> {
        debug_assert_eq!(plane.len(), self.height * self.width);
        let mut buf = vec![C64::new(0.0, 0.0); self.pad_h * self.pad_w];
        for i in 0..self.height {
            let src = &plane[i * self.width..(i + 1) * self.width];
            let dst = &mut buf[i * self.pad_w..i * self.pad_w + self.width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = C64::new(*s, 0.0);
            }
        }
        self.fft.forward_inplace(&mut buf);
        buf
    }

    /// Inverse-transform a product spectrum and extract the centered window.
    pub fn window_from_spectrum(&self, mut spec: Vec<C64>) -> Vec<f64> {
        self.fft.inverse_inplace(&mut spec);
        let (r0, c0) = (self.height / 2, self.width / 2);
        let mut out = vec![0.0; self.height * self.width];
        for i in 0..self.height {
            let row = (i + r0) * self.pad_w + c0;
            for j in 0..self.width {
                out[i * self.width + j] = spec[row + j].re;
            }
        }
        out
    }

    /// Embed an output-window plane into a zero padded buffer (adjoint of the window crop).
    pub fn window_adjoint(&self, plane: &[f64]) -> Vec<C64> {
        let (r0, c0) = (self.height / 2, self.width / 2);
        let mut buf = vec![C64::new(0.0, 0.0); self.pad_h * self.pad_w];
        for i in 0..self.height {
            let row = (i + r0) * self.pad_w + c0;
            for j in 0..self.width {
                buf[row + j] = C64::new(plane[i * self.width + j], 0.0);
            }
        }
        buf
    }

    pub fn convolve_with_spectrum(&self, plane: &[f64], kernel_spec: &[C64]) -> Vec<f64> {
        let mut s = self.spectrum(plane);
        for (a, b) in s.iter_mut().zip(kernel_spec) {
            *a *= b;
        }
        self.window_from_spectrum(s)
    }
}

/// Per-channel linear convolution, returning the centered `H x W` crop.
pub fn linear_convolve(img: &RealGrid, kernel: &RealGrid) -> Result<RealGrid> {
    if (img.height, img.width) != (kernel.height, kernel.width) {
        return Err(dim_mismatch(
            "convolution plane",
            (img.height, img.width),
            (kernel.height, kernel.width),
        ));
    }
    if kernel.channels != img.channels && kernel.channels != 1 {
        return Err(dim_mismatch("convolution channels", img.channels, kernel.channels));
    }
    let plan = ConvPlan::new(img.height, img.width);
    let mut out = RealGrid::zeros(img.height, img.width, img.channels);
    out.pitch_m = img.pitch_m;
    for c in 0..img.channels {
        let kc = if kernel.channels == 1 { 0 } else { c };
        let kspec = plan.spectrum(kernel.plane(kc));
        let plane = plan.convolve_with_spectrum(img.plane(c), &kspec);
        out.plane_mut(c).copy_from_slice(&plane);
    }
    Ok(out)
}

/// Interpolation taps along one axis for the align-corners-false convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ResizeAxis {
    pub len_in: usize,
    pub len_out: usize,
    /// `(i0, i1, w0, w1)` per output sample.
    pub taps: Vec<(usize, usize, f64, f64)>,
}

impl ResizeAxis {
    pub fn new(len_in: usize, len_out: usize) -> Self {
        let scale = len_in as f64 / len_out as f64;
        let taps = (0..len_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(len_in - 1);
                let i1 = (i0 + 1).min(len_in - 1);
                let frac = (src - i0 as f64).clamp(0.0, 1.0);
                (i0, i1, 1.0 - frac, frac)
            })
            .collect();
        Self {
            len_in,
            len_out,
            taps,
        }
    }
}

/// Separable bilinear resampling operator for one plane size.
#[derive(Debug, Clone, PartialEq)]
pub struct Resizer {
    pub rows: ResizeAxis,
    pub cols: ResizeAxis,
}

impl Resizer {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            rows: ResizeAxis::new(in_h, out_h),
            cols: ResizeAxis::new(in_w, out_w),
        }
    }

    pub fn in_len(&self) -> usize {
        self.rows.len_in * self.cols.len_in
    }

    pub fn out_len(&self) -> usize {
        self.rows.len_out * self.cols.len_out
    }

    pub fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let (in_w, out_w) = (self.cols.len_in, self.cols.len_out);
        let mut out = Vec::with_capacity(self.out_len());
        for &(r0, r1, a0, a1) in &self.rows.taps {
            let row0 = &plane[r0 * in_w..(r0 + 1) * in_w];
            let row1 = &plane[r1 * in_w..(r1 + 1) * in_w];
            for &(c0, c1, b0, b1) in &self.cols.taps {
                out.push(a0 * (b0 * row0[c0] + b1 * row0[c1]) + a1 * (b0 * row1[c0] + b1 * row1[c1]));
            }
        }
        debug_assert_eq!(out.len(), self.rows.len_out * out_w);
        out
    }

    /// Transpose of [`Resizer::apply`].
    pub fn adjoint(&self, plane: &[f64]) -> Vec<f64> {
        let (in_w, out_w) = (self.cols.len_in, self.cols.len_out);
        let mut out = vec![0.0; self.in_len()];
        for (oi, &(r0, r1, a0, a1)) in self.rows.taps.iter().enumerate() {
            for (oj, &(c0, c1, b0, b1)) in self.cols.taps.iter().enumerate() {
                let g = plane[oi * out_w + oj];
                out[r0 * in_w + c0] += g * a0 * b0;
                out[r0 * in_w + c1] += g * a0 * b1;
                out[r1 * in_w + c0] += g * a1 * b0;
                out[r1 * in_w + c1] += g * a1 * b1;
            }
        }
        out
    }
}

pub fn bilinear_resize(img: &RealGrid, out_h: usize, out_w: usize) -> RealGrid {
    assert!(out_h >= 1 && out_w >= 1, "output dimensions must be positive");
    let r = Resizer::new(img.height, img.width, out_h, out_w);
    let mut data = Vec::with_capacity(out_h * out_w * img.channels);
    for c in 0..img.channels {
        data.extend(r.apply(img.plane(c)));
    }
    RealGrid {
        height: out_h,
        width: out_w,
        channels: img.channels,
        data,
        pitch_m: img
            .pitch_m
            .map(|p| p * img.height as f64 / out_h as f64),
    }
}

/// Zero-pad (or crop) a grid to `out_h x out_w`, keeping it centered.
pub fn center_pad(img: &RealGrid, out_h: usize, out_w: usize) -> RealGrid {
    let mut out = RealGrid::zeros(out_h, out_w, img.channels);
    out.pitch_m = img.pitch_m;
    let oy = out_h as isize / 2 - img.height as isize / 2;
    let ox = out_w as isize / 2 - img.width as isize / 2;
    for c in 0..img.channels {
        for i in 0..img.height {
            let ti = i as isize + oy;
            if ti < 0 || ti >= out_h as isize {
                continue;
            }
            for j in 0..img.width {
                let tj = j as isize + ox;
                if tj < 0 || tj >= out_w as isize {
                    continue;
                }
                out.set(c, ti as usize, tj as usize, img.get(c, i, j));
            }
        }
    }
    out
}

/// Physical coordinate of pixel index `i` on an axis of `n` samples whose
/// origin is the pixel `n / 2`.
#[inline]
pub fn centered_coord(i: usize, n: usize, pitch: f64) -> f64 {
    (i as f64 - (n / 2) as f64) * pitch
}

/// FFT frequency of bin `k` for `n` samples at spacing `pitch` (numpy `fftfreq`).
#[inline]
pub fn fft_freq(k: usize, n: usize, pitch: f64) -> f64 {
    let k = if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    };
    k / (n as f64 * pitch)
}
