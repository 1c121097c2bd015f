//! Scalar diffraction: spherical point-source fields, band-limited angular
//! spectrum propagation, and incoherent intensity PSFs.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{centered_coord, fft_freq, ComplexGrid, Fft2Plan, RealGrid, C64};

/// Red, green and blue simulation wavelengths.
pub const RGB_WAVELENGTHS_M: [f64; 3] = [640e-9, 550e-9, 460e-9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPlan {
    pub grid_h: usize,
    pub grid_w: usize,
    pub pitch_m: f64,
    /// Propagation distance; negative values back-propagate.
    pub distance_m: f64,
    pub wavelength_m: f64,
}

impl PropagationPlan {
    pub fn new(grid_h: usize, grid_w: usize, pitch_m: f64, distance_m: f64, wavelength_m: f64) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::Config("propagation grid must be non-empty".into()));
        }
        if !(pitch_m > 0.0) || !(wavelength_m > 0.0) || !distance_m.is_finite() {
            return Err(Error::Config(format!(
                "invalid propagation plan: pitch {pitch_m}, wavelength {wavelength_m}, distance {distance_m}"
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            pitch_m,
            distance_m,
            wavelength_m,
        })
    }

    /// Physical extent `(S_x, S_y)` of the propagation region.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.grid_w as f64 * self.pitch_m,
            self.grid_h as f64 * self.pitch_m,
        )
    }

    /// Band-limiting frequencies `(u_limit, v_limit)` that keep the sampled
    /// transfer-function phase free of aliasing.
    pub fn band_limits(&self) -> (f64, f64) {
        let (sx, sy) = self.extent();
        let d = self.distance_m;
        let lam = self.wavelength_m;
        (
            1.0 / (lam * ((d / sx).powi(2) + 1.0).sqrt()),
            1.0 / (lam * ((d / sy).powi(2) + 1.0).sqrt()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub distance_m: f64,
    pub wavelength_m: f64,
}

impl SourceSpec {
    pub fn new(distance_m: f64, wavelength_m: f64) -> Result<Self> {
        if !(distance_m > 0.0) || !(wavelength_m > 0.0) {
            return Err(Error::Config(format!(
                "point source needs positive distance and wavelength, got {distance_m}, {wavelength_m}"
            )));
        }
        Ok(Self {
            distance_m,
            wavelength_m,
        })
    }
}

/// Phase-only spherical wavefront from an on-axis point source, sampled at
/// pixel centers with the origin at pixel `(H/2, W/2)`.
pub fn spherical_source(height: usize, width: usize, pitch_m: f64, src: &SourceSpec) -> ComplexGrid {
    let d = src.distance_m;
    let lam = src.wavelength_m;
    // Split r/λ into (d/λ mod 1) + (r - d)/λ to keep the phase accurate.
    let base = (d / lam).fract();
    let mut data = Vec::with_capacity(height * width);
    for i in 0..height {
        let y = centered_coord(i, height, pitch_m);
        for j in 0..width {
            let x = centered_coord(j, width, pitch_m);
            let rho2 = x * x + y * y;
            let excess = rho2 / (d + (rho2 + d * d).sqrt());
            let cycles = base + excess / lam;
            data.push(C64::from_polar(1.0, 2.0 * PI * cycles.fract()));
        }
    }
    ComplexGrid {
        height,
        width,
        data,
        pitch_m,
    }
}

/// Band-limited angular spectrum transfer function in unshifted FFT order.
pub fn blas_transfer(plan: &PropagationPlan) -> ComplexGrid {
    let (u_lim, v_lim) = plan.band_limits();
    let lam = plan.wavelength_m;
    let d_cycles = plan.distance_m / lam;
    let mut data = Vec::with_capacity(plan.grid_h * plan.grid_w);
    for i in 0..plan.grid_h {
        let v = fft_freq(i, plan.grid_h, plan.pitch_m);
        for j in 0..plan.grid_w {
            let u = fft_freq(j, plan.grid_w, plan.pitch_m);
            let arg = 1.0 - (lam * u).powi(2) - (lam * v).powi(2);
            let pass = u.abs() <= u_lim && v.abs() <= v_lim && arg >= 0.0;
            data.push(if pass {
                let cycles = d_cycles * arg.sqrt();
                C64::from_polar(1.0, 2.0 * PI * cycles.fract())
            } else {
                C64::new(0.0, 0.0)
            });
        }
    }
    ComplexGrid {
        height: plan.grid_h,
        width: plan.grid_w,
        data,
        pitch_m: plan.pitch_m,
    }
}

pub fn propagate(field: &ComplexGrid, plan: &PropagationPlan) -> Result<ComplexGrid> {
    if (field.height, field.width) != (plan.grid_h, plan.grid_w) {
        return Err(dim_mismatch(
            "propagated field",
            (plan.grid_h, plan.grid_w),
            (field.height, field.width),
        ));
    }
    let fft = Fft2Plan::new(field.height, field.width);
    let transfer = blas_transfer(plan);
    Ok(propagate_with(field, &transfer, &fft))
}

/// `ifft2(fft2(field) ⊙ transfer)` with a precomputed transfer function.
pub fn propagate_with(field: &ComplexGrid, transfer: &ComplexGrid, fft: &Fft2Plan) -> ComplexGrid {
    let mut out = field.clone();
    fft.forward_inplace(&mut out.data);
    for (a, h) in out.data.iter_mut().zip(&transfer.data) {
        *a *= h;
    }
    fft.inverse_inplace(&mut out.data);
    out
}

/// Scale each channel to unit sum.
pub fn normalize_channels(psf: &mut RealGrid) -> Result<()> {
    for c in 0..psf.channels {
        let s: f64 = psf.plane(c).iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegeneratePsf { channel: c });
        }
        psf.plane_mut(c).iter_mut().for_each(|v| *v /= s);
    }
    Ok(())
}

/// θ-independent pieces of the PSF simulation for a fixed grid and wavelength set.
#[derive(Debug, Clone)]
pub struct PsfModel {
    pub height: usize,
    pub width: usize,
    pub pitch_m: f64,
    pub wavelengths_m: Vec<f64>,
    pub sources: Vec<ComplexGrid>,
    pub transfers: Vec<ComplexGrid>,
    pub fft: Fft2Plan,
}

impl PsfModel {
    pub fn new(height: usize, width: usize, pitch_m: f64, d1_m: f64, d2_m: f64, wavelengths_m: &[f64]) -> Result<Self> {
        if wavelengths_m.is_empty() {
            return Err(Error::Config("at least one wavelength is required".into()));
        }
        let mut sources = Vec::new();
        let mut transfers = Vec::new();
        for &lam in wavelengths_m {
            let src = SourceSpec::new(d1_m, lam)?;
            sources.push(spherical_source(height, width, pitch_m, &src));
            let plan = PropagationPlan::new(height, width, pitch_m, d2_m, lam)?;
            transfers.push(blas_transfer(&plan));
        }
        Ok(Self {
            height,
            width,
            pitch_m,
            wavelengths_m: wavelengths_m.to_vec(),
            sources,
            transfers,
            fft: Fft2Plan::new(height, width),
        })
    }

    /// Un-normalized `|U₂|²` for one wavelength channel and a real or complex mask.
    pub fn channel_intensity(&self, channel: usize, mask: &ComplexGrid) -> Result<RealGrid> {
        if (mask.height, mask.width) != (self.height, self.width) {
            return Err(dim_mismatch(
                "mask",
                (self.height, self.width),
                (mask.height, mask.width),
            ));
        }
        let field = self.sources[channel].hadamard(mask)?;
        let out = propagate_with(&field, &self.transfers[channel], &self.fft);
        Ok(out.squared_modulus())
    }

    /// Unit-sum intensity PSF with one channel per wavelength. `masks` holds one
    /// mask per wavelength, or a single mask shared by all of them.
    pub fn psf(&self, masks: &[ComplexGrid]) -> Result<RealGrid> {
        let n = self.wavelengths_m.len();
        if masks.len() != n && masks.len() != 1 {
            return Err(dim_mismatch("mask count", n, masks.len()));
        }
        let planes = (0..n)
            .into_par_iter()
            .map(|c| self.channel_intensity(c, &masks[if masks.len() == 1 { 0 } else { c }]))
            .collect::<Result<Vec<_>>>()?;
        let mut psf = RealGrid::stack(&planes)?;
        psf.pitch_m = Some(self.pitch_m);
        normalize_channels(&mut psf)?;
        Ok(psf)
    }
}

/// Intensity PSF `|propagate(U₁⁻ ⊙ M(λ), d₂)|²` per wavelength, normalized to
/// unit sum per channel. The mask grid fixes the sampling and pitch.
pub fn intensity_psf(masks: &[ComplexGrid], d1_m: f64, d2_m: f64, wavelengths_m: &[f64]) -> Result<RealGrid> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Config("intensity_psf needs at least one mask".into()))?;
    let model = PsfModel::new(first.height, first.width, first.pitch_m, d1_m, d2_m, wavelengths_m)?;
    model.psf(masks)
}
