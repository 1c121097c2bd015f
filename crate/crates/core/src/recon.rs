//! Nonnegative, TV-regularized deconvolution by ADMM and the privacy sweep
//! built on it.
//!
//! The estimate lives on a zero-padded grid; the forward model convolves it
//! circularly with the PSF and crops the sensor window, which matches the
//! linear convolution used by the simulator. Splits: `v = Hx` (data term with
//! crop), `u = Dx` (circular differences, soft-thresholded), `w = x`
//! (nonnegativity). The `x` update is diagonal in the Fourier domain.

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{bilinear_resize, fast_len, Fft2Plan, RealGrid, C64};
use crate::slm::resample_psf;

/// Forward differences with a zero boundary: channel `2c` holds horizontal
/// and `2c + 1` vertical differences of input channel `c`.
pub fn finite_diff(x: &RealGrid) -> RealGrid {
    let (h, w) = (x.height, x.width);
    let mut out = RealGrid::zeros(h, w, 2 * x.channels);
    for c in 0..x.channels {
        for i in 0..h {
            for j in 0..w {
                let v = x.get(c, i, j);
                if j + 1 < w {
                    out.set(2 * c, i, j, x.get(c, i, j + 1) - v);
                }
                if i + 1 < h {
                    out.set(2 * c + 1, i, j, x.get(c, i + 1, j) - v);
                }
            }
        }
    }
    out
}

pub fn finite_diff_adjoint(g: &RealGrid) -> RealGrid {
    let (h, w) = (g.height, g.width);
    let mut out = RealGrid::zeros(h, w, g.channels / 2);
    for c in 0..g.channels / 2 {
        for i in 0..h {
            for j in 0..w {
                let mut v = 0.0;
                if j + 1 < w {
                    v -= g.get(2 * c, i, j);
                }
                if j > 0 {
                    v += g.get(2 * c, i, j - 1);
                }
                if i + 1 < h {
                    v -= g.get(2 * c + 1, i, j);
                }
                if i > 0 {
                    v += g.get(2 * c + 1, i - 1, j);
                }
                out.set(c, i, j, v);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub tau: f64,
    pub iters: usize,
    /// Penalty on the cropped data split.
    pub rho_crop: f64,
    pub rho_nonneg: f64,
    pub rho_tv: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            tau: 1e-4,
            iters: 100,
            rho_crop: 1.0,
            rho_nonneg: 1.0,
            rho_tv: 1.0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || self.iters == 0 {
            return Err(Error::Config("ADMM needs tau >= 0 and at least one iteration".into()));
        }
        if !(self.rho_crop > 0.0 && self.rho_nonneg > 0.0 && self.rho_tv > 0.0) {
            return Err(Error::Config("ADMM penalties must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub measurement: RealGrid,
    /// PSF on the measurement grid; one channel, or one per measurement channel.
    pub psf: RealGrid,
    pub config: AdmmConfig,
}

#[derive(Debug, Clone)]
pub struct AdmmOutput {
    pub estimate: RealGrid,
    /// Per iteration: `[|Hx - v|, |Dx - u|, |x - w|]`, summed over channels.
    pub residuals: Vec<[f64; 3]>,
    /// Per iteration: `½|y - CHx₊|² + τ|Dx₊|₁` with `x₊ = max(x, 0)`.
    pub objective: Vec<f64>,
}

/// Padded-domain operators for one measurement size.
struct Operators {
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    r0: usize,
    c0: usize,
    fft: Fft2Plan,
    /// `|D̂|²` of the circular difference pair.
    dtd: Vec<f64>,
}

impl Operators {
    fn new(h: usize, w: usize) -> Self {
        let (ph, pw) = (fast_len(2 * h), fast_len(2 * w));
        let mut dtd = vec![0.0; ph * pw];
        for i in 0..ph {
            let a = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * i as f64 / ph as f64).cos();
            for j in 0..pw {
                let b = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * j as f64 / pw as f64).cos();
                dtd[i * pw + j] = a + b;
            }
        }
        Self {
            h,
            w,
            ph,
            pw,
            r0: (ph - h) / 2,
            c0: (pw - w) / 2,
            fft: Fft2Plan::new(ph, pw),
            dtd,
        }
    }

    fn n(&self) -> usize {
        self.ph * self.pw
    }

    /// Kernel spectrum with the PSF center `(h/2, w/2)` moved to the origin.
    fn kernel_spectrum(&self, psf: &[f64]) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.n()];
        let (ch, cw) = (self.h / 2, self.w / 2);
        for i in 0..self.h {
            let ti = (i + self.ph - ch) % self.ph;
            for j in 0..self.w {
                let tj = (j + self.pw - cw) % self.pw;
                buf[ti * self.pw + tj] = C64::new(psf[i * self.w + j], 0.0);
            }
        }
        self.fft.forward_inplace(&mut buf);
        buf
    }

    fn filter(&self, x: &[f64], spec: &[C64], conj: bool) -> Vec<f64> {
        let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fft.forward_inplace(&mut buf);
        for (a, k) in buf.iter_mut().zip(spec) {
            *a *= if conj { k.conj() } else { *k };
        }
        self.fft.inverse_inplace(&mut buf);
        buf.iter().map(|z| z.re).collect()
    }

    /// Circular forward differences `(horizontal, vertical)`.
    fn diff(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (ph, pw) = (self.ph, self.pw);
        let mut dh = vec![0.0; x.len()];
        let mut dv = vec![0.0; x.len()];
        for i in 0..ph {
            let ni = (i + 1) % ph;
            for j in 0..pw {
                let nj = (j + 1) % pw;
                let v = x[i * pw + j];
                dh[i * pw + j] = x[i * pw + nj] - v;
                dv[i * pw + j] = x[ni * pw + j] - v;
            }
        }
        (dh, dv)
    }

    fn diff_adjoint(&self, dh: &[f64], dv: &[f64]) -> Vec<f64> {
        let (ph, pw) = (self.ph, self.pw);
        let mut out = vec![0.0; dh.len()];
        for i in 0..ph {
            let pi = (i + ph - 1) % ph;
            for j in 0..pw {
                let pj = (j + pw - 1) % pw;
                let k = i * pw + j;
                out[k] = dh[i * pw + pj] - dh[k] + dv[pi * pw + j] - dv[k];
            }
        }
        out
    }

    fn in_window(&self, k: usize) -> bool {
        let (i, j) = (k / self.pw, k % self.pw);
        i >= self.r0 && i < self.r0 + self.h && j >= self.c0 && j < self.c0 + self.w
    }

    fn crop(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for i in 0..self.h {
            let row = (i + self.r0) * self.pw + self.c0;
            out.extend_from_slice(&x[row..row + self.w]);
        }
        out
    }

    fn uncrop(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for i in 0..self.h {
            let row = (i + self.r0) * self.pw + self.c0;
            out[row..row + self.w].copy_from_slice(&y[i * self.w..(i + 1) * self.w]);
        }
        out
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct ChannelTrace {
    estimate: Vec<f64>,
    residuals: Vec<[f64; 3]>,
    objective: Vec<f64>,
}

fn solve_channel(ops: &Operators, y: &[f64], psf: &[f64], cfg: &AdmmConfig) -> ChannelTrace {
    let n = ops.n();
    let (m1, m2, m3) = (cfg.rho_crop, cfg.rho_tv, cfg.rho_nonneg);
    let hspec = ops.kernel_spectrum(psf);
    let denom: Vec<f64> = hspec
        .iter()
        .zip(&ops.dtd)
        .map(|(k, d)| m1 * k.norm_sqr() + m2 * d + m3)
        .collect();
    let cty = ops.uncrop(y);
    let window: Vec<f64> = (0..n).map(|k| if ops.in_window(k) { 1.0 } else { 0.0 }).collect();

    let mut x = vec![0.0; n];
    let mut hx = vec![0.0; n];
    let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
    let mut xi = vec![0.0; n];
    let (mut eta_h, mut eta_v) = (vec![0.0; n], vec![0.0; n]);
    let mut rho = vec![0.0; n];
    let mut residuals = Vec::with_capacity(cfg.iters);
    let mut objective = Vec::with_capacity(cfg.iters);

    for _ in 0..cfg.iters {
        let t = cfg.tau / m2;
        let uh: Vec<f64> = (0..n).map(|k| soft(dh[k] + eta_h[k] / m2, t)).collect();
        let uv: Vec<f64> = (0..n).map(|k| soft(dv[k] + eta_v[k] / m2, t)).collect();
        let v: Vec<f64> = (0..n)
            .map(|k| (xi[k] + m1 * hx[k] + cty[k]) / (window[k] + m1))
            .collect();
        let w: Vec<f64> = (0..n).map(|k| (rho[k] / m3 + x[k]).max(0.0)).collect();

        let a: Vec<f64> = (0..n).map(|k| m1 * v[k] - xi[k]).collect();
        let ht = ops.filter(&a, &hspec, true);
        let bh: Vec<f64> = (0..n).map(|k| m2 * uh[k] - eta_h[k]).collect();
        let bv: Vec<f64> = (0..n).map(|k| m2 * uv[k] - eta_v[k]).collect();
        let dt = ops.diff_adjoint(&bh, &bv);
        let mut rhs: Vec<C64> = (0..n)
            .map(|k| C64::new(m3 * w[k] - rho[k] + dt[k] + ht[k], 0.0))
            .collect();
        ops.fft.forward_inplace(&mut rhs);
        rhs.iter_mut().zip(&denom).for_each(|(z, d)| *z /= d);
        ops.fft.inverse_inplace(&mut rhs);
        x = rhs.iter().map(|z| z.re).collect();

        hx = ops.filter(&x, &hspec, false);
        (dh, dv) = ops.diff(&x);
        for k in 0..n {
            xi[k] += m1 * (hx[k] - v[k]);
            eta_h[k] += m2 * (dh[k] - uh[k]);
            eta_v[k] += m2 * (dv[k] - uv[k]);
            rho[k] += m3 * (x[k] - w[k]);
        }
        residuals.push([
            norm(&hx, &v),
            (norm(&dh, &uh).powi(2) + norm(&dv, &uv).powi(2)).sqrt(),
            norm(&x, &w),
        ]);

        let xp: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        let fit = ops.crop(&ops.filter(&xp, &hspec, false));
        let (ph_, pv_) = ops.diff(&xp);
        let data = 0.5 * fit.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let tv: f64 = ph_.iter().chain(&pv_).map(|v| v.abs()).sum();
        objective.push(data + cfg.tau * tv);
    }

    let estimate = ops.crop(&x).into_iter().map(|v| v.max(0.0)).collect();
    ChannelTrace {
        estimate,
        residuals,
        objective,
    }
}

/// Run ADMM and keep the per-iteration residuals and objective values.
pub fn admm_tv_trace(p: &InverseProblem) -> Result<AdmmOutput> {
    p.config.validate()?;
    let y = &p.measurement;
    if (p.psf.height, p.psf.width) != (y.height, y.width) {
        return Err(dim_mismatch(
            "PSF for reconstruction",
            (y.height, y.width),
            (p.psf.height, p.psf.width),
        ));
    }
    if p.psf.channels != 1 && p.psf.channels != y.channels {
        return Err(dim_mismatch("PSF channels", y.channels, p.psf.channels));
    }
    let ops = Operators::new(y.height, y.width);
    let mut estimate = RealGrid::zeros(y.height, y.width, y.channels);
    estimate.pitch_m = y.pitch_m;
    let mut residuals = vec![[0.0; 3]; p.config.iters];
    let mut objective = vec![0.0; p.config.iters];
    for c in 0..y.channels {
        let kc = if p.psf.channels == 1 { 0 } else { c };
        let t = solve_channel(&ops, y.plane(c), p.psf.plane(kc), &p.config);
        estimate.plane_mut(c).copy_from_slice(&t.estimate);
        for (acc, r) in residuals.iter_mut().zip(&t.residuals) {
            for q in 0..3 {
                acc[q] += r[q];
            }
        }
        for (acc, o) in objective.iter_mut().zip(&t.objective) {
            *acc += o;
        }
    }
    Ok(AdmmOutput {
        estimate,
        residuals,
        objective,
    })
}

pub fn admm_tv(p: &InverseProblem) -> Result<RealGrid> {
    Ok(admm_tv_trace(p)?.estimate)
}

/// Peak signal-to-noise ratio in dB, with the peak taken from `reference`.
pub fn psnr(estimate: &RealGrid, reference: &RealGrid) -> Result<f64> {
    if estimate.dims() != reference.dims() {
        return Err(dim_mismatch("PSNR operands", reference.dims(), estimate.dims()));
    }
    let mse = estimate
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.data.len() as f64;
    let peak = reference.max();
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Scale `estimate` by the least-squares factor that best matches `reference`.
pub fn fit_scale(estimate: &RealGrid, reference: &RealGrid) -> RealGrid {
    let num: f64 = estimate.data.iter().zip(&reference.data).map(|(a, b)| a * b).sum();
    let den: f64 = estimate.data.iter().map(|a| a * a).sum();
    let s = if den > 0.0 { num / den } else { 0.0 };
    estimate.map(|v| v * s)
}

#[derive(Debug, Clone)]
pub struct SweepLevel {
    pub dims: (usize, usize),
    pub reconstructions: Vec<RealGrid>,
    pub psnr_db: Vec<f64>,
}

impl SweepLevel {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr_db.iter().sum::<f64>() / self.psnr_db.len().max(1) as f64
    }
}

/// Reconstruct every sensor image at each embedding size.
///
/// `sensor_images` are noiseless measurements on the PSF grid and `scenes`
/// the matching ground truth. At each size both the measurement and the PSF
/// are downsampled before solving; scores compare each reconstruction,
/// upsampled to the first (largest) size and scale-fitted, against the scene
/// downsampled to that size.
pub fn privacy_sweep(
    scenes: &[RealGrid],
    sensor_images: &[RealGrid],
    psf: &RealGrid,
    dims_list: &[(usize, usize)],
    config: &AdmmConfig,
) -> Result<Vec<SweepLevel>> {
    if scenes.len() != sensor_images.len() {
        return Err(dim_mismatch("scene count", sensor_images.len(), scenes.len()));
    }
    let &(rh, rw) = dims_list
        .first()
        .ok_or_else(|| Error::Config("privacy sweep needs at least one size".into()))?;
    if dims_list.windows(2).any(|d| d[1].0 * d[1].1 > d[0].0 * d[0].1) {
        return Err(Error::Config("privacy sweep sizes must be descending".into()));
    }
    let psf = if psf.channels > 1 { psf.channel_mean() } else { psf.clone() };
    let references: Vec<RealGrid> = scenes
        .iter()
        .map(|s| bilinear_resize(&s.channel_mean(), rh, rw))
        .collect();
    let mut levels = Vec::with_capacity(dims_list.len());
    for &(h, w) in dims_list {
        let psf_d = resample_psf(&psf, h, w)?;
        let mut recs = Vec::with_capacity(scenes.len());
        let mut scores = Vec::with_capacity(scenes.len());
        for (img, reference) in sensor_images.iter().zip(&references) {
            let y = bilinear_resize(&img.channel_mean(), h, w);
            let rec = admm_tv(&InverseProblem {
                measurement: y,
                psf: psf_d.clone(),
                config: *config,
            })?;
            let up = bilinear_resize(&rec, rh, rw);
            scores.push(psnr(&fit_scale(&up, reference), reference)?);
            recs.push(rec);
        }
        levels.push(SweepLevel {
            dims: (h, w),
            reconstructions: recs,
            psnr_db: scores,
        });
    }
    Ok(levels)
}
