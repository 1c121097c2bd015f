//! Scene-to-sensor simulation: object-height rescaling, PSF convolution,
//! sensor downsampling and SNR-calibrated shot noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{bilinear_resize, center_pad, ConvPlan, RealGrid, Resizer, C64};
use crate::slm::SensorGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Scene-to-mask distance.
    pub d1_m: f64,
    /// Mask-to-sensor distance.
    pub d2_m: f64,
    pub object_height_m: f64,
    /// Target SNR in dB; `None` disables noise.
    pub snr_db: Option<f64>,
    /// `(rows, cols)` of the PSF / scene grid, spanning the full sensor.
    pub psf_dims: (usize, usize),
    /// `(rows, cols)` of the sensor embedding.
    pub embedding_dims: (usize, usize),
    pub sensor: SensorGeometry,
    /// Convolve with the channel-averaged PSF.
    pub grayscale: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d1_m: 0.40,
            d2_m: 0.004,
            object_height_m: 0.12,
            snr_db: Some(40.0),
            psf_dims: (95, 127),
            embedding_dims: (24, 32),
            sensor: SensorGeometry::imx477(),
            grayscale: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d2_m > 0.0 && self.d1_m > self.d2_m) {
            return Err(Error::Config(format!(
                "distances must satisfy d1 > d2 > 0 (d1 = {}, d2 = {})",
                self.d1_m, self.d2_m
            )));
        }
        if !(self.object_height_m > 0.0) {
            return Err(Error::Config("object height must be positive".into()));
        }
        let (ph, pw) = self.psf_dims;
        let (eh, ew) = self.embedding_dims;
        if ph == 0 || pw == 0 || eh == 0 || ew == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.snr_db.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("SNR must be finite (use null to disable noise)".into()));
        }
        Ok(())
    }

    /// Magnification magnitude `d2 / d1`.
    pub fn magnification(&self) -> f64 {
        self.d2_m / self.d1_m
    }

    /// Pitch of the PSF grid, taken from the sensor height.
    pub fn psf_pitch_m(&self) -> f64 {
        self.sensor.extent().0 / self.psf_dims.0 as f64
    }
}

/// Height and width of the scene region imaged onto the full sensor.
pub fn scene_extent(cfg: &SimConfig) -> (f64, f64) {
    let (h, w) = cfg.sensor.extent();
    let m = cfg.magnification();
    (h / m, w / m)
}

/// Object height in PSF-grid pixels.
pub fn object_height_px(cfg: &SimConfig, object_height_m: f64) -> usize {
    let (h_scene, _) = scene_extent(cfg);
    ((object_height_m * cfg.psf_dims.0 as f64 / h_scene).round() as usize).max(1)
}

/// Resize `img` so it spans `object_height_m` of the scene and zero-pad it,
/// centered, to the PSF grid.
pub fn rescale_to_height(img: &RealGrid, cfg: &SimConfig, object_height_m: f64) -> Result<RealGrid> {
    let (h_scene, _) = scene_extent(cfg);
    if object_height_m > h_scene * (1.0 + 1e-12) {
        return Err(Error::OutOfField {
            object_m: object_height_m,
            scene_m: h_scene,
        });
    }
    let (ph, pw) = cfg.psf_dims;
    let hp = object_height_px(cfg, object_height_m).min(ph);
    let scale = hp as f64 / img.height as f64;
    let wp = ((img.width as f64 * scale).round() as usize).clamp(1, pw);
    let resized = if (hp, wp) == (img.height, img.width) {
        img.clone()
    } else {
        bilinear_resize(img, hp, wp)
    };
    let mut out = center_pad(&resized, ph, pw);
    out.pitch_m = Some(cfg.psf_pitch_m());
    Ok(out)
}

pub fn rescale_to_psf(img: &RealGrid, cfg: &SimConfig) -> Result<RealGrid> {
    rescale_to_height(img, cfg, cfg.object_height_m)
}

/// Noise-scaling factor `k` for a target SNR.
pub fn noise_scale(signal_var: f64, noise_var: f64, snr_db: f64) -> f64 {
    (signal_var / (noise_var * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Zero-mean additive noise realizing `snr_db` against `img`.
///
/// Poisson counts are drawn with rates equal to the image scaled to mean 10,
/// mean-centered, and scaled by [`noise_scale`].
pub fn noise_term(img: &RealGrid, snr_db: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let signal_var = img.variance();
    if !(signal_var > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    let mean = img.mean();
    let rate_scale = if mean > 0.0 { 10.0 / mean } else { 0.0 };
    let counts: Vec<f64> = img
        .data
        .iter()
        .map(|&v| {
            let rate = v * rate_scale;
            if rate > 0.0 && rate.is_finite() {
                Poisson::new(rate).map(|p| p.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let n = counts.len() as f64;
    let cm = counts.iter().sum::<f64>() / n;
    let noise_var = counts.iter().map(|c| (c - cm) * (c - cm)).sum::<f64>() / n;
    if noise_var == 0.0 {
        return Ok(vec![0.0; counts.len()]);
    }
    let k = noise_scale(signal_var, noise_var, snr_db);
    Ok(counts.iter().map(|c| k * (c - cm)).collect())
}

pub fn add_noise(img: &RealGrid, snr_db: Option<f64>, rng: &mut impl Rng) -> Result<RealGrid> {
    let Some(t) = snr_db else {
        return Ok(img.clone());
    };
    let noise = noise_term(img, t, rng)?;
    let mut out = img.clone();
    out.data.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    Ok(out)
}

/// Realized SNR in dB of `noisy` against `clean`.
pub fn realized_snr_db(clean: &RealGrid, noisy: &RealGrid) -> f64 {
    let n = clean.data.len() as f64;
    let diff: Vec<f64> = noisy.data.iter().zip(&clean.data).map(|(a, b)| a - b).collect();
    let dm = diff.iter().sum::<f64>() / n;
    let nv = diff.iter().map(|d| (d - dm) * (d - dm)).sum::<f64>() / n;
    10.0 * (clean.variance() / nv).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub grid: RealGrid,
    pub label: Option<u8>,
}

/// Repeated scene-to-sensor simulation with one PSF.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimConfig,
    conv: ConvPlan,
    kernel_specs: Vec<Vec<C64>>,
    resizer: Resizer,
}

impl Simulator {
    pub fn new(cfg: SimConfig, psf: &RealGrid) -> Result<Self> {
        cfg.validate()?;
        if (psf.height, psf.width) != cfg.psf_dims {
            return Err(dim_mismatch("PSF", cfg.psf_dims, (psf.height, psf.width)));
        }
        let kernel = if cfg.grayscale && psf.channels > 1 {
            psf.channel_mean()
        } else {
            psf.clone()
        };
        let (ph, pw) = cfg.psf_dims;
        let conv = ConvPlan::new(ph, pw);
        let kernel_specs = (0..kernel.channels).map(|c| conv.spectrum(kernel.plane(c))).collect();
        let (eh, ew) = cfg.embedding_dims;
        Ok(Self {
            resizer: Resizer::new(ph, pw, eh, ew),
            cfg,
            conv,
            kernel_specs,
        })
    }

    pub fn kernel_channels(&self) -> usize {
        self.kernel_specs.len()
    }

    /// Noiseless sensor image of a scene already on the PSF grid, before downsampling.
    pub fn sensor_image(&self, scene: &RealGrid) -> Result<RealGrid> {
        if (scene.height, scene.width) != self.cfg.psf_dims {
            return Err(dim_mismatch(
                "scene",
                self.cfg.psf_dims,
                (scene.height, scene.width),
            ));
        }
        let kc = self.kernel_specs.len();
        if scene.channels != 1 && scene.channels != kc && kc != 1 {
            return Err(dim_mismatch("scene channels", kc, scene.channels));
        }
        let channels = scene.channels.max(kc);
        let planes: Vec<RealGrid> = (0..channels)
            .map(|c| {
                let s = scene.plane(if scene.channels == 1 { 0 } else { c });
                let k = &self.kernel_specs[if kc == 1 { 0 } else { c }];
                let p = self.conv.convolve_with_spectrum(s, k);
                RealGrid::from_plane(scene.height, scene.width, p).expect("plane size")
            })
            .collect();
        let mut out = RealGrid::stack(&planes)?;
        out.pitch_m = scene.pitch_m;
        Ok(out)
    }

    /// Noiseless embedding of a scene on the PSF grid.
    pub fn clean_embedding(&self, scene: &RealGrid) -> Result<RealGrid> {
        let sensor = self.sensor_image(scene)?;
        let (eh, ew) = self.cfg.embedding_dims;
        let mut data = Vec::with_capacity(eh * ew * sensor.channels);
        for c in 0..sensor.channels {
            data.extend(self.resizer.apply(sensor.plane(c)));
        }
        RealGrid::from_vec(eh, ew, sensor.channels, data)
    }

    /// Rescale, convolve, downsample and add noise.
    pub fn simulate(&self, img: &RealGrid, label: Option<u8>, rng: &mut impl Rng) -> Result<Embedding> {
        let scene = rescale_to_psf(img, &self.cfg)?;
        self.simulate_scene(&scene, label, rng)
    }

    pub fn simulate_scene(&self, scene: &RealGrid, label: Option<u8>, rng: &mut impl Rng) -> Result<Embedding> {
        let clean = self.clean_embedding(scene)?;
        let grid = match self.cfg.snr_db {
            Some(_) if clean.variance() == 0.0 => clean,
            snr => add_noise(&clean, snr, rng)?,
        };
        Ok(Embedding { grid, label })
    }
}

/// One-shot simulation of a single example.
pub fn simulate_example(img: &RealGrid, psf: &RealGrid, cfg: &SimConfig, rng: &mut impl Rng) -> Result<Embedding> {
    Simulator::new(cfg.clone(), psf)?.simulate(img, None, rng)
}
