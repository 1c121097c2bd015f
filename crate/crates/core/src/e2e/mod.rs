//! Experiment orchestration: encoder construction, dataset simulation,
//! joint training of the SLM and the classifier, evaluation and reports.

mod checkpoint;
mod data;
mod report;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use data::{example_rng, precompute_fixed_dataset, scene_for, EmbeddingSet, FixedDataset, Split};
pub use report::{summary_csv, EpochRecord, RunReport};
pub use train::{accuracy, evaluate, evaluate_checkpoint, train, train_on, Decoder};

pub use crate::learn::ClassifierChoice;

use crate::augment::TransformSpec;
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::learn::AdamConfig;
use crate::optics::{PsfModel, RGB_WAVELENGTHS_M};
use crate::simcam::SimConfig;
use crate::slm::{
    coded_aperture_field, load_measured_psf, resample_psf, MaskRaster, SlmGeometry, SlmState, CODED_APERTURE_D2_M,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    LensPsfFile,
    CodedAperture,
    DiffuserPsfFile,
    FixedSlmMeasuredFile,
    FixedSlmSimulated,
    LearnedSlm,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::LensPsfFile => "lens-psf-file",
            EncoderKind::CodedAperture => "coded-aperture",
            EncoderKind::DiffuserPsfFile => "diffuser-psf-file",
            EncoderKind::FixedSlmMeasuredFile => "fixed-slm-measured-file",
            EncoderKind::FixedSlmSimulated => "fixed-slm-simulated",
            EncoderKind::LearnedSlm => "learned-slm",
        }
    }

    pub fn reads_psf_file(self) -> bool {
        matches!(
            self,
            EncoderKind::LensPsfFile | EncoderKind::DiffuserPsfFile | EncoderKind::FixedSlmMeasuredFile
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub encoder: EncoderKind,
    pub classifier: ClassifierChoice,
    /// Measured PSF for the file-based encoders.
    pub psf_path: Option<PathBuf>,
    pub mnist_dir: PathBuf,
    /// Truncate the training split (all 60 000 when absent).
    pub n_train: Option<usize>,
    /// Truncate the test split (all 10 000 when absent).
    pub n_test: Option<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Decoder optimizer.
    pub adam: AdamConfig,
    /// Learning rate for the SLM weights.
    pub lr_encoder: f64,
    pub sim: SimConfig,
    pub transform: TransformSpec,
    /// Fraction of the sensor height and width exposed by the SLM crop.
    pub slm_coverage: f64,
    /// Where per-epoch checkpoints go; none are written when absent.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            encoder: EncoderKind::FixedSlmSimulated,
            classifier: ClassifierChoice::Logistic,
            psf_path: None,
            mnist_dir: PathBuf::from("data/mnist"),
            n_train: None,
            n_test: None,
            epochs: 50,
            batch: 200,
            seed: 0,
            adam: AdamConfig::default(),
            lr_encoder: 1e-2,
            sim: SimConfig::default(),
            transform: TransformSpec::default(),
            slm_coverage: 0.8,
            checkpoint_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.transform.validate()?;
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if self.encoder.reads_psf_file() && self.psf_path.is_none() {
            return Err(Error::Config(format!(
                "encoder {} needs psf_path",
                self.encoder.name()
            )));
        }
        if !(self.slm_coverage > 0.0 && self.slm_coverage <= 1.0) {
            return Err(Error::Config("slm_coverage must lie in (0, 1]".into()));
        }
        if self.encoder == EncoderKind::LearnedSlm && !self.sim.grayscale {
            return Err(Error::Config("learned-slm training supports grayscale simulation only".into()));
        }
        if !(self.lr_encoder >= 0.0) || !(self.adam.lr >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Simulation settings actually used by the encoder; the coded aperture
    /// sits much closer to the sensor.
    pub fn effective_sim(&self) -> SimConfig {
        let mut sim = self.sim.clone();
        if self.encoder == EncoderKind::CodedAperture {
            sim.d2_m = CODED_APERTURE_D2_M;
        }
        sim
    }

    pub fn slm_geometry(&self) -> SlmGeometry {
        SlmGeometry::st7735r(&self.sim.sensor, self.slm_coverage)
    }

    /// Initial SLM state; the seed is shared with the fixed random baseline.
    pub fn initial_slm(&self) -> SlmState {
        SlmState::random(
            self.slm_geometry(),
            self.seed,
            self.encoder == EncoderKind::LearnedSlm,
        )
    }

    pub fn psf_model(&self) -> Result<PsfModel> {
        let sim = self.effective_sim();
        let (h, w) = sim.psf_dims;
        PsfModel::new(h, w, sim.psf_pitch_m(), sim.d1_m, sim.d2_m, &RGB_WAVELENGTHS_M)
    }

    pub fn mask_raster(&self) -> Result<MaskRaster> {
        let sim = self.effective_sim();
        let (h, w) = sim.psf_dims;
        MaskRaster::new(&self.slm_geometry(), h, w, sim.psf_pitch_m())
    }
}

/// RGB PSF of an SLM state on the experiment's PSF grid.
pub fn slm_psf(cfg: &ExperimentConfig, state: &SlmState) -> Result<RealGrid> {
    let model = cfg.psf_model()?;
    let raster = cfg.mask_raster()?;
    let w = state.weights();
    let masks: Vec<_> = (0..RGB_WAVELENGTHS_M.len())
        .map(|c| raster.rasterize(&w, Some(c)))
        .collect();
    model.psf(&masks)
}

/// RGB PSF of the encoder described by `cfg` (the initial PSF for the learned SLM).
pub fn encoder_psf(cfg: &ExperimentConfig) -> Result<RealGrid> {
    let sim = cfg.effective_sim();
    let (h, w) = sim.psf_dims;
    match cfg.encoder {
        EncoderKind::CodedAperture => {
            let model = cfg.psf_model()?;
            model.psf(&[coded_aperture_field(h, w, sim.psf_pitch_m())])
        }
        EncoderKind::FixedSlmSimulated | EncoderKind::LearnedSlm => slm_psf(cfg, &cfg.initial_slm()),
        EncoderKind::LensPsfFile | EncoderKind::DiffuserPsfFile | EncoderKind::FixedSlmMeasuredFile => {
            let path = cfg.psf_path.as_ref().expect("validated");
            let psf = load_measured_psf(path)?;
            let mut out = resample_psf(&psf, h, w)?;
            out.pitch_m = Some(sim.psf_pitch_m());
            Ok(out)
        }
    }
}

/// Stable 64-bit FNV-1a hash of the serialized config.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let s = serde_json::to_string(cfg).expect("config serializes");
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            encoder: EncoderKind::CodedAperture,
            classifier: ClassifierChoice::Fcnn800,
            ..ExperimentConfig::default()
        };
        let s = cfg.to_json();
        assert!(s.contains("\"coded-aperture\"") && s.contains("\"fcnn800\""));
        assert_eq!(ExperimentConfig::from_json(&s).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = ExperimentConfig::from_json(r#"{"epoch": 3}"#).unwrap_err();
        assert_eq!(err.class(), crate::error::ErrorClass::Config);
    }

    #[test]
    fn file_encoder_needs_path() {
        let cfg = ExperimentConfig {
            encoder: EncoderKind::LensPsfFile,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn coded_aperture_uses_short_distance() {
        let cfg = ExperimentConfig {
            encoder: EncoderKind::CodedAperture,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.effective_sim().d2_m, 0.5e-3);
    }
}
