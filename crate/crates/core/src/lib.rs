//! Simulation and end-to-end optimization of programmable lensless cameras.
//!
//! The crate models incoherent, polychromatic image formation through an
//! amplitude spatial light modulator (SLM) placed a few millimetres in front of
//! a sensor, trains the SLM pattern jointly with a digital classifier, and
//! implements a TV-regularized ADMM reconstruction used to probe how much of
//! the scene can be recovered from low-resolution sensor embeddings.
//!
//! Module map:
//!
//! * [`grid`]: real/complex planes, FFTs, linear convolution, bilinear resampling
//! * [`io`]: `LCT1` tensors, PPM/PFM previews, MNIST IDX ingestion
//! * [`optics`]: spherical sources, band-limited angular spectrum propagation, intensity PSFs
//! * [`slm`]: ST7735R geometry, mask rasterization, MLS coded apertures, measured PSFs
//! * [`simcam`]: scene rescaling, convolution, downsampling and SNR-calibrated noise
//! * [`augment`]: shift / rescale / rotate / perspective scene transforms
//! * [`recon`]: finite differences and the ADMM-TV solver, privacy sweeps
//! * [`learn`]: reverse-mode tape, classifier heads, cross-entropy, Adam
//! * [`e2e`]: experiment configs, dataset precomputation, training and evaluation

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod e2e;
pub mod error;
pub mod grid;
pub mod io;
pub mod learn;
pub mod optics;
pub mod recon;
pub mod simcam;
pub mod slm;

pub use error::{Error, ErrorClass, Result};
pub use grid::{ComplexGrid, RealGrid, C64};

pub mod prelude {
    pub use crate::augment::{TransformKind, TransformSpec};
    pub use crate::e2e::{ClassifierChoice, EncoderKind, ExperimentConfig, RunReport};
    pub use crate::error::{Error, ErrorClass, Result};
    pub use crate::grid::{bilinear_resize, linear_convolve, ComplexGrid, RealGrid, C64};
    pub use crate::optics::{intensity_psf, PropagationPlan, SourceSpec, RGB_WAVELENGTHS_M};
    pub use crate::recon::{admm_tv, AdmmConfig, InverseProblem};
    pub use crate::simcam::{SimConfig, Simulator};
    pub use crate::slm::{SensorGeometry, SlmGeometry, SlmState};
}
