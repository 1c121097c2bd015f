//! Reverse-mode differentiation, classifier heads, cross-entropy and Adam.

pub mod adam;
pub mod classifier;
pub mod loss;
pub mod tape;

use std::sync::Arc;

pub use adam::{AdamConfig, AdamState};
pub use classifier::{argmax_rows, BatchNorm1d, Classifier, ClassifierChoice, Linear, Mode, NUM_CLASSES};
pub use loss::{cross_entropy, softmax};
pub use tape::{backward_optics, Gradients, NodeId, Tape, Value};

use crate::error::Result;
use crate::grid::{Fft2Plan, C64};
use crate::optics::PsfModel;
use crate::slm::MaskRaster;

/// θ-independent pieces of the differentiable PSF simulation, shared across batches.
#[derive(Debug, Clone)]
pub struct PsfGraph {
    pub raster: Arc<MaskRaster>,
    pub sources: Vec<Arc<Vec<C64>>>,
    pub transfers: Vec<Arc<Vec<C64>>>,
    pub fft: Arc<Fft2Plan>,
    /// Apply the per-sub-pixel color filters (requires one wavelength per color).
    pub color_filters: bool,
}

impl PsfGraph {
    pub fn new(model: &PsfModel, raster: MaskRaster) -> Self {
        Self {
            color_filters: model.wavelengths_m.len() == 3,
            raster: Arc::new(raster),
            sources: model.sources.iter().map(|s| Arc::new(s.data.clone())).collect(),
            transfers: model.transfers.iter().map(|t| Arc::new(t.data.clone())).collect(),
            fft: Arc::new(model.fft.clone()),
        }
    }

    pub fn channels(&self) -> usize {
        self.sources.len()
    }

    /// Record `theta → sigmoid → mask → field → |U₂|² → unit-sum` per wavelength.
    pub fn record(&self, tape: &mut Tape, theta: NodeId) -> Result<Vec<NodeId>> {
        let w = tape.sigmoid(theta);
        (0..self.channels())
            .map(|c| {
                let channel = self.color_filters.then_some(c);
                let m = tape.rasterize(w, self.raster.clone(), channel);
                let u1 = tape.mul_const(m, self.sources[c].clone());
                let f = tape.fft2(u1, self.fft.clone());
                let f = tape.mul_const(f, self.transfers[c].clone());
                let u2 = tape.ifft2(f, self.fft.clone());
                let p = tape.squared_modulus(u2);
                tape.normalize_sum(p, c)
            })
            .collect()
    }

    /// Record the channel-averaged (grayscale) PSF.
    pub fn record_gray(&self, tape: &mut Tape, theta: NodeId) -> Result<NodeId> {
        let chans = self.record(tape, theta)?;
        Ok(tape.mean(&chans))
    }
}
