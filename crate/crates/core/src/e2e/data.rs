use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ExperimentConfig;
use crate::augment::transform_example;
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::io::{DigitSet, MnistSplits};
use crate::simcam::{SimConfig, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Independent generator for one `(split, example, purpose)` triple.
pub fn example_rng(seed: u64, split: Split, index: usize, purpose: u32) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8] = split as u8;
    s[12..16].copy_from_slice(&purpose.to_le_bytes());
    s[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(s)
}

pub(crate) const PURPOSE_TRANSFORM: u32 = 0;
pub(crate) const PURPOSE_NOISE: u32 = 1;

/// Transformed scene on the PSF grid for example `index` of `split`.
pub fn scene_for(cfg: &ExperimentConfig, sim: &SimConfig, digits: &DigitSet, split: Split, index: usize) -> Result<RealGrid> {
    let mut rng = example_rng(cfg.seed, split, index, PURPOSE_TRANSFORM);
    transform_example(&digits.image(index), sim, &cfg.transform, &mut rng)
}

/// Flattened embeddings, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub x: Vec<f64>,
    pub labels: Vec<u8>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Gather rows `idx` into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<u8>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.x.len() as f64;
        let m = self.x.iter().sum::<f64>() / n;
        let v = self.x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    pub fn normalize(&mut self, mean: f64, std: f64) {
        self.x.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

/// Pre-simulated embeddings for a fixed encoder, normalized by training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDataset {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub mean: f64,
    pub std: f64,
}

pub(crate) fn simulate_split(
    cfg: &ExperimentConfig,
    sim: &Simulator,
    digits: &DigitSet,
    split: Split,
    noise_epoch: Option<usize>,
) -> Result<EmbeddingSet> {
    let rows: Vec<Vec<f64>> = (0..digits.len())
        .into_par_iter()
        .map(|i| {
            let scene = scene_for(cfg, &sim.cfg, digits, split, i)?;
            let purpose = PURPOSE_NOISE + noise_epoch.map_or(0, |e| e as u32 + 1);
            let mut rng = example_rng(cfg.seed, split, i, purpose);
            Ok(sim.simulate_scene(&scene, None, &mut rng)?.grid.data)
        })
        .collect::<Result<_>>()?;
    let dim = rows.first().map_or(0, |r| r.len());
    Ok(EmbeddingSet {
        dim,
        x: rows.concat(),
        labels: digits.labels.clone(),
    })
}

/// Simulate every example once through a fixed PSF and normalize both splits
/// by the global mean and standard deviation of the training embeddings.
pub fn precompute_fixed_dataset(cfg: &ExperimentConfig, splits: &MnistSplits, psf: &RealGrid) -> Result<FixedDataset> {
    let sim = Simulator::new(cfg.effective_sim(), psf)?;
    let mut train = simulate_split(cfg, &sim, &splits.train, Split::Train, None)?;
    let mut test = simulate_split(cfg, &sim, &splits.test, Split::Test, None)?;
    let (mean, std) = train.mean_std();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Numeric("training embeddings have zero variance".into()));
    }
    train.normalize(mean, std);
    test.normalize(mean, std);
    Ok(FixedDataset { train, test, mean, std })
}
