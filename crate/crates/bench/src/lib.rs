//! Shared fixtures for the criterion benches.

use lenscoder::e2e::ExperimentConfig;
use lenscoder::grid::RealGrid;

/// Desk-scale fixed-SLM experiment used by the optics benches.
pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

/// Centered square of ones on an `h x w` grid.
pub fn square_scene(h: usize, w: usize, side: usize) -> RealGrid {
    let mut g = RealGrid::zeros(h, w, 1);
    let (i0, j0) = ((h - side) / 2, (w - side) / 2);
    for i in i0..i0 + side {
        for j in j0..j0 + side {
            g.set(0, i, j, 1.0);
        }
    }
    g
}
