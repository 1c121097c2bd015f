//! On-disk formats: `LCT1` tensors, PPM/PFM previews and MNIST IDX files.

pub mod idx;
pub mod netpbm;
pub mod tensor;

pub use idx::{ingest_mnist, DigitSet, MnistSplits};
pub use netpbm::{contact_sheet, read_pfm, write_pfm, write_ppm};
pub use tensor::{
    read_complex_grid, read_real_grid, read_tensor, write_complex_grid, write_real_grid,
    write_tensor, Tensor, TensorData,
};
