//! `LCT1` tensor files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"LCT1" | u8 dtype (0 = f64, 1 = complex f64 pair) | u8 rank | u32 dims[rank]
//!        | f64 pitch_m (0.0 = absent) | payload, row-major
//! ```
//!
//! Real grids are written with dims `[channels, height, width]`; complex grids
//! with `[height, width]`. Rank-2 real tensors read back as one channel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid, C64};

pub const MAGIC: &[u8; 4] = b"LCT1";

const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

/// Upper bound on element count accepted when decoding (16 Gi elements).
const MAX_ELEMENTS: u64 = 1 << 34;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
    pub pitch_m: Option<f64>,
}

impl Tensor {
    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&dims, data.len())?;
        Ok(Self {
            dims,
            data: TensorData::Real(data),
            pitch_m: None,
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Some(v),
            TensorData::Complex(_) => None,
        }
    }

    pub fn into_real(self) -> Result<Vec<f64>> {
        match self.data {
            TensorData::Real(v) => Ok(v),
            TensorData::Complex(_) => Err(Error::Format("expected a real tensor".into())),
        }
    }

    pub fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        let (dtype, _) = match &self.data {
            TensorData::Real(_) => (DTYPE_REAL, 8),
            TensorData::Complex(_) => (DTYPE_COMPLEX, 16),
        };
        w.write_all(MAGIC)?;
        w.write_all(&[dtype, self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.pitch_m.unwrap_or(0.0).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.len() * 16);
        match &self.data {
            TensorData::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::Complex(v) => v.iter().for_each(|z| {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        w.write_all(&buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut cur, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected LCT1")));
        }
        let mut head = [0u8; 2];
        read_exact(&mut cur, &mut head)?;
        let (dtype, rank) = (head[0], head[1] as usize);
        let elem_bytes = match dtype {
            DTYPE_REAL => 8,
            DTYPE_COMPLEX => 16,
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        };
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for _ in 0..rank {
            let mut b = [0u8; 4];
            read_exact(&mut cur, &mut b)?;
            let d = u32::from_le_bytes(b);
            count = count
                .checked_mul(d as u64)
                .filter(|&c| c <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
            dims.push(d as usize);
        }
        let mut p = [0u8; 8];
        read_exact(&mut cur, &mut p)?;
        let pitch = f64::from_le_bytes(p);
        let need = count as usize * elem_bytes;
        if cur.len() != need {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {need}",
                cur.len()
            )));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        let data = if dtype == DTYPE_REAL {
            TensorData::Real(cur.chunks_exact(8).map(f).collect())
        } else {
            TensorData::Complex(
                cur.chunks_exact(16)
                    .map(|c| C64::new(f(&c[..8]), f(&c[8..])))
                    .collect(),
            )
        };
        Ok(Self {
            dims,
            data,
            pitch_m: (pitch != 0.0).then_some(pitch),
        })
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Format("truncated tensor header".into()))
}

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    let n: usize = dims.iter().product();
    if n != len {
        return Err(Error::DimensionMismatch(format!(
            "dims {dims:?} imply {n} elements, payload has {len}"
        )));
    }
    Ok(())
}

impl From<&RealGrid> for Tensor {
    fn from(g: &RealGrid) -> Self {
        Tensor {
            dims: vec![g.channels, g.height, g.width],
            data: TensorData::Real(g.data.clone()),
            pitch_m: g.pitch_m,
        }
    }
}

impl From<&ComplexGrid> for Tensor {
    fn from(g: &ComplexGrid) -> Self {
        Tensor {
            dims: vec![g.height, g.width],
            data: TensorData::Complex(g.data.clone()),
            pitch_m: Some(g.pitch_m),
        }
    }
}

impl TryFrom<Tensor> for RealGrid {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let (c, h, w) = match t.dims[..] {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::Format(format!(
                    "rank-{} tensor is not a real grid",
                    t.dims.len()
                )))
            }
        };
        let pitch = t.pitch_m;
        let mut g = RealGrid::from_vec(h, w, c, t.into_real()?)?;
        g.pitch_m = pitch;
        Ok(g)
    }
}

impl TryFrom<Tensor> for ComplexGrid {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let [h, w] = t.dims[..] else {
            return Err(Error::Format("complex grid must be rank 2".into()));
        };
        match t.data {
            TensorData::Complex(v) => ComplexGrid::from_vec(h, w, t.pitch_m.unwrap_or(0.0), v),
            TensorData::Real(_) => Err(Error::Format("expected a complex tensor".into())),
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    tensor.encode(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

pub fn write_real_grid(path: impl AsRef<Path>, g: &RealGrid) -> Result<()> {
    write_tensor(path, &Tensor::from(g))
}

pub fn read_real_grid(path: impl AsRef<Path>) -> Result<RealGrid> {
    RealGrid::try_from(read_tensor(path)?)
}

pub fn write_complex_grid(path: impl AsRef<Path>, g: &ComplexGrid) -> Result<()> {
    write_tensor(path, &Tensor::from(g))
}

pub fn read_complex_grid(path: impl AsRef<Path>) -> Result<ComplexGrid> {
    ComplexGrid::try_from(read_tensor(path)?)
}
