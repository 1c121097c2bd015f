//! PPM (P6) and PFM writers for previews, plus a PFM reader for measured PSFs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::RealGrid;

/// Min-max normalize each channel-set of a grid to `[0, 1]`; constant grids map to 0.
pub fn min_max_normalize(g: &RealGrid) -> RealGrid {
    let (lo, hi) = (g.min(), g.max());
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return g.map(|_| 0.0);
    }
    g.map(|v| (v - lo) / span)
}

/// 8-bit binary PPM bytes. One-channel grids are written as gray, three-channel
/// grids as RGB; other channel counts use the channel mean.
pub fn encode_ppm(g: &RealGrid) -> Vec<u8> {
    let g = if g.channels == 1 || g.channels == 3 {
        min_max_normalize(g)
    } else {
        min_max_normalize(&g.channel_mean())
    };
    let mut out = format!("P6\n{} {}\n255\n", g.width, g.height).into_bytes();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for i in 0..g.height {
        for j in 0..g.width {
            for c in 0..3 {
                let ch = if g.channels == 3 { c } else { 0 };
                out.push(q(g.get(ch, i, j)));
            }
        }
    }
    out
}

pub fn write_ppm(path: impl AsRef<Path>, g: &RealGrid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(g)).map_err(|e| Error::io(path, e))
}

/// PFM bytes (`Pf` for one channel, `PF` for three), little-endian, rows stored bottom-up.
pub fn encode_pfm(g: &RealGrid) -> Result<Vec<u8>> {
    let tag = match g.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Format(format!("PFM supports 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", g.width, g.height).into_bytes();
    for i in (0..g.height).rev() {
        for j in 0..g.width {
            for c in 0..g.channels {
                out.extend_from_slice(&(g.get(c, i, j) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_pfm(path: impl AsRef<Path>, g: &RealGrid) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(g)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RealGrid> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PFM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match fields[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("bad PFM magic {other:?}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PFM dimension {s:?}")))
    };
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f64 = fields[3]
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    let little = scale < 0.0;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels * 4))
        .ok_or_else(|| Error::Format("PFM dimensions overflow".into()))?;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format("truncated PFM raster".into()))?;
    let mut g = RealGrid::zeros(h, w, channels);
    let mut it = raster.chunks_exact(4);
    for i in (0..h).rev() {
        for j in 0..w {
            for c in 0..channels {
                let b: [u8; 4] = it.next().expect("length checked").try_into().expect("4 bytes");
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                g.set(c, i, j, v as f64);
            }
        }
    }
    Ok(g)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<RealGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

/// Tile grids row-major into a sheet with `cols` columns and a one-pixel gutter.
/// Each tile is min-max normalized independently.
pub fn contact_sheet(tiles: &[RealGrid], cols: usize) -> Result<RealGrid> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::DimensionMismatch("contact sheet needs at least one tile".into()))?;
    let cols = cols.max(1).min(tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let (th, tw) = (first.height, first.width);
    let channels = if tiles.iter().all(|t| t.channels == 3) { 3 } else { 1 };
    let mut sheet = RealGrid::zeros(rows * (th + 1) - 1, cols * (tw + 1) - 1, channels);
    for (k, t) in tiles.iter().enumerate() {
        if (t.height, t.width) != (th, tw) {
            return Err(Error::DimensionMismatch(format!(
                "tile {k} is {}x{}, expected {th}x{tw}",
                t.height, t.width
            )));
        }
        let t = if channels == 3 { t.clone() } else { t.channel_mean() };
        let t = min_max_normalize(&t);
        let (oi, oj) = ((k / cols) * (th + 1), (k % cols) * (tw + 1));
        for c in 0..channels {
            for i in 0..th {
                for j in 0..tw {
                    sheet.set(c, oi + i, oj + j, t.get(c, i, j));
                }
            }
        }
    }
    Ok(sheet)
}
