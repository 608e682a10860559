//! Feature maps: the magic `CGCF`, then H, W, D as little-endian u32, then
//! H·W·D little-endian f32 values in row-major pixel order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::FeatureMap;

pub const MAGIC: &[u8; 4] = b"CGCF";

pub fn write_cgcf<W: Write>(w: &mut W, fm: &FeatureMap) -> Result<()> {
    let dims = [fm.height, fm.width, fm.dim]
        .map(|d| u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32"))));
    let mut buf = Vec::with_capacity(16 + fm.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    for d in dims {
        buf.extend_from_slice(&d?.to_le_bytes());
    }
    for &x in &fm.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Opacity is not stored; the loaded map's `alpha` is zero.
pub fn read_cgcf<R: Read>(r: &mut R) -> Result<FeatureMap> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("CGCF header is truncated".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("missing CGCF magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (height, width, dim) = (field(1), field(2), field(3));
    let len = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| Error::Format("CGCF dimensions overflow".into()))?;
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("CGCF data is truncated".into()))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(FeatureMap {
        width,
        height,
        dim,
        data,
        alpha: vec![0.0; width * height],
    })
}

pub fn save_cgcf(path: impl AsRef<Path>, fm: &FeatureMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cgcf(&mut w, fm)?;
    w.flush()?;
    Ok(())
}

pub fn load_cgcf(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_cgcf(&mut BufReader::new(File::open(path)?))
}
