//! On-disk formats: clouds as binary PLY, masks and images as Netpbm,
//! feature maps as CGCF, and a JSON manifest tying a dataset directory
//! together.

pub mod cgcf;
pub mod manifest;
pub mod ply;
pub mod pnm;

pub use cgcf::{load_cgcf, read_cgcf, save_cgcf, write_cgcf};
pub use manifest::{load_dataset, write_dataset, CameraRecord, LoadedDataset, Manifest, Split, ViewRecord};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyCloud};
pub use pnm::{load_pgm16, load_ppm, read_pgm16, read_ppm, save_pgm16, save_ppm, write_pgm16, write_ppm};

use std::io::Read;

use crate::error::{Error, Result};

/// Reads one whitespace-delimited header token, skipping `#` comments.
pub(crate) fn header_token<R: Read>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => loop {
                if r.read(&mut byte)? == 0 || byte[0] == b'\n' {
                    break;
                }
            },
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("header is not ASCII".into()))
}

pub(crate) fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Format(format!("bad {what}: {tok:?}")))
}
