//! 16-bit PGM segment masks and 8-bit PPM color images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{header_token, parse_num};
use crate::error::{Error, Result};
use crate::scene::{Image, SegmentMask};

/// Binary PGM with maxval 65535; samples are big-endian as Netpbm requires.
pub fn write_pgm16<W: Write>(w: &mut W, mask: &SegmentMask) -> Result<()> {
    write!(w, "P5\n{} {}\n65535\n", mask.width, mask.height)?;
    let mut buf = Vec::with_capacity(mask.labels.len() * 2);
    for &l in &mask.labels {
        buf.extend_from_slice(&l.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pgm16<R: Read>(r: &mut R) -> Result<SegmentMask> {
    if header_token(r)? != "P5" {
        return Err(Error::Format("not a binary PGM".into()));
    }
    let width: usize = parse_num(&header_token(r)?, "width")?;
    let height: usize = parse_num(&header_token(r)?, "height")?;
    let maxval: u32 = parse_num(&header_token(r)?, "maxval")?;
    if maxval != 65535 {
        return Err(Error::Format(format!("expected maxval 65535, found {maxval}")));
    }
    let mut buf = vec![0u8; width * height * 2];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("PGM pixel data is truncated".into()))?;
    let labels = buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(SegmentMask { width, height, labels })
}

fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM with maxval 255; channels are clamped to [0, 1] and rounded.
pub fn write_ppm<W: Write>(w: &mut W, img: &Image) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.data.iter().map(|&x| to_byte(x)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_ppm<R: Read>(r: &mut R) -> Result<Image> {
    if header_token(r)? != "P6" {
        return Err(Error::Format("not a binary PPM".into()));
    }
    let width: usize = parse_num(&header_token(r)?, "width")?;
    let height: usize = parse_num(&header_token(r)?, "height")?;
    let maxval: u32 = parse_num(&header_token(r)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("expected maxval 255, found {maxval}")));
    }
    let mut buf = vec![0u8; width * height * 3];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("PPM pixel data is truncated".into()))?;
    Ok(Image {
        width,
        height,
        data: buf.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn save_pgm16(path: impl AsRef<Path>, mask: &SegmentMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm16(&mut w, mask)?;
    w.flush()?;
    Ok(())
}

pub fn load_pgm16(path: impl AsRef<Path>) -> Result<SegmentMask> {
    read_pgm16(&mut BufReader::new(File::open(path)?))
}

pub fn save_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    read_ppm(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_byte_order() {
        let mask = SegmentMask {
            width: 2,
            height: 1,
            labels: vec![1, 0x0203],
        };
        let mut out = Vec::new();
        write_pgm16(&mut out, &mask).unwrap();
        assert_eq!(&out[..], b"P5\n2 1\n65535\n\x00\x01\x02\x03");
        assert_eq!(read_pgm16(&mut &out[..]).unwrap(), mask);
    }

    #[test]
    fn pgm_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n1 1\n65535\n\x00\x07";
        assert_eq!(read_pgm16(&mut &bytes[..]).unwrap().labels, vec![7]);
    }

    #[test]
    fn truncated_data_is_a_format_error() {
        let bytes = b"P5\n2 2\n65535\n\x00\x01";
        assert!(matches!(read_pgm16(&mut &bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn ppm_quantizes() {
        let img = Image {
            width: 1,
            height: 1,
            data: vec![-0.5, 0.5, 2.0],
        };
        let mut out = Vec::new();
        write_ppm(&mut out, &img).unwrap();
        assert_eq!(&out[out.len() - 3..], &[0, 128, 255]);
        let back = read_ppm(&mut &out[..]).unwrap();
        assert_eq!(back.data, vec![0.0, 128.0 / 255.0, 1.0]);
    }
}
