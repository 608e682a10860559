//! Gaussian clouds as binary little-endian PLY.
//!
//! One vertex per Gaussian: `x y z`, `f_dc_0..2` (color, stored directly),
//! `opacity` (pre-sigmoid), `scale_0..2` (log), `rot_0..3` (quaternion
//! w x y z), `f_seg_0..` (segmentation feature), and optionally a
//! `ushort instance` label. All float properties are 32-bit. The
//! background color rides in a `comment background r g b` line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{Gaussian, GaussianCloud};

const BASE: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

/// A cloud plus its optional per-Gaussian instance labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyCloud {
    pub cloud: GaussianCloud,
    pub instance_id: Option<Vec<u16>>,
}

pub fn write_ply<W: Write>(w: &mut W, cloud: &GaussianCloud, instance_id: Option<&[u16]>) -> Result<()> {
    if let Some(ids) = instance_id {
        if ids.len() != cloud.len() {
            return Err(Error::shape(cloud.len(), ids.len()));
        }
    }
    let bg = cloud.background();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment background {} {} {}\nelement vertex {}\n",
        bg.x,
        bg.y,
        bg.z,
        cloud.len()
    );
    for name in BASE {
        header += &format!("property float {name}\n");
    }
    for k in 0..cloud.feature_dim() {
        header += &format!("property float f_seg_{k}\n");
    }
    if instance_id.is_some() {
        header += "property ushort instance\n";
    }
    header += "end_header\n";

    let stride = (BASE.len() + cloud.feature_dim()) * 4 + if instance_id.is_some() { 2 } else { 0 };
    let mut body = Vec::with_capacity(cloud.len() * stride);
    for (i, g) in cloud.gaussians().iter().enumerate() {
        let base = [
            g.position.x,
            g.position.y,
            g.position.z,
            g.color.x,
            g.color.y,
            g.color.z,
            g.opacity_logit,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ];
        for x in base.iter().chain(&g.feature) {
            body.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        if let Some(ids) = instance_id {
            body.extend_from_slice(&ids[i].to_le_bytes());
        }
    }
    w.write_all(header.as_bytes())?;
    w.write_all(&body)?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Float,
    UShort,
}

impl Kind {
    fn size(self) -> usize {
        match self {
            Kind::Float => 4,
            Kind::UShort => 2,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn read_ply<R: BufRead>(r: &mut R) -> Result<PlyCloud> {
    let mut line = Vec::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        if r.read_until(b'\n', &mut line)? == 0 {
            return Err(bad("PLY header ended early"));
        }
        let s = std::str::from_utf8(&line).map_err(|_| bad("PLY header is not ASCII"))?;
        Ok(s.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(r)? != "ply" {
        return Err(bad("missing PLY magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Kind)> = Vec::new();
    let mut background = Vector3::zeros();
    loop {
        let l = next_line(r)?;
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(bad(format!("unsupported PLY format {other}"))),
            ["comment", "background", r, g, b] => {
                let p = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad background value {s:?}")));
                background = Vector3::new(p(r)?, p(g)?, p(b)?);
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
            }
            ["element", other, ..] => return Err(bad(format!("unexpected element {other}"))),
            ["property", ty, name] => {
                let kind = match *ty {
                    "float" | "float32" => Kind::Float,
                    "ushort" | "uint16" => Kind::UShort,
                    _ => return Err(bad(format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), kind));
            }
            _ => return Err(bad(format!("unrecognized header line {l:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;

    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    let mut base_cols = [0usize; 14];
    for (slot, name) in base_cols.iter_mut().zip(BASE) {
        *slot = find(name).ok_or_else(|| bad(format!("missing property {name}")))?;
        if props[*slot].1 != Kind::Float {
            return Err(bad(format!("property {name} must be float")));
        }
    }
    let feature_cols: Vec<usize> = (0..).map_while(|k| find(&format!("f_seg_{k}"))).collect();
    if feature_cols.iter().any(|&c| props[c].1 != Kind::Float) {
        return Err(bad("feature properties must be float"));
    }
    let instance_col = find("instance");
    if instance_col.is_some_and(|c| props[c].1 != Kind::UShort) {
        return Err(bad("instance must be ushort"));
    }

    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, kind) in &props {
        offsets.push(stride);
        stride += kind.size();
    }
    let mut body = vec![0u8; count * stride];
    r.read_exact(&mut body)
        .map_err(|_| bad("PLY vertex data is truncated"))?;

    let mut gaussians = Vec::with_capacity(count);
    let mut ids = instance_col.map(|_| Vec::with_capacity(count));
    for row in body.chunks_exact(stride.max(1)).take(count) {
        let f = |col: usize| {
            let o = offsets[col];
            f32::from_le_bytes([row[o], row[o + 1], row[o + 2], row[o + 3]]) as f64
        };
        let b = base_cols.map(f);
        gaussians.push(Gaussian {
            position: Vector3::new(b[0], b[1], b[2]),
            color: Vector3::new(b[3], b[4], b[5]),
            opacity_logit: b[6],
            log_scale: Vector3::new(b[7], b[8], b[9]),
            rotation: [b[10], b[11], b[12], b[13]],
            feature: feature_cols.iter().map(|&c| f(c)).collect(),
        });
        if let (Some(c), Some(ids)) = (instance_col, ids.as_mut()) {
            let o = offsets[c];
            ids.push(u16::from_le_bytes([row[o], row[o + 1]]));
        }
    }
    let cloud = GaussianCloud::from_gaussians(feature_cols.len(), gaussians)?.with_background(background);
    cloud.validate()?;
    Ok(PlyCloud {
        cloud,
        instance_id: ids,
    })
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &GaussianCloud, instance_id: Option<&[u16]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, cloud, instance_id)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PlyCloud> {
    let mut r = BufReader::new(File::open(path)?);
    let out = read_ply(&mut r)?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after PLY vertex data"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::IDENTITY_QUAT;

    fn cloud() -> GaussianCloud {
        let g = Gaussian::new(
            Vector3::new(0.5, -1.0, 2.0),
            Vector3::new(0.1, 0.2, 0.3),
            IDENTITY_QUAT,
            0.25,
            Vector3::new(0.9, 0.1, 0.0),
            vec![1.0, -2.0],
        );
        GaussianCloud::from_gaussians(2, vec![g])
            .unwrap()
            .with_background(Vector3::new(0.1, 0.2, 0.3))
    }

    #[test]
    fn header_lists_properties_in_order() {
        let mut out = Vec::new();
        write_ply(&mut out, &cloud(), Some(&[3])).unwrap();
        let text = String::from_utf8_lossy(&out);
        let header = &text[..text.find("end_header").unwrap()];
        let names: Vec<&str> = header.lines().filter_map(|l| l.strip_prefix("property ")).collect();
        assert_eq!(names[0], "float x");
        assert_eq!(names[6], "float opacity");
        assert_eq!(names[14], "float f_seg_0");
        assert_eq!(names[16], "ushort instance");
        assert_eq!(out.len(), header.len() + "end_header\n".len() + 16 * 4 + 2);
    }

    #[test]
    fn values_survive_at_single_precision() {
        let mut out = Vec::new();
        write_ply(&mut out, &cloud(), Some(&[3])).unwrap();
        let back = read_ply(&mut &out[..]).unwrap();
        assert_eq!(back.instance_id, Some(vec![3]));
        let orig = cloud();
        let (a, b) = (&orig.gaussians()[0], &back.cloud.gaussians()[0]);
        assert!((a.opacity() - b.opacity()).abs() < 1e-6);
        assert_eq!(b.feature, vec![1.0, -2.0]);
        assert_eq!(back.cloud.background(), Vector3::new(0.1, 0.2, 0.3));
    }

    #[test]
    fn missing_property_is_named() {
        let text = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        let err = read_ply(&mut &text[..]).unwrap_err();
        assert!(err.to_string().contains("missing property y"), "{err}");
    }
}
