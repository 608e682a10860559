//! Dataset directories: a versioned JSON manifest next to per-view images,
//! training masks and ground-truth masks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ply::{load_ply, save_ply, PlyCloud};
use super::pnm::{load_pgm16, load_ppm, save_pgm16, save_ppm};
use crate::error::{Error, Result};
use crate::scene::{Camera, Image, SegmentMask};
use crate::synth::{Query, SyntheticData};
use crate::trainer::{Dataset, TrainView};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: c.rotation,
            translation: c.translation,
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.rotation,
            self.translation,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub camera: CameraRecord,
    pub image: String,
    pub mask: String,
    pub gt_mask: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub scene: String,
    pub feature_dim: usize,
    pub views: Vec<ViewRecord>,
    /// Ground-truth labeled cloud, if the dataset is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<String>,
    /// Default evaluation queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<String>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        for split in [Split::Train, Split::Test] {
            if !self.views.iter().any(|v| v.split == split) {
                return Err(Error::Format(format!("manifest has no {split:?} views")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Every file the manifest names, relative to its directory.
    pub fn referenced_files(&self) -> Vec<&str> {
        let mut files: Vec<&str> = self
            .views
            .iter()
            .flat_map(|v| [v.image.as_str(), v.mask.as_str(), v.gt_mask.as_str()])
            .collect();
        files.extend(self.cloud.as_deref());
        files.extend(self.queries.as_deref());
        files
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Self::from_json(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if let Some(missing) = m.referenced_files().into_iter().find(|f| !dir.join(f).is_file()) {
            return Err(Error::Format(format!("manifest references missing file {missing}")));
        }
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(dir.as_ref().join(MANIFEST_FILE), self.to_json()?)?;
        Ok(())
    }
}

/// Writes a synthetic dataset: images, corrupted masks, ground-truth masks,
/// the labeled cloud, default queries, and the manifest.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SyntheticData) -> Result<Manifest> {
    let dir = dir.as_ref();
    for sub in ["images", "masks", "gt_masks"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut views = Vec::with_capacity(data.cameras.len());
    for (i, cam) in data.cameras.iter().enumerate() {
        let rec = ViewRecord {
            camera: cam.into(),
            image: format!("images/view_{i:03}.ppm"),
            mask: format!("masks/view_{i:03}.pgm"),
            gt_mask: format!("gt_masks/view_{i:03}.pgm"),
            split: if data.spec.is_test_view(i) {
                Split::Test
            } else {
                Split::Train
            },
        };
        save_ppm(dir.join(&rec.image), &data.images[i])?;
        save_pgm16(dir.join(&rec.mask), &data.masks[i])?;
        save_pgm16(dir.join(&rec.gt_mask), &data.gt_masks[i])?;
        views.push(rec);
    }
    save_ply(dir.join("scene.ply"), &data.scene.cloud, Some(&data.scene.instance_id))?;
    fs::write(
        dir.join("queries.json"),
        serde_json::to_string_pretty(&data.default_queries())? + "\n",
    )?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        scene: data.spec.name.clone(),
        feature_dim: data.spec.feature_dim,
        views,
        cloud: Some("scene.ply".into()),
        queries: Some("queries.json".into()),
    };
    manifest.validate()?;
    manifest.save(dir)?;
    Ok(manifest)
}

/// A dataset directory read back into memory; all vectors are indexed by
/// view.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub masks: Vec<SegmentMask>,
    pub gt_masks: Vec<SegmentMask>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LoadedDataset {
    pub fn training_set(&self) -> Dataset {
        Dataset {
            views: self
                .train
                .iter()
                .map(|&i| TrainView {
                    camera: self.cameras[i].clone(),
                    image: self.images[i].clone(),
                    mask: self.masks[i].clone(),
                })
                .collect(),
        }
    }

    pub fn queries(&self) -> Result<Option<Vec<Query>>> {
        match &self.manifest.queries {
            None => Ok(None),
            Some(f) => Ok(Some(serde_json::from_str(&fs::read_to_string(self.dir.join(f))?)?)),
        }
    }

    pub fn labeled_cloud(&self) -> Result<Option<PlyCloud>> {
        self.manifest
            .cloud
            .as_ref()
            .map(|f| load_ply(self.dir.join(f)))
            .transpose()
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LoadedDataset> {
    let dir = dir.as_ref().to_path_buf();
    let manifest = Manifest::load(&dir)?;
    let mut out = LoadedDataset {
        dir: dir.clone(),
        manifest: manifest.clone(),
        cameras: Vec::new(),
        images: Vec::new(),
        masks: Vec::new(),
        gt_masks: Vec::new(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (i, v) in manifest.views.iter().enumerate() {
        let cam = v.camera.to_camera()?;
        let image = load_ppm(dir.join(&v.image))?;
        let mask = load_pgm16(dir.join(&v.mask))?;
        let gt = load_pgm16(dir.join(&v.gt_mask))?;
        let fits = |w: usize, h: usize| w == cam.width && h == cam.height;
        if !fits(image.width, image.height) || !mask.matches_camera(&cam) || !gt.matches_camera(&cam) {
            return Err(Error::Format(format!("view {i}: file sizes do not match the camera")));
        }
        match v.split {
            Split::Train => out.train.push(i),
            Split::Test => out.test.push(i),
        }
        out.cameras.push(cam);
        out.images.push(image);
        out.masks.push(mask);
        out.gt_masks.push(gt);
    }
    Ok(out)
}
