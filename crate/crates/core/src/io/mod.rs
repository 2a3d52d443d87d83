//! On-disk formats: PLY clouds, camera JSON, 16-bit PNG masks, and the
//! dataset directory layout tying them together.

mod cameras;
mod masks;
mod ply;

pub use cameras::{cameras_to_json, read_cameras, read_cameras_from_str, write_cameras};
pub use masks::{mask_path, read_mask, read_masks, read_masks_for, write_mask, write_masks};
pub use ply::{
    palette_color, read_labeled_cloud, read_labeled_from, read_point_cloud, write_point_cloud, write_point_cloud_to,
    LabeledCloud, PlyFormat, PALETTE,
};

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::scene::{Dataset, View};

pub const CROP_CLOUD_FILE: &str = "crop.ply";
pub const ENV_CLOUD_FILE: &str = "env.ply";
pub const CAMERAS_FILE: &str = "cameras.json";
pub const MASKS_DIR: &str = "masks";

/// Paths of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub crop_cloud: PathBuf,
    pub env_cloud: PathBuf,
    pub cameras: PathBuf,
    pub masks: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            crop_cloud: dir.join(CROP_CLOUD_FILE),
            env_cloud: dir.join(ENV_CLOUD_FILE),
            cameras: dir.join(CAMERAS_FILE),
            masks: dir.join(MASKS_DIR),
        }
    }
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let cameras = read_cameras(&paths.cameras)?;
    let masks = read_masks_for(&paths.masks, &cameras)?;
    let crop = read_point_cloud(&paths.crop_cloud)?;
    let env = read_point_cloud(&paths.env_cloud)?;
    let views = cameras
        .into_iter()
        .zip(masks)
        .map(|(camera, mask)| View { camera, mask })
        .collect();
    Ok(Dataset::new(views, env, crop))
}

/// Write a dataset in the layout [`DatasetPaths::in_dir`] expects.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<DatasetPaths> {
    let paths = DatasetPaths::in_dir(&dir);
    std::fs::create_dir_all(&paths.masks)?;
    write_point_cloud(
        &paths.crop_cloud,
        &dataset.crop_cloud,
        None,
        PlyFormat::BinaryLittleEndian,
    )?;
    write_point_cloud(
        &paths.env_cloud,
        &dataset.env_cloud,
        None,
        PlyFormat::BinaryLittleEndian,
    )?;
    let cameras: Vec<_> = dataset.views.iter().map(|v| v.camera.clone()).collect();
    write_cameras(&paths.cameras, &cameras)?;
    let masks: Vec<_> = dataset.views.iter().map(|v| v.mask.clone()).collect();
    write_masks(&paths.masks, &masks)?;
    Ok(paths)
}
