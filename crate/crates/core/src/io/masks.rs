use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType};

use crate::error::{Error, Result};
use crate::scene::{CameraView, InstanceMask};

pub fn mask_path(dir: impl AsRef<Path>, view: usize) -> PathBuf {
    dir.as_ref().join(format!("mask_{view:05}.png"))
}

/// Decode one 16-bit single-channel PNG.
pub fn read_mask(path: impl AsRef<Path>) -> Result<InstanceMask> {
    let path = path.as_ref();
    let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if color != ColorType::Grayscale || depth != BitDepth::Sixteen {
        return Err(Error::MaskBitDepth {
            path: path.to_path_buf(),
            found: format!("{color:?} {depth:?}"),
        });
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::MaskBitDepth {
        path: path.to_path_buf(),
        found: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let labels = buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
        .collect();
    Ok(InstanceMask::from_labels(info.width, info.height, labels))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &InstanceMask) -> Result<()> {
    let path = path.as_ref();
    if let Some(&id) = mask.labels().iter().find(|&&l| l > u16::MAX as u32) {
        return Err(Error::MaskIdOverflow {
            path: path.to_path_buf(),
            id,
        });
    }
    let w = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(w, mask.width(), mask.height());
    encoder.set_color(ColorType::Grayscale);
    encoder.set_depth(BitDepth::Sixteen);
    let mut writer = encoder.write_header()?;
    let data: Vec<u8> = mask.labels().iter().flat_map(|&l| (l as u16).to_be_bytes()).collect();
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

pub fn write_masks(dir: impl AsRef<Path>, masks: &[InstanceMask]) -> Result<()> {
    for (j, m) in masks.iter().enumerate() {
        write_mask(mask_path(&dir, j), m)?;
    }
    Ok(())
}

/// Load `mask_00000.png …` in index order. The indices present must form
/// a gapless sequence starting at 0.
pub fn read_masks(dir: impl AsRef<Path>) -> Result<Vec<InstanceMask>> {
    let dir = dir.as_ref();
    let mut indices = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name
            .strip_prefix("mask_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            indices.push(idx);
        }
    }
    indices.sort_unstable();
    if let Some(gap) = indices.iter().enumerate().find(|&(i, &idx)| i != idx).map(|(i, _)| i) {
        return Err(Error::MaskMissing(mask_path(dir, gap)));
    }
    indices.iter().map(|&j| read_mask(mask_path(dir, j))).collect()
}

/// Load exactly one mask per camera and check each matches its camera's
/// image size.
pub fn read_masks_for(dir: impl AsRef<Path>, cameras: &[CameraView]) -> Result<Vec<InstanceMask>> {
    let dir = dir.as_ref();
    let masks = read_masks(dir)?;
    if masks.len() < cameras.len() {
        return Err(Error::MaskMissing(mask_path(dir, masks.len())));
    }
    if masks.len() > cameras.len() {
        return Err(Error::InvalidDataset(vec![format!(
            "{} masks for {} cameras",
            masks.len(),
            cameras.len()
        )]));
    }
    for (j, (m, c)) in masks.iter().zip(cameras).enumerate() {
        if (m.width(), m.height()) != (c.width, c.height) {
            return Err(Error::MaskSize {
                path: mask_path(dir, j),
                found: (m.width(), m.height()),
                expected: (c.width, c.height),
            });
        }
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = InstanceMask::new(7, 5);
        m.set(0, 0, 1);
        m.set(6, 4, 65535);
        m.set(3, 2, 300);
        write_masks(dir.path(), &[m.clone(), InstanceMask::new(7, 5)]).unwrap();
        let back = read_masks(dir.path()).unwrap();
        assert_eq!(back, vec![m, InstanceMask::new(7, 5)]);
        assert!(back[1].instance_ids().is_empty());
    }

    #[test]
    fn eight_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = mask_path(dir.path(), 0);
        let mut enc = png::Encoder::new(BufWriter::new(File::create(&path).unwrap()), 2, 2);
        enc.set_color(ColorType::Grayscale);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 1, 2, 3]).unwrap();
        w.finish().unwrap();
        assert!(matches!(read_masks(dir.path()), Err(Error::MaskBitDepth { .. })));
    }

    #[test]
    fn gap_in_sequence_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = InstanceMask::new(2, 2);
        write_mask(mask_path(dir.path(), 0), &m).unwrap();
        write_mask(mask_path(dir.path(), 2), &m).unwrap();
        match read_masks(dir.path()) {
            Err(Error::MaskMissing(p)) => assert!(p.ends_with("mask_00001.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn size_mismatch_against_cameras() {
        let dir = tempfile::tempdir().unwrap();
        write_mask(mask_path(dir.path(), 0), &InstanceMask::new(64, 64)).unwrap();
        let cam = CameraView::identity(100.0, 100.0, 64.0, 64.0, 128, 128);
        assert!(matches!(
            read_masks_for(dir.path(), &[cam]),
            Err(Error::MaskSize {
                found: (64, 64),
                expected: (128, 128),
                ..
            })
        ));
    }

    #[test]
    fn oversized_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = InstanceMask::new(1, 1);
        m.set(0, 0, 70_000);
        assert!(matches!(
            write_mask(mask_path(dir.path(), 0), &m),
            Err(Error::MaskIdOverflow { id: 70_000, .. })
        ));
    }
}
