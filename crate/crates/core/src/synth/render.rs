use rayon::prelude::*;

use crate::projection::for_each_splat_pixel;
use crate::scene::{CameraView, InstanceMask, PointCloud};

/// Render perfect instance masks: each pixel takes the id (instance index
/// plus one) of the front-most splat covering it, foliage renders as
/// background.
pub fn render_true_masks(
    cameras: &[CameraView],
    instances: &[PointCloud],
    foliage: &PointCloud,
    radius: f64,
) -> Vec<InstanceMask> {
    cameras
        .par_iter()
        .map(|view| {
            let n = view.pixel_count();
            let mut depth = vec![f64::INFINITY; n];
            let mut owner = vec![0u32; n];
            let mut draw = |cloud: &PointCloud, id: u32| {
                for p in cloud.iter() {
                    for_each_splat_pixel(view, p, radius, |i, d| {
                        let i = i as usize;
                        if d < depth[i] {
                            depth[i] = d;
                            owner[i] = id;
                        }
                    });
                }
            };
            for (k, cloud) in instances.iter().enumerate() {
                draw(cloud, k as u32 + 1);
            }
            draw(foliage, 0);
            InstanceMask::from_labels(view.width, view.height, owner)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn front_point_owns_pixel() {
        let view = CameraView::identity(100.0, 100.0, 5.0, 5.0, 11, 11);
        let near = PointCloud::new(vec![Point3::new(0.0, 0.0, 1.0)]);
        let far = PointCloud::new(vec![Point3::new(0.0, 0.0, 2.0)]);
        let masks = render_true_masks(
            std::slice::from_ref(&view),
            &[far.clone(), near.clone()],
            &PointCloud::default(),
            0.01,
        );
        assert_eq!(masks[0].get(5, 5), 2);
        // foliage in front hides the instance
        let leaf = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.5)]);
        let masks = render_true_masks(&[view], &[far], &leaf, 0.01);
        assert_eq!(masks[0].get(5, 5), 0);
    }
}
