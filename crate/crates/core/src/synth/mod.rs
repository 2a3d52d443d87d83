//! Synthetic scenes with known ground truth.
//!
//! Instances are point-sampled spheres (optionally ellipsoids) grouped into
//! spatial clusters, foliage is a set of flat point-sampled leaves, and the
//! cameras sit on a ring looking at the layout centroid.

mod corrupt;
mod oracle;
mod render;

pub use corrupt::{
    corrupt_masks, dilate_or_erode, drop_instance, jitter_mask, mask_adjacency, merge_instances, CorruptedMasks,
    CorruptionEvent, CorruptionOp, CorruptionSpec,
};
pub use oracle::{half_plane_scene, raycast_visibility_oracle, HalfPlaneScene};
pub use render::render_true_masks;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{CameraView, Dataset, InstanceMask, PointCloud, View};

const PLACEMENT_ATTEMPTS: usize = 1000;
/// Allowed interpenetration when placing instances, meters.
const OVERLAP_TOL: f64 = 1e-4;

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub instance_count: usize,
    /// Sphere radius range (min, max), meters.
    pub radius_range: (f64, f64),
    /// Largest axis ratio of ellipsoidal instances; 1 gives spheres.
    pub max_axis_ratio: f64,
    /// Number of spatial clusters; instances are spread over them evenly.
    pub clusters: usize,
    /// Surface-to-surface gap between neighbours inside a cluster, meters.
    /// Zero or negative values make touching or slightly fused instances.
    pub intra_cluster_gap: f64,
    /// Minimum surface-to-surface distance between clusters, meters.
    pub cluster_separation: f64,
    pub foliage_blobs: usize,
    pub foliage_blob_radius: f64,
    pub views: usize,
    pub ring_radius: f64,
    /// Camera offset from the layout centroid along z, meters. Even views
    /// sit above, odd views below.
    pub ring_height: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
    /// Target distance between neighbouring surface samples, meters.
    pub point_spacing: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            instance_count: 5,
            radius_range: (0.015, 0.02),
            max_axis_ratio: 1.0,
            clusters: 2,
            intra_cluster_gap: 0.016,
            cluster_separation: 0.08,
            foliage_blobs: 0,
            foliage_blob_radius: 0.04,
            views: 30,
            ring_radius: 1.0,
            ring_height: 0.25,
            image_width: 480,
            image_height: 360,
            focal_px: 500.0,
            point_spacing: 0.004,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("scene spec: {m}")));
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("radius range must satisfy 0 < min <= max");
        }
        if !(self.max_axis_ratio >= 1.0) {
            return bad("max_axis_ratio must be >= 1");
        }
        if self.instance_count > 0 && self.clusters == 0 {
            return bad("need at least one cluster for a non-empty scene");
        }
        if self.views == 0 {
            return bad("need at least one view");
        }
        if !(self.ring_radius > 0.0) || !(self.focal_px > 0.0) || !(self.point_spacing > 0.0) {
            return bad("ring radius, focal length and point spacing must be positive");
        }
        if self.foliage_blobs > 0 && !(self.foliage_blob_radius > 0.0) {
            return bad("foliage blob radius must be positive");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be at least 1x1");
        }
        if !(self.cluster_separation >= 0.0) {
            return bad("cluster separation must be non-negative");
        }
        Ok(())
    }

    /// Cluster sizes, as even as possible, larger ones first.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        if self.instance_count == 0 {
            return Vec::new();
        }
        let c = self.clusters.min(self.instance_count);
        let (base, extra) = (self.instance_count / c, self.instance_count % c);
        (0..c).map(|i| base + usize::from(i < extra)).collect()
    }
}

/// One placed instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub center: Point3<f64>,
    /// Semi-axes in the instance frame.
    pub semi_axes: Vector3<f64>,
    /// Instance-to-world rotation.
    pub orientation: Matrix3<f64>,
    pub cluster: usize,
}

impl InstanceShape {
    pub fn bounding_radius(&self) -> f64 {
        self.semi_axes.max()
    }
}

/// What the generator knows about the scene it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Instance index of every crop-cloud point.
    pub point_instance: Vec<usize>,
    pub count: usize,
    /// Uncorrupted masks, one per view (same as in the dataset).
    pub masks: Vec<InstanceMask>,
    /// `view_ids[j][k]` is the mask id of instance `k` in view `j`.
    pub view_ids: Vec<Vec<u32>>,
    pub instances: Vec<InstanceShape>,
    /// Per-instance crop points, in instance order.
    pub instance_clouds: Vec<PointCloud>,
    pub foliage: PointCloud,
    /// Splat radius used to render the masks.
    pub render_radius: f64,
}

impl GroundTruth {
    /// Number of instances that own at least one pixel in view `j`.
    pub fn visible_instances(&self, j: usize) -> usize {
        self.masks[j].instance_ids().len()
    }

    /// Per view, the fraction of instance pixels hidden by other instances
    /// or foliage, against each instance rendered alone.
    pub fn occlusion_by_view(&self, cameras: &[CameraView]) -> Vec<f64> {
        let nothing = PointCloud::default();
        let alone: Vec<Vec<InstanceMask>> = self
            .instance_clouds
            .iter()
            .map(|c| render_true_masks(cameras, std::slice::from_ref(c), &nothing, self.render_radius))
            .collect();
        (0..cameras.len())
            .map(|j| {
                let (mut full, mut shown) = (0usize, 0usize);
                for (k, masks) in alone.iter().enumerate() {
                    full += masks[j].labels().iter().filter(|&&l| l != 0).count();
                    let id = self.view_ids[j][k];
                    shown += self.masks[j].labels().iter().filter(|&&l| l == id).count();
                }
                if full == 0 {
                    0.0
                } else {
                    1.0 - shown as f64 / full as f64
                }
            })
            .collect()
    }
}

/// Build a scene and its ground truth. Deterministic per `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let instances = place_instances(spec, &mut rng)?;
    let instance_clouds: Vec<PointCloud> = instances
        .iter()
        .map(|shape| sample_instance(shape, spec.point_spacing, &mut rng))
        .collect();
    let centroid = layout_centroid(&instances);
    let foliage = place_foliage(spec, &instances, centroid, &mut rng);

    let cameras = camera_ring(spec, centroid);
    let render_radius = spec.point_spacing;
    let masks = render_true_masks(&cameras, &instance_clouds, &foliage, render_radius);

    // view-local ids: a seeded permutation of 1..=count per view
    let mut masks_out = Vec::with_capacity(masks.len());
    let mut view_ids = Vec::with_capacity(masks.len());
    for (j, mask) in masks.into_iter().enumerate() {
        let mut view_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        view_rng.set_stream(1 + j as u64);
        let mut ids: Vec<u32> = (1..=instances.len() as u32).collect();
        ids.shuffle(&mut view_rng);
        let relabeled: Vec<u32> = mask
            .labels()
            .iter()
            .map(|&l| if l == 0 { 0 } else { ids[l as usize - 1] })
            .collect();
        masks_out.push(InstanceMask::from_labels(mask.width(), mask.height(), relabeled));
        view_ids.push(ids);
    }

    let mut crop = Vec::new();
    let mut point_instance = Vec::new();
    for (k, cloud) in instance_clouds.iter().enumerate() {
        crop.extend_from_slice(&cloud.points);
        point_instance.extend(std::iter::repeat_n(k, cloud.len()));
    }
    let crop_cloud = PointCloud::new(crop);
    let mut env = crop_cloud.points.clone();
    env.extend_from_slice(&foliage.points);

    let views = cameras
        .into_iter()
        .zip(&masks_out)
        .map(|(camera, mask)| View {
            camera,
            mask: mask.clone(),
        })
        .collect();
    let dataset = Dataset::new(views, PointCloud::new(env), crop_cloud);
    let truth = GroundTruth {
        point_instance,
        count: instances.len(),
        masks: masks_out,
        view_ids,
        instances,
        instance_clouds,
        foliage,
        render_radius,
    };
    Ok((dataset, truth))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Unit::new_normalize(random_unit(rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    *Rotation3::from_axis_angle(&axis, angle).matrix()
}

fn random_shape(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Matrix3<f64>) {
    let (lo, hi) = spec.radius_range;
    let r = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if spec.max_axis_ratio > 1.0 {
        let ratio = rng.random_range(1.0..=spec.max_axis_ratio);
        // long axis r, the other two shrink by the ratio
        let axes = Vector3::new(r, r / ratio.sqrt(), r / ratio);
        (axes, random_rotation(rng))
    } else {
        (Vector3::repeat(r), Matrix3::identity())
    }
}

/// Surface distance lower bound between two instances via bounding spheres.
fn clearance(a: &InstanceShape, b: &InstanceShape) -> f64 {
    (a.center - b.center).norm() - a.bounding_radius() - b.bounding_radius()
}

fn place_instances(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<InstanceShape>> {
    let sizes = spec.cluster_sizes();
    let mut clusters: Vec<Vec<InstanceShape>> = Vec::with_capacity(sizes.len());
    for (c, &size) in sizes.iter().enumerate() {
        let mut members: Vec<InstanceShape> = Vec::with_capacity(size);
        for _ in 0..size {
            let (semi_axes, orientation) = random_shape(spec, rng);
            let mut shape = InstanceShape {
                center: Point3::origin(),
                semi_axes,
                orientation,
                cluster: c,
            };
            if !members.is_empty() {
                let mut placed = false;
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let anchor = &members[rng.random_range(0..members.len())];
                    let dir = random_unit(rng);
                    let dist = anchor.bounding_radius() + shape.bounding_radius() + spec.intra_cluster_gap;
                    shape.center = anchor.center + dir * dist;
                    // a centre distance this small would nest one instance in the other
                    let nested = dist <= (anchor.bounding_radius() - shape.bounding_radius()).abs();
                    if !nested
                        && members
                            .iter()
                            .all(|m| clearance(m, &shape) >= spec.intra_cluster_gap - OVERLAP_TOL)
                    {
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::ImpossibleLayout(format!(
                        "could not place instance {} of cluster {c} after {PLACEMENT_ATTEMPTS} attempts",
                        members.len()
                    )));
                }
            }
            members.push(shape);
        }
        clusters.push(members);
    }

    // lay clusters out on the ground plane around the origin
    let extents: Vec<(Point3<f64>, f64)> = clusters
        .iter()
        .map(|m| {
            let centroid = layout_centroid(m);
            let reach = m
                .iter()
                .map(|s| (s.center - centroid).norm() + s.bounding_radius())
                .fold(0.0, f64::max);
            (centroid, reach)
        })
        .collect();
    let total_area: f64 = extents
        .iter()
        .map(|(_, r)| (2.0 * r + spec.cluster_separation).powi(2))
        .sum();
    let mut half_side = 0.5 * total_area.sqrt() * 1.6;
    let mut offsets: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(clusters.len());
    for (c, &(centroid, reach)) in extents.iter().enumerate() {
        let mut placed = false;
        for attempt in 0..PLACEMENT_ATTEMPTS {
            if attempt > 0 && attempt % 200 == 0 {
                half_side *= 1.25;
            }
            let x = rng.random_range(-half_side..=half_side);
            let y = rng.random_range(-half_side..=half_side);
            let z = rng.random_range(-0.5..=0.5) * reach;
            let pos = Vector3::new(x, y, z);
            if offsets
                .iter()
                .all(|(o, r)| (o - pos).norm() >= r + reach + spec.cluster_separation)
            {
                offsets.push((pos, reach));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ImpossibleLayout(format!("could not place cluster {c}")));
        }
        let shift = offsets[c].0 - centroid.coords;
        for s in &mut clusters[c] {
            s.center += shift;
        }
    }
    Ok(clusters.into_iter().flatten().collect())
}

fn layout_centroid(shapes: &[InstanceShape]) -> Point3<f64> {
    if shapes.is_empty() {
        return Point3::origin();
    }
    let sum = shapes.iter().fold(Vector3::zeros(), |acc, s| acc + s.center.coords);
    Point3::from(sum / shapes.len() as f64)
}

/// Quasi-uniform surface samples: a Fibonacci lattice on the unit sphere,
/// randomly rotated, mapped onto the ellipsoid.
fn sample_instance(shape: &InstanceShape, spacing: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let a = shape.semi_axes;
    // Knud Thomsen's approximation of the ellipsoid surface area
    let p = 1.6075;
    let area = 4.0
        * std::f64::consts::PI
        * (((a.x * a.y).powf(p) + (a.x * a.z).powf(p) + (a.y * a.z).powf(p)) / 3.0).powf(1.0 / p);
    let n = ((area / (spacing * spacing)).round() as usize).max(4);
    let spin = random_rotation(rng);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            let unit = spin * Vector3::new(r * t.cos(), r * t.sin(), z);
            shape.center + shape.orientation * unit.component_mul(&a)
        })
        .collect()
}

/// Flat leaf-like discs of points around the layout, kept clear of instances.
fn place_foliage(
    spec: &SceneSpec,
    instances: &[InstanceShape],
    centroid: Point3<f64>,
    rng: &mut ChaCha8Rng,
) -> PointCloud {
    let mut points = Vec::new();
    if spec.foliage_blobs == 0 {
        return PointCloud::new(points);
    }
    let reach = instances
        .iter()
        .map(|s| (s.center - centroid).norm() + s.bounding_radius())
        .fold(0.05, f64::max);
    let radius = spec.foliage_blob_radius;
    let spacing = spec.point_spacing;
    let per_disc = ((std::f64::consts::PI * radius * radius) / (spacing * spacing))
        .round()
        .max(1.0) as usize;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for _ in 0..spec.foliage_blobs {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let offset = Vector3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-0.6..=0.6),
            ) * (reach + radius);
            let center = centroid + offset;
            let clear = instances
                .iter()
                .all(|s| (s.center - center).norm() >= s.bounding_radius() + radius + spacing);
            if !clear {
                continue;
            }
            let normal = random_unit(rng);
            let u = normal
                .cross(&Vector3::z())
                .try_normalize(1e-9)
                .unwrap_or_else(Vector3::x);
            let v = normal.cross(&u);
            for i in 0..per_disc {
                let rr = radius * ((i as f64 + 0.5) / per_disc as f64).sqrt();
                let t = golden * i as f64;
                points.push(center + u * (rr * t.cos()) + v * (rr * t.sin()));
            }
            break;
        }
    }
    PointCloud::new(points)
}

fn camera_ring(spec: &SceneSpec, target: Point3<f64>) -> Vec<CameraView> {
    let (w, h) = (spec.image_width, spec.image_height);
    (0..spec.views)
        .map(|j| {
            let az = std::f64::consts::TAU * j as f64 / spec.views as f64;
            let dz = if j % 2 == 0 {
                spec.ring_height
            } else {
                -spec.ring_height
            };
            let eye = target + Vector3::new(spec.ring_radius * az.cos(), spec.ring_radius * az.sin(), dz);
            CameraView::look_at(
                eye,
                target,
                Vector3::z(),
                spec.focal_px,
                spec.focal_px,
                w as f64 / 2.0,
                h as f64 / 2.0,
                w,
                h,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::validate_dataset;

    #[test]
    fn single_instance_scene() {
        let spec = SceneSpec {
            instance_count: 1,
            clusters: 1,
            views: 4,
            ..SceneSpec::default()
        };
        let (ds, truth) = generate_scene(&spec).unwrap();
        assert_eq!(truth.count, 1);
        assert_eq!(ds.views.len(), 4);
        for v in &ds.views {
            assert_eq!(v.mask.instance_ids().len(), 1);
        }
    }

    #[test]
    fn five_instances_in_two_clusters() {
        let spec = SceneSpec {
            instance_count: 5,
            clusters: 2,
            ..SceneSpec::default()
        };
        let (_, truth) = generate_scene(&spec).unwrap();
        assert_eq!(truth.count, 5);
        assert_eq!(spec.cluster_sizes(), vec![3, 2]);
        let mut ids = truth.point_instance.clone();
        ids.dedup();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec {
            instance_count: 6,
            clusters: 2,
            foliage_blobs: 5,
            views: 6,
            seed: 17,
            ..SceneSpec::default()
        };
        assert_eq!(generate_scene(&spec).unwrap().0, generate_scene(&spec).unwrap().0);
    }

    #[test]
    fn dense_scene_is_valid_and_partially_visible() {
        let spec = SceneSpec {
            instance_count: 25,
            clusters: 7,
            foliage_blobs: 20,
            views: 30,
            seed: 3,
            ..SceneSpec::default()
        };
        let (ds, truth) = generate_scene(&spec).unwrap();
        assert!(validate_dataset(&ds).is_empty());
        let mean = (0..30).map(|j| truth.visible_instances(j) as f64 / 25.0).sum::<f64>() / 30.0;
        assert!(mean > 0.0 && mean < 1.0, "mean visible fraction {mean}");
    }

    #[test]
    fn instances_keep_their_gap() {
        let spec = SceneSpec {
            instance_count: 12,
            clusters: 3,
            intra_cluster_gap: 0.01,
            seed: 9,
            ..SceneSpec::default()
        };
        let (_, truth) = generate_scene(&spec).unwrap();
        for (a, sa) in truth.instances.iter().enumerate() {
            for sb in &truth.instances[a + 1..] {
                assert!(clearance(sa, sb) >= 0.01 - 1e-3);
            }
        }
    }

    #[test]
    fn impossible_layout_errors() {
        // negative gap bigger than the instances: every placement overlaps
        let spec = SceneSpec {
            instance_count: 3,
            clusters: 1,
            radius_range: (0.02, 0.02),
            intra_cluster_gap: -0.1,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::ImpossibleLayout(_))));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SceneSpec {
            views: 0,
            ..SceneSpec::default()
        };
        assert!(generate_scene(&spec).is_err());
    }
}
