//! Views, masks, point clouds and the pinhole camera model.
//!
//! Camera frame: +x right, +y down, +z forward. Poses are stored
//! world-to-camera: `p_cam = R * p_world + t`.

use std::fmt;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Integer pixel coordinate; `x` indexes columns, `y` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Result of projecting a world point that lands inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    pub depth: f64,
}

/// Pinhole intrinsics plus a world-to-camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraView {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        }
    }

    /// Camera with identity pose, handy for tests and examples.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self::new(fx, fy, cx, cy, width, height, Matrix3::identity(), Vector3::zeros())
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image
    /// up (-y in the camera frame).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::new(fx, fy, cx, cy, width, height, rotation, translation)
    }

    /// Build from a camera-to-world pose by inverting it.
    pub fn from_camera_to_world(
        intrinsics: (f64, f64, f64, f64),
        size: (u32, u32),
        rotation_c2w: Matrix3<f64>,
        translation_c2w: Vector3<f64>,
    ) -> Self {
        let rotation = rotation_c2w.transpose();
        let translation = -(rotation * translation_c2w);
        let (fx, fy, cx, cy) = intrinsics;
        Self::new(fx, fy, cx, cy, size.0, size.1, rotation, translation)
    }

    pub fn to_camera(&self, point: &Point3<f64>) -> Vector3<f64> {
        self.rotation * point.coords + self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Continuous image coordinates and depth of a world point, without
    /// bounds checks. `None` when the point is not in front of the camera.
    pub fn project_continuous(&self, point: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let p = self.to_camera(point);
        if !(p.z > 0.0) {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Some((u, v, p.z))
    }

    /// Project a world point to its integer pixel and depth.
    ///
    /// `None` if the point is behind the camera (depth <= 0) or rounds to a
    /// pixel outside `[0, width) x [0, height)`.
    pub fn project(&self, point: &Point3<f64>) -> Option<Projection> {
        let (u, v, depth) = self.project_continuous(point)?;
        let (px, py) = (u.round(), v.round());
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return None;
        }
        Some(Projection {
            pixel: Pixel::new(px as u32, py as u32),
            depth,
        })
    }

    /// World point on the ray through the centre of `pixel` at camera depth `depth`.
    pub fn unproject(&self, pixel: Pixel, depth: f64) -> Point3<f64> {
        let x = (pixel.x as f64 - self.cx) / self.fx * depth;
        let y = (pixel.y as f64 - self.cy) / self.fy * depth;
        let cam = Vector3::new(x, y, depth);
        Point3::from(self.rotation.transpose() * (cam - self.translation))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn rotation_is_orthonormal(&self) -> bool {
        rotation_is_orthonormal(&self.rotation)
    }

    /// Violations of the camera invariants, as human-readable strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            ));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            out.push("principal point must be finite".to_string());
        }
        if self.width == 0 || self.height == 0 {
            out.push(format!(
                "image size must be at least 1x1 (got {}x{})",
                self.width, self.height
            ));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            out.push("translation must be finite".to_string());
        }
        if !self.rotation_is_orthonormal() {
            out.push("rotation is not orthonormal with determinant +1".to_string());
        }
        out
    }
}

pub fn rotation_is_orthonormal(r: &Matrix3<f64>) -> bool {
    if !r.iter().all(|v| v.is_finite()) {
        return false;
    }
    let gram = r.transpose() * r;
    let off = (gram - Matrix3::identity()).abs().max();
    off <= ORTHONORMAL_TOL && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
}

/// Free-function form of [`CameraView::project`].
pub fn camera_project(view: &CameraView, point: &Point3<f64>) -> Option<Projection> {
    view.project(point)
}

/// Per-view label image. `0` is background, positive ids are view-local instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl InstanceMask {
    /// All-background mask.
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    /// Row-major labels; panics if the length does not match the size.
    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Self {
        assert_eq!(
            labels.len(),
            width as usize * height as usize,
            "label grid length does not match {width}x{height}"
        );
        Self { width, height, labels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, id: u32) {
        let i = self.index(x, y);
        self.labels[i] = id;
    }

    /// Sorted distinct positive ids present in the mask.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn is_background(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }
}

/// Unordered 3D points in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<f64>> {
        self.points.iter()
    }

    /// Subset by index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }
}

impl FromIterator<Point3<f64>> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3<f64>>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// One camera and its instance mask.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: CameraView,
    pub mask: InstanceMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    /// Occluder set: the whole scene, crop included.
    pub env_cloud: PointCloud,
    /// Target-crop points to segment.
    pub crop_cloud: PointCloud,
}

impl Dataset {
    pub fn new(views: Vec<View>, env_cloud: PointCloud, crop_cloud: PointCloud) -> Self {
        Self {
            views,
            env_cloud,
            crop_cloud,
        }
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Keep only the views at `indices`, in that order.
    pub fn with_views(&self, indices: &[usize]) -> Dataset {
        Dataset {
            views: indices.iter().map(|&i| self.views[i].clone()).collect(),
            env_cloud: self.env_cloud.clone(),
            crop_cloud: self.crop_cloud.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudKind {
    Environment,
    Crop,
}

impl fmt::Display for CloudKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CloudKind::Environment => f.write_str("environment"),
            CloudKind::Crop => f.write_str("crop"),
        }
    }
}

/// One dataset invariant violation.
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    NoViews,
    DimensionMismatch {
        view: usize,
        mask: (u32, u32),
        camera: (u32, u32),
    },
    NotOrthonormal {
        view: usize,
    },
    BadIntrinsics {
        view: usize,
        reason: String,
    },
    EmptyCloud(CloudKind),
    NonFiniteCloud(CloudKind),
}

impl Finding {
    /// Empty clouds are reported but do not stop the pipeline: an empty crop
    /// cloud simply counts zero.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, Finding::EmptyCloud(_))
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::NoViews => f.write_str("dataset has no views"),
            Finding::DimensionMismatch { view, mask, camera } => write!(
                f,
                "view {view}: mask is {}x{} but camera is {}x{}",
                mask.0, mask.1, camera.0, camera.1
            ),
            Finding::NotOrthonormal { view } => {
                write!(f, "view {view}: rotation is not orthonormal with det +1")
            }
            Finding::BadIntrinsics { view, reason } => write!(f, "view {view}: {reason}"),
            Finding::EmptyCloud(kind) => write!(f, "{kind} cloud is empty"),
            Finding::NonFiniteCloud(kind) => write!(f, "{kind} cloud has non-finite coordinates"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn fatal(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.is_fatal())
    }

    pub fn has_fatal(&self) -> bool {
        self.fatal().next().is_some()
    }
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut findings = Vec::new();
    if dataset.views.is_empty() {
        findings.push(Finding::NoViews);
    }
    for (j, view) in dataset.views.iter().enumerate() {
        let cam = &view.camera;
        if (view.mask.width(), view.mask.height()) != (cam.width, cam.height) {
            findings.push(Finding::DimensionMismatch {
                view: j,
                mask: (view.mask.width(), view.mask.height()),
                camera: (cam.width, cam.height),
            });
        }
        if !cam.rotation_is_orthonormal() {
            findings.push(Finding::NotOrthonormal { view: j });
        }
        if !(cam.fx > 0.0 && cam.fy > 0.0) || cam.width == 0 || cam.height == 0 {
            findings.push(Finding::BadIntrinsics {
                view: j,
                reason: format!(
                    "need fx, fy > 0 and size >= 1x1 (fx={}, fy={}, {}x{})",
                    cam.fx, cam.fy, cam.width, cam.height
                ),
            });
        }
    }
    for (cloud, kind) in [
        (&dataset.env_cloud, CloudKind::Environment),
        (&dataset.crop_cloud, CloudKind::Crop),
    ] {
        if cloud.is_empty() {
            findings.push(Finding::EmptyCloud(kind));
        } else if !cloud.is_finite() {
            findings.push(Finding::NonFiniteCloud(kind));
        }
    }
    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam100() -> CameraView {
        CameraView::identity(100.0, 100.0, 50.0, 50.0, 100, 100)
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let p = cam100().project(&Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p.pixel, Pixel::new(50, 50));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn behind_camera_is_none() {
        assert!(cam100().project(&Point3::new(0.0, 0.0, -1.0)).is_none());
        assert!(cam100().project(&Point3::new(0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn right_edge_is_exclusive() {
        // 100 * 1/2 + 50 = 100, outside [0, 100)
        assert!(cam100().project(&Point3::new(1.0, 0.0, 2.0)).is_none());
        let p = cam100().project(&Point3::new(0.98, 0.0, 2.0)).unwrap();
        assert_eq!(p.pixel.x, 99);
    }

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = CameraView::look_at(
            Point3::new(1.0, 0.0, 0.3),
            Point3::origin(),
            Vector3::z(),
            100.0,
            100.0,
            50.0,
            50.0,
            100,
            100,
        );
        assert!(cam.rotation_is_orthonormal());
        let p = cam.project(&Point3::origin()).unwrap();
        assert_eq!(p.pixel, Pixel::new(50, 50));
        // world up appears towards smaller rows
        let above = cam.project(&Point3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(above.pixel.y < 50);
        assert!((cam.center() - Point3::new(1.0, 0.0, 0.3)).norm() < 1e-12);
    }

    #[test]
    fn camera_to_world_inversion() {
        let eye = Point3::new(0.5, -2.0, 1.0);
        let a = CameraView::look_at(eye, Point3::origin(), Vector3::z(), 80.0, 80.0, 40.0, 30.0, 80, 60);
        let b =
            CameraView::from_camera_to_world((80.0, 80.0, 40.0, 30.0), (80, 60), a.rotation.transpose(), eye.coords);
        assert!((a.rotation - b.rotation).abs().max() < 1e-12);
        assert!((a.translation - b.translation).abs().max() < 1e-12);
    }

    fn three_view_dataset() -> Dataset {
        let views = (0..3)
            .map(|_| View {
                camera: CameraView::identity(100.0, 100.0, 64.0, 64.0, 128, 128),
                mask: InstanceMask::new(128, 128),
            })
            .collect();
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 2.0)]);
        Dataset::new(views, cloud.clone(), cloud)
    }

    #[test]
    fn well_formed_dataset_has_empty_report() {
        assert!(validate_dataset(&three_view_dataset()).is_empty());
    }

    #[test]
    fn mask_size_mismatch_is_one_finding() {
        let mut ds = three_view_dataset();
        ds.views[1].mask = InstanceMask::new(64, 64);
        let report = validate_dataset(&ds);
        assert_eq!(
            report.findings,
            vec![Finding::DimensionMismatch {
                view: 1,
                mask: (64, 64),
                camera: (128, 128)
            }]
        );
    }

    #[test]
    fn scaled_rotation_is_one_finding() {
        let mut ds = three_view_dataset();
        ds.views[2].camera.rotation *= 2.0;
        let report = validate_dataset(&ds);
        assert_eq!(report.findings, vec![Finding::NotOrthonormal { view: 2 }]);
    }

    #[test]
    fn empty_clouds_are_reported_but_not_fatal() {
        let mut ds = three_view_dataset();
        ds.crop_cloud = PointCloud::default();
        let report = validate_dataset(&ds);
        assert_eq!(report.findings, vec![Finding::EmptyCloud(CloudKind::Crop)]);
        assert!(!report.has_fatal());
    }

    fn arb_camera() -> impl Strategy<Value = CameraView> {
        (
            -3.0f64..3.0,
            -3.0f64..3.0,
            -3.0f64..3.0,
            0.0f64..std::f64::consts::TAU,
            -1.2f64..1.2,
        )
            .prop_map(|(x, y, z, az, el)| {
                let eye = Point3::new(x, y, z);
                let dir = Vector3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin());
                CameraView::look_at(eye, eye + dir, Vector3::z(), 300.0, 300.0, 160.0, 120.0, 320, 240)
            })
    }

    proptest! {
        #[test]
        fn projection_is_ray_invariant(cam in arb_camera(), u in 0.0f64..320.0, v in 0.0f64..240.0,
                                       depth in 0.1f64..10.0, scale in 0.1f64..5.0) {
            let cam_pt = Vector3::new((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
            let world = |c: Vector3<f64>| Point3::from(cam.rotation.transpose() * (c - cam.translation));
            let a = cam.project(&world(cam_pt));
            let b = cam.project(&world(cam_pt * scale));
            prop_assert_eq!(a.map(|p| p.pixel), b.map(|p| p.pixel));
        }

        #[test]
        fn pixel_centre_round_trips(cam in arb_camera(), x in 0u32..320, y in 0u32..240, depth in 0.1f64..10.0) {
            let pixel = Pixel::new(x, y);
            let world = cam.unproject(pixel, depth);
            let p = cam.project(&world).unwrap();
            prop_assert_eq!(p.pixel, pixel);
            prop_assert!((p.depth - depth).abs() < 1e-9);
        }
    }
}
