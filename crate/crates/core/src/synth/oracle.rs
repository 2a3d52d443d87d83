use nalgebra::{Point3, Vector3};

use crate::scene::{CameraView, PointCloud};

/// Visibility score of `subcluster` in `view` measured by casting
/// `supersample²` rays per pixel against every point modelled as a ball of
/// radius `point_radius`. A sample is occlusion-free when its ray hits the
/// subcluster and visible when that hit is within `depth_tolerance` of the
/// nearest hit among `environment` and the subcluster. Returns 0 when no
/// ray hits the subcluster.
///
/// Shares only the pinhole camera with the splatting code.
pub fn raycast_visibility_oracle(
    view: &CameraView,
    subcluster: &PointCloud,
    environment: &PointCloud,
    point_radius: f64,
    supersample: u32,
    depth_tolerance: f64,
) -> f64 {
    let s = supersample.max(1) as i64;
    let rho = point_radius;
    let to_cam = |p| view.to_camera(p);

    // pixel-space box covering the subcluster
    let reach = |c: &Vector3<f64>| -> Option<(f64, f64, f64)> {
        if c.z <= rho {
            return None;
        }
        let u = view.fx * c.x / c.z + view.cx;
        let v = view.fy * c.y / c.z + view.cy;
        let half = view.fx.max(view.fy) * rho / (c.z - rho) + 1.0;
        Some((u, v, half))
    };
    let (w, h) = (view.width as i64, view.height as i64);
    let mut lo = (i64::MAX, i64::MAX);
    let mut hi = (i64::MIN, i64::MIN);
    let sub_cam: Vec<Vector3<f64>> = subcluster.iter().map(to_cam).collect();
    for c in &sub_cam {
        if let Some((u, v, half)) = reach(c) {
            lo.0 = lo.0.min((u - half).floor() as i64);
            lo.1 = lo.1.min((v - half).floor() as i64);
            hi.0 = hi.0.max((u + half).ceil() as i64);
            hi.1 = hi.1.max((v + half).ceil() as i64);
        }
    }
    let (x0, y0) = (lo.0.max(0), lo.1.max(0));
    let (x1, y1) = (hi.0.min(w - 1), hi.1.min(h - 1));
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    // sample grid: columns x0*s .. (x1+1)*s, sample (a, b) sits at
    // pixel coordinate a/s - 0.5 + 0.5/s
    let (gw, gh) = ((x1 - x0 + 1) * s, (y1 - y0 + 1) * s);
    let mut sub_depth = vec![f64::INFINITY; (gw * gh) as usize];
    let mut env_depth = vec![f64::INFINITY; (gw * gh) as usize];
    let sf = s as f64;
    let sample_coord = |g: i64, origin: i64| origin as f64 - 0.5 + (g as f64 + 0.5) / sf;

    let trace = |c: &Vector3<f64>, target: &mut [f64]| {
        let Some((u, v, half)) = reach(c) else {
            return;
        };
        let ga0 = (((u - half + 0.5 - x0 as f64) * sf).floor() as i64).max(0);
        let ga1 = (((u + half + 0.5 - x0 as f64) * sf).ceil() as i64).min(gw - 1);
        let gb0 = (((v - half + 0.5 - y0 as f64) * sf).floor() as i64).max(0);
        let gb1 = (((v + half + 0.5 - y0 as f64) * sf).ceil() as i64).min(gh - 1);
        let cc = c.norm_squared() - rho * rho;
        for gb in gb0..=gb1 {
            let dy = (sample_coord(gb, y0) - view.cy) / view.fy;
            for ga in ga0..=ga1 {
                let dx = (sample_coord(ga, x0) - view.cx) / view.fx;
                let d = Vector3::new(dx, dy, 1.0);
                let a = d.norm_squared();
                let b = d.dot(c);
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    continue;
                }
                let t = (b - disc.sqrt()) / a;
                if t <= 0.0 {
                    continue;
                }
                let slot = &mut target[(gb * gw + ga) as usize];
                if t < *slot {
                    *slot = t;
                }
            }
        }
    };
    for c in &sub_cam {
        trace(c, &mut sub_depth);
    }
    for p in environment.iter() {
        trace(&to_cam(p), &mut env_depth);
    }

    let mut free = 0usize;
    let mut visible = 0usize;
    for (sd, ed) in sub_depth.iter().zip(&env_depth) {
        if sd.is_finite() {
            free += 1;
            if *sd <= ed.min(*sd) + depth_tolerance {
                visible += 1;
            }
        }
    }
    if free == 0 {
        0.0
    } else {
        visible as f64 / free as f64
    }
}

/// A flat square target facing the camera with a wall in front of it whose
/// edge projects onto the optical axis, hiding exactly half the target.
#[derive(Debug, Clone)]
pub struct HalfPlaneScene {
    pub view: CameraView,
    pub target: PointCloud,
    /// Wall and target together.
    pub environment: PointCloud,
    pub point_radius: f64,
}

pub fn half_plane_scene() -> HalfPlaneScene {
    let rho = 0.004;
    let view = CameraView::identity(500.0, 500.0, 100.0, 100.0, 200, 200);
    let grid = |z: f64, x: (f64, f64), y: (f64, f64), step: f64| {
        let nx = ((x.1 - x.0) / step).round() as usize;
        let ny = ((y.1 - y.0) / step).round() as usize;
        let mut pts = Vec::with_capacity((nx + 1) * (ny + 1));
        for i in 0..=nx {
            for j in 0..=ny {
                pts.push(Point3::new(x.0 + i as f64 * step, y.0 + j as f64 * step, z));
            }
        }
        pts
    };
    let target = grid(1.0, (-0.05, 0.05), (-0.05, 0.05), rho);
    // balls of radius rho end at x = 0
    let wall = grid(0.5, (-0.2, -rho), (-0.1, 0.1), rho / 2.0);
    let mut env = target.clone();
    env.extend(wall);
    HalfPlaneScene {
        view,
        target: PointCloud::new(target),
        environment: PointCloud::new(env),
        point_radius: rho,
    }
}
