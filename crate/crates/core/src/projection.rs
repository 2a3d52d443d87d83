//! Point splatting and z-buffered visibility.
//!
//! Every point is drawn as a filled pixel disc of radius
//! `max(1, round(fx * radius / depth))` at constant depth. Areas are pixel
//! counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::scene::{CameraView, Pixel, PointCloud};

/// Seed for the point sample used by [`estimate_point_radius`].
const RADIUS_SAMPLE_SEED: u64 = 0x5eed_0001;

/// Default depth tolerance as a multiple of the splat radius.
pub const DEFAULT_DEPTH_TOLERANCE_FACTOR: f64 = 2.0;

/// A set of in-bounds pixels, stored as sorted row-major indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint {
    width: u32,
    height: u32,
    indices: Vec<u32>,
}

impl Footprint {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            indices: Vec::new(),
        }
    }

    /// From arbitrary (possibly repeated) row-major indices.
    pub fn from_indices(width: u32, height: u32, mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        debug_assert!(indices
            .last()
            .is_none_or(|&i| (i as usize) < width as usize * height as usize));
        Self { width, height, indices }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: impl IntoIterator<Item = Pixel>) -> Self {
        let indices = pixels
            .into_iter()
            .filter(|p| p.x < width && p.y < height)
            .map(|p| p.y * width + p.x)
            .collect();
        Self::from_indices(width, height, indices)
    }

    pub fn area(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.indices
            .iter()
            .map(move |&i| Pixel::new(i % self.width, i / self.width))
    }

    pub fn contains(&self, pixel: Pixel) -> bool {
        pixel.x < self.width
            && pixel.y < self.height
            && self.indices.binary_search(&(pixel.y * self.width + pixel.x)).is_ok()
    }

    pub fn is_subset_of(&self, other: &Footprint) -> bool {
        let mut it = other.indices.iter().peekable();
        'outer: for &i in &self.indices {
            while let Some(&&j) = it.peek() {
                if j == i {
                    it.next();
                    continue 'outer;
                }
                if j > i {
                    return false;
                }
                it.next();
            }
            return false;
        }
        true
    }
}

/// Per-pixel minimum depth; `+inf` where nothing was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    width: u32,
    height: u32,
    depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, pixel: Pixel) -> f64 {
        self.depth[(pixel.y * self.width + pixel.x) as usize]
    }

    pub fn at_index(&self, index: u32) -> f64 {
        self.depth[index as usize]
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    fn splat_min(&mut self, index: u32, depth: f64) {
        let d = &mut self.depth[index as usize];
        if depth < *d {
            *d = depth;
        }
    }
}

/// Pixel radius of a splat of world radius `radius` at `depth`.
pub fn splat_pixel_radius(view: &CameraView, radius: f64, depth: f64) -> i64 {
    let r = (view.fx * radius / depth).round();
    let cap = view.width.max(view.height) as f64;
    r.clamp(1.0, cap) as i64
}

/// Calls `f(row_major_index, depth)` for every in-bounds pixel of the
/// splat disc of `point`. Points with depth <= 0 draw nothing.
pub(crate) fn for_each_splat_pixel(
    view: &CameraView,
    point: &nalgebra::Point3<f64>,
    radius: f64,
    mut f: impl FnMut(u32, f64),
) {
    let Some((u, v, depth)) = view.project_continuous(point) else {
        return;
    };
    let r = splat_pixel_radius(view, radius, depth);
    let (w, h) = (view.width as i64, view.height as i64);
    let (ux, vy) = (u.round(), v.round());
    // reject centres so far out that no disc pixel can land in the image
    if !(ux > -(r as f64) - 1.0 && vy > -(r as f64) - 1.0 && ux < (w + r + 1) as f64 && vy < (h + r + 1) as f64) {
        return;
    }
    let (cx, cy) = (ux as i64, vy as i64);
    let r2 = r * r;
    for dy in -r..=r {
        let y = cy + dy;
        if y < 0 || y >= h {
            continue;
        }
        for dx in -r..=r {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let x = cx + dx;
            if x < 0 || x >= w {
                continue;
            }
            f((y * w + x) as u32, depth);
        }
    }
}

/// Occlusion-free projection: union of the splat discs of all points.
pub fn splat_footprint(view: &CameraView, points: &PointCloud, radius: f64) -> Footprint {
    let mut indices = Vec::new();
    for p in points.iter() {
        for_each_splat_pixel(view, p, radius, |i, _| indices.push(i));
    }
    Footprint::from_indices(view.width, view.height, indices)
}

/// Z-buffer of all occluder splats.
pub fn build_depth_buffer(view: &CameraView, occluders: &PointCloud, radius: f64) -> DepthBuffer {
    let mut buffer = DepthBuffer::new(view.width, view.height);
    for p in occluders.iter() {
        for_each_splat_pixel(view, p, radius, |i, d| buffer.splat_min(i, d));
    }
    buffer
}

/// Occlusion-free and occlusion-aware footprints of `points` in one pass.
///
/// A splat pixel is visible when the point's depth is within
/// `depth_tolerance` of the front-most depth at that pixel, where the
/// front-most depth accounts for both `buffer` and `points` themselves.
/// `buffer` therefore may or may not already contain `points`.
pub fn project_with_occlusion(
    view: &CameraView,
    points: &PointCloud,
    buffer: &DepthBuffer,
    radius: f64,
    depth_tolerance: f64,
) -> (Footprint, Footprint) {
    assert_eq!(
        (buffer.width, buffer.height),
        (view.width, view.height),
        "buffer size does not match view"
    );
    let mut splats: Vec<(u32, f64)> = Vec::new();
    for p in points.iter() {
        for_each_splat_pixel(view, p, radius, |i, d| splats.push((i, d)));
    }
    splats.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut free = Vec::new();
    let mut visible = Vec::new();
    let mut k = 0;
    while k < splats.len() {
        // first entry of each run holds the subcluster's own minimum depth
        let (index, nearest) = splats[k];
        free.push(index);
        // nearest <= min(buffer, nearest) + tol  <=>  nearest <= buffer + tol
        if nearest <= buffer.at_index(index) + depth_tolerance {
            visible.push(index);
        }
        while k < splats.len() && splats[k].0 == index {
            k += 1;
        }
    }
    (
        Footprint {
            width: view.width,
            height: view.height,
            indices: free,
        },
        Footprint {
            width: view.width,
            height: view.height,
            indices: visible,
        },
    )
}

/// Occlusion-aware projection of a subcluster against `buffer`.
pub fn visible_footprint(
    view: &CameraView,
    subcluster: &PointCloud,
    buffer: &DepthBuffer,
    radius: f64,
    depth_tolerance: f64,
) -> Footprint {
    project_with_occlusion(view, subcluster, buffer, radius, depth_tolerance).1
}

/// Median nearest-neighbour distance over a seeded sample of
/// `min(sample_size, n)` points.
pub fn estimate_point_radius(cloud: &PointCloud, sample_size: usize) -> Result<f64> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if sample_size == 0 {
        return Err(Error::InvalidParameter("radius sample size must be at least 1".into()));
    }
    let cell = grid_cell_for(cloud)?;
    let grid = VoxelGrid::new(&cloud.points, cell);

    let mut rng = ChaCha8Rng::seed_from_u64(RADIUS_SAMPLE_SEED);
    let mut sample = rand::seq::index::sample(&mut rng, n, sample_size.min(n)).into_vec();
    sample.sort_unstable();
    let mut dists: Vec<f64> = sample.iter().map(|&i| grid.nearest_other(i).expect("n >= 2")).collect();
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if !(median > 0.0) {
        return Err(Error::InvalidParameter(
            "nearest-neighbour distance is zero (duplicate points); set an explicit splat radius".into(),
        ));
    }
    Ok(median)
}

fn grid_cell_for(cloud: &PointCloud) -> Result<f64> {
    if !cloud.is_finite() {
        return Err(Error::InvalidParameter("cloud has non-finite coordinates".into()));
    }
    let mut lo = cloud.points[0].coords;
    let mut hi = lo;
    for p in cloud.iter() {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    let extent = (hi - lo).max();
    if extent <= 0.0 {
        return Err(Error::InvalidParameter(
            "all points coincide; set an explicit splat radius".into(),
        ));
    }
    // surfaces are closer to n^(1/2) points per side than n^(1/3)
    Ok(extent / (cloud.len() as f64).sqrt().max(1.0))
}
