//! Two-phase partitioning of the crop cloud: DBSCAN superclusters (noise
//! dropped), then k-means subclusters inside each supercluster.

use std::collections::VecDeque;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::scene::PointCloud;

pub const DEFAULT_EPS: f64 = 0.02;
pub const DEFAULT_MIN_POINTS: usize = 30;
pub const DEFAULT_K: usize = 10;

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_REL_TOL: f64 = 1e-6;

/// A spatially isolated group of crop points.
#[derive(Debug, Clone, PartialEq)]
pub struct Supercluster {
    pub id: usize,
    /// Indices into the crop cloud, ascending.
    pub indices: Vec<usize>,
    pub points: PointCloud,
}

impl Supercluster {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A k-means fragment of one supercluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Subcluster {
    pub supercluster: usize,
    pub index: usize,
    /// Indices into the crop cloud, ascending.
    pub indices: Vec<usize>,
    pub points: PointCloud,
    pub centroid: Point3<f64>,
}

/// The whole cloud as a single supercluster, no outlier removal.
pub fn whole_cloud_supercluster(cloud: &PointCloud) -> Vec<Supercluster> {
    if cloud.is_empty() {
        return Vec::new();
    }
    vec![Supercluster {
        id: 0,
        indices: (0..cloud.len()).collect(),
        points: cloud.clone(),
    }]
}

/// DBSCAN with a Euclidean metric. Neighbourhoods include the query point
/// itself; noise is discarded. Output is ordered by each cluster's smallest
/// point index and ids are assigned in that order.
pub fn dbscan_superclusters(cloud: &PointCloud, eps: f64, min_points: usize) -> Result<Vec<Supercluster>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if min_points == 0 {
        return Err(Error::InvalidParameter("min_points must be at least 1".into()));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let labels = dbscan_labels(&cloud.points, eps, min_points);

    let cluster_count = labels.iter().filter_map(|l| *l).max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cluster_count];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(i);
        }
    }
    members.sort_by_key(|m| m[0]);
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(id, indices)| Supercluster {
            id,
            points: cloud.select(&indices),
            indices,
        })
        .collect())
}

/// Per-point cluster index (`None` = noise).
fn dbscan_labels(points: &[Point3<f64>], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Cluster(usize),
    }
    let grid = VoxelGrid::new(points, eps);
    let mut state = vec![State::Unvisited; points.len()];
    let mut nbrs = Vec::new();
    let mut queue = VecDeque::new();
    let mut next = 0usize;

    for i in 0..points.len() {
        if state[i] != State::Unvisited {
            continue;
        }
        grid.within(&points[i], eps, &mut nbrs);
        if nbrs.len() < min_points {
            state[i] = State::Noise;
            continue;
        }
        let c = next;
        next += 1;
        state[i] = State::Cluster(c);
        queue.extend(nbrs.iter().map(|&j| j as usize));
        while let Some(q) = queue.pop_front() {
            match state[q] {
                State::Cluster(_) => continue,
                State::Noise => {
                    // border point, reachable but not core
                    state[q] = State::Cluster(c);
                    continue;
                }
                State::Unvisited => {}
            }
            state[q] = State::Cluster(c);
            grid.within(&points[q], eps, &mut nbrs);
            if nbrs.len() >= min_points {
                queue.extend(
                    nbrs.iter()
                        .map(|&j| j as usize)
                        .filter(|&j| !matches!(state[j], State::Cluster(_))),
                );
            }
        }
    }
    state
        .into_iter()
        .map(|s| match s {
            State::Cluster(c) => Some(c),
            _ => None,
        })
        .collect()
}

/// Split a supercluster into `min(k, len)` non-empty subclusters with
/// Lloyd's algorithm from k-means++ seeding. Subclusters are ordered by
/// their smallest point index.
pub fn kmeans_subclusters(supercluster: &Supercluster, k: usize, seed: u64) -> Result<Vec<Subcluster>> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if supercluster.is_empty() {
        return Err(Error::EmptySupercluster);
    }
    let points = &supercluster.points.points;
    let assignment = kmeans_assign(points, k.min(points.len()), seed);
    let k_eff = k.min(points.len());

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k_eff];
    for (local, &c) in assignment.iter().enumerate() {
        groups[c].push(local);
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(index, local)| {
            let pts: PointCloud = local.iter().map(|&l| points[l]).collect();
            let centroid = pts.centroid().expect("non-empty by construction");
            Subcluster {
                supercluster: supercluster.id,
                index,
                indices: local.iter().map(|&l| supercluster.indices[l]).collect(),
                points: pts,
                centroid,
            }
        })
        .collect())
}

/// Cluster index in `0..k` for every point; every cluster is non-empty.
/// Requires `1 <= k <= points.len()`.
pub(crate) fn kmeans_assign(points: &[Point3<f64>], k: usize, seed: u64) -> Vec<usize> {
    debug_assert!(k >= 1 && k <= points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lloyd(points, k, &mut rng)
}

fn lloyd(points: &[Point3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers = kmeans_plus_plus(points, k, rng);

    let mut labels = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest_center(p, &centers).0;
        }
        repair_empty(points, &mut labels, &centers, k);
        centers = means(points, &labels, k);
        let inertia: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &c)| (p - centers[c]).norm_squared())
            .sum();
        let done = inertia == 0.0
            || (prev_inertia.is_finite() && (prev_inertia - inertia).abs() <= KMEANS_REL_TOL * prev_inertia);
        prev_inertia = inertia;
        if done {
            break;
        }
    }
    labels
}

fn nearest_center(p: &Point3<f64>, centers: &[Point3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = (p - center).norm_squared();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Point3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    acc += d;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // only duplicates of existing centres remain
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        centers.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[pick]).norm_squared());
        }
    }
    centers
}

/// Move the farthest member of the largest cluster into each empty cluster.
fn repair_empty(points: &[Point3<f64>], labels: &mut [usize], centers: &[Point3<f64>], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in labels.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
        let centroid = mean_of(points, labels, largest).unwrap_or(centers[largest]);
        let far = labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == largest)
            .map(|(i, _)| i)
            .fold((usize::MAX, -1.0), |best, i| {
                let d = (points[i] - centroid).norm_squared();
                if d > best.1 {
                    (i, d)
                } else {
                    best
                }
            })
            .0;
        labels[far] = empty;
    }
}

fn mean_of(points: &[Point3<f64>], labels: &[usize], c: usize) -> Option<Point3<f64>> {
    let (sum, count) = points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == c)
        .fold((Vector3::zeros(), 0usize), |(s, n), (p, _)| (s + p.coords, n + 1));
    (count > 0).then(|| Point3::from(sum / count as f64))
}

fn means(points: &[Point3<f64>], labels: &[usize], k: usize) -> Vec<Point3<f64>> {
    let mut sums = vec![Vector3::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        sums[c] += p.coords;
        counts[c] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| Point3::from(s / n.max(1) as f64))
        .collect()
}
