//! Per-(subcluster, view) visibility, mask consistency, label and
//! reliability scores.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::partition::Subcluster;
use crate::projection::{build_depth_buffer, project_with_occlusion, DepthBuffer, Footprint};
use crate::scene::{validate_dataset, Dataset, InstanceMask};

/// Scores of one subcluster in one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewScore {
    /// Visibility: visible area over occlusion-free area.
    pub v: f64,
    /// Mask consistency: best single-instance overlap over visible area.
    pub c: f64,
    /// Reliability, always `v * c`.
    pub r: f64,
    /// View-local instance id with the largest overlap; absent iff `c == 0`.
    pub label: Option<u32>,
    /// Raw pixel counts behind the ratios.
    pub occlusion_free_area: usize,
    pub visible_area: usize,
    pub best_overlap: usize,
}

impl ViewScore {
    pub const ZERO: ViewScore = ViewScore {
        v: 0.0,
        c: 0.0,
        r: 0.0,
        label: None,
        occlusion_free_area: 0,
        visible_area: 0,
        best_overlap: 0,
    };

    pub fn from_footprints(occlusion_free: &Footprint, visible: &Footprint, mask: &InstanceMask) -> Self {
        let v = visibility_score(occlusion_free, visible);
        let (c, label, best_overlap) = consistency_with_overlap(visible, mask);
        ViewScore {
            v,
            c,
            r: reliability_score(v, c),
            label,
            occlusion_free_area: occlusion_free.area(),
            visible_area: visible.area(),
            best_overlap,
        }
    }
}

/// Visible area over occlusion-free area; 0 when nothing projects.
pub fn visibility_score(occlusion_free: &Footprint, visible: &Footprint) -> f64 {
    debug_assert!(visible.area() <= occlusion_free.area());
    if occlusion_free.area() == 0 {
        return 0.0;
    }
    visible.area() as f64 / occlusion_free.area() as f64
}

/// Fraction of the visible footprint covered by its best-overlapping
/// instance, and that instance's id. Background never wins; ties go to the
/// smallest id. `(0, None)` when nothing visible overlaps an instance.
pub fn consistency_score(visible: &Footprint, mask: &InstanceMask) -> (f64, Option<u32>) {
    let (c, label, _) = consistency_with_overlap(visible, mask);
    (c, label)
}

fn consistency_with_overlap(visible: &Footprint, mask: &InstanceMask) -> (f64, Option<u32>, usize) {
    assert_eq!(
        (visible.width(), visible.height()),
        (mask.width(), mask.height()),
        "mask size does not match the view"
    );
    if visible.is_empty() {
        return (0.0, None, 0);
    }
    let labels = mask.labels();
    let mut overlap: BTreeMap<u32, usize> = BTreeMap::new();
    for &i in visible.indices() {
        let id = labels[i as usize];
        if id > 0 {
            *overlap.entry(id).or_default() += 1;
        }
    }
    let mut best: Option<(u32, usize)> = None;
    for (&id, &count) in &overlap {
        if best.is_none_or(|(_, b)| count > b) {
            best = Some((id, count));
        }
    }
    match best {
        Some((id, count)) => (count as f64 / visible.area() as f64, Some(id), count),
        None => (0.0, None, 0),
    }
}

pub fn reliability_score(v: f64, c: f64) -> f64 {
    v * c
}

/// Dense `(subcluster, view)` table of scores for one supercluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    subclusters: usize,
    views: usize,
    cells: Vec<ViewScore>,
}

impl ScoreTable {
    /// Row-major cells: `cells[i * views + j]`.
    pub fn from_cells(subclusters: usize, views: usize, cells: Vec<ViewScore>) -> Self {
        assert_eq!(cells.len(), subclusters * views, "score table must be complete");
        Self {
            subclusters,
            views,
            cells,
        }
    }

    pub fn subcluster_count(&self) -> usize {
        self.subclusters
    }

    pub fn view_count(&self) -> usize {
        self.views
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &ViewScore {
        &self.cells[i * self.views + j]
    }

    pub fn row(&self, i: usize) -> &[ViewScore] {
        &self.cells[i * self.views..(i + 1) * self.views]
    }

    pub fn cells(&self) -> &[ViewScore] {
        &self.cells
    }

    /// Copy with every reliability multiplied by `gamma`.
    pub fn scaled_reliability(&self, gamma: f64) -> ScoreTable {
        let cells = self.cells.iter().map(|s| ViewScore { r: s.r * gamma, ..*s }).collect();
        ScoreTable { cells, ..*self }
    }

    /// Tab-separated dump, one row per cell: `i j v c r label`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "i\tj\tv\tc\tr\tlabel")?;
        for i in 0..self.subclusters {
            for j in 0..self.views {
                let s = self.get(i, j);
                let label = s.label.map_or_else(|| "-".to_string(), |l| l.to_string());
                writeln!(out, "{i}\t{j}\t{}\t{}\t{}\t{label}", s.v, s.c, s.r)?;
            }
        }
        Ok(())
    }
}

/// One environment depth buffer per view, shared by all subcluster queries.
#[derive(Debug, Clone)]
pub struct ViewBuffers {
    buffers: Vec<DepthBuffer>,
}

impl ViewBuffers {
    pub fn build(dataset: &Dataset, radius: f64) -> Self {
        let buffers = dataset
            .views
            .par_iter()
            .map(|view| build_depth_buffer(&view.camera, &dataset.env_cloud, radius))
            .collect();
        Self { buffers }
    }

    pub fn get(&self, view: usize) -> &DepthBuffer {
        &self.buffers[view]
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }
}

/// Scores for every (subcluster, view) pair, reusing prebuilt buffers.
/// The subcluster itself is always treated as part of the occluder set.
pub fn score_table_with_buffers(
    subclusters: &[Subcluster],
    dataset: &Dataset,
    buffers: &ViewBuffers,
    radius: f64,
    depth_tolerance: f64,
) -> ScoreTable {
    let n = dataset.views.len();
    assert_eq!(buffers.len(), n, "one depth buffer per view");
    let cells = (0..subclusters.len() * n)
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            let view = &dataset.views[j];
            let (free, visible) = project_with_occlusion(
                &view.camera,
                &subclusters[i].points,
                buffers.get(j),
                radius,
                depth_tolerance,
            );
            ViewScore::from_footprints(&free, &visible, &view.mask)
        })
        .collect();
    ScoreTable::from_cells(subclusters.len(), n, cells)
}

/// Validates the dataset, builds per-view buffers from the environment
/// cloud and scores every pair.
pub fn build_score_table(
    subclusters: &[Subcluster],
    dataset: &Dataset,
    radius: f64,
    depth_tolerance: f64,
) -> Result<ScoreTable> {
    let report = validate_dataset(dataset);
    if report.has_fatal() {
        return Err(Error::InvalidDataset(report.fatal().map(|f| f.to_string()).collect()));
    }
    if !(radius > 0.0) || !(depth_tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need radius > 0 and depth tolerance >= 0 (got {radius}, {depth_tolerance})"
        )));
    }
    let buffers = ViewBuffers::build(dataset, radius);
    Ok(score_table_with_buffers(
        subclusters,
        dataset,
        &buffers,
        radius,
        depth_tolerance,
    ))
}

/// Score tables for several groups of subclusters at once, one view at a
/// time: each view's buffer is built, used for every subcluster of every
/// group, and dropped, so memory holds one buffer per worker rather than
/// one per view. Inputs are assumed validated.
pub fn score_tables_by_view(
    groups: &[Vec<Subcluster>],
    dataset: &Dataset,
    radius: f64,
    depth_tolerance: f64,
) -> Vec<ScoreTable> {
    let n = dataset.views.len();
    let columns: Vec<Vec<Vec<ViewScore>>> = dataset
        .views
        .par_iter()
        .map(|view| {
            let buffer = build_depth_buffer(&view.camera, &dataset.env_cloud, radius);
            groups
                .iter()
                .map(|group| {
                    group
                        .iter()
                        .map(|sub| {
                            let (free, visible) =
                                project_with_occlusion(&view.camera, &sub.points, &buffer, radius, depth_tolerance);
                            ViewScore::from_footprints(&free, &visible, &view.mask)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let mut cells = Vec::with_capacity(group.len() * n);
            for i in 0..group.len() {
                cells.extend(columns.iter().map(|col| col[g][i]));
            }
            ScoreTable::from_cells(group.len(), n, cells)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{CameraView, Pixel, PointCloud, View};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn footprint(w: u32, h: u32, pixels: &[(u32, u32)]) -> Footprint {
        Footprint::from_pixels(w, h, pixels.iter().map(|&(x, y)| Pixel::new(x, y)))
    }

    fn square(x0: u32, y0: u32, side: u32) -> Vec<(u32, u32)> {
        (y0..y0 + side)
            .flat_map(|y| (x0..x0 + side).map(move |x| (x, y)))
            .collect()
    }

    #[test]
    fn visibility_ratios() {
        let full = footprint(20, 20, &square(0, 0, 10));
        assert_eq!(visibility_score(&full, &full), 1.0);
        assert_eq!(visibility_score(&full, &Footprint::empty(20, 20)), 0.0);
        let empty = Footprint::empty(20, 20);
        assert_eq!(visibility_score(&empty, &empty), 0.0);
    }

    #[test]
    fn footprint_inside_one_instance() {
        let mut mask = InstanceMask::new(20, 20);
        for (x, y) in square(0, 0, 15) {
            mask.set(x, y, 4);
        }
        let fp = footprint(20, 20, &square(2, 2, 5));
        assert_eq!(consistency_score(&fp, &mask), (1.0, Some(4)));
    }

    #[test]
    fn background_only_overlap_has_no_label() {
        let mut mask = InstanceMask::new(20, 20);
        mask.set(19, 19, 2);
        let fp = footprint(20, 20, &square(0, 0, 5));
        assert_eq!(consistency_score(&fp, &mask), (0.0, None));
        assert_eq!(consistency_score(&Footprint::empty(20, 20), &mask), (0.0, None));
    }

    #[test]
    fn even_split_goes_to_smaller_id() {
        // 10 x 10 footprint: left half id 7, right half id 3
        let mut mask = InstanceMask::new(20, 20);
        for (x, y) in square(0, 0, 10) {
            mask.set(x, y, if x < 5 { 7 } else { 3 });
        }
        let fp = footprint(20, 20, &square(0, 0, 10));
        assert_eq!(fp.area(), 100);
        let (c, label) = consistency_score(&fp, &mask);
        assert_eq!(c, 0.5);
        assert_eq!(label, Some(3));
    }

    #[test]
    fn reliability_examples() {
        assert_eq!(reliability_score(1.0, 1.0), 1.0);
        assert_eq!(reliability_score(0.0, 0.7), 0.0);
        assert_eq!(reliability_score(0.5, 0.5), 0.25);
    }

    #[test]
    fn reliability_equals_direct_ratio() {
        // occlusion-free 10x10; visible = left 5 columns; mask covers 25 of those
        let free = footprint(20, 20, &square(0, 0, 10));
        let visible = footprint(
            20,
            20,
            &square(0, 0, 10).into_iter().filter(|&(x, _)| x < 5).collect::<Vec<_>>(),
        );
        let mut mask = InstanceMask::new(20, 20);
        for (x, y) in square(0, 0, 10) {
            if x < 5 && y < 5 {
                mask.set(x, y, 1);
            }
        }
        let s = ViewScore::from_footprints(&free, &visible, &mask);
        assert_eq!((s.v, s.c), (0.5, 0.5));
        assert_eq!(s.r, 0.25);
        // cancellation: r = max overlap / occlusion-free area
        assert_eq!(s.r, 25.0 / 100.0);
    }

    fn sphere(center: Point3<f64>, radius: f64, n: usize) -> PointCloud {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                center + nalgebra::Vector3::new(r * t.cos(), r * t.sin(), z) * radius
            })
            .collect()
    }

    fn subcluster_from(points: PointCloud) -> Subcluster {
        Subcluster {
            supercluster: 0,
            index: 0,
            indices: (0..points.len()).collect(),
            centroid: points.centroid().unwrap(),
            points,
        }
    }

    #[test]
    fn unoccluded_perfect_mask_gives_unit_scores() {
        let cam = CameraView::identity(200.0, 200.0, 100.0, 100.0, 200, 200);
        let s = sphere(Point3::new(0.0, 0.0, 1.0), 0.05, 500);
        let rho = 0.008;
        let free = crate::projection::splat_footprint(&cam, &s, rho);
        let mut mask = InstanceMask::new(200, 200);
        for p in free.pixels() {
            mask.set(p.x, p.y, 1);
        }
        let ds = Dataset::new(vec![View { camera: cam, mask }], s.clone(), s.clone());
        let table = build_score_table(&[subcluster_from(s)], &ds, rho, 2.0 * rho).unwrap();
        let cell = table.get(0, 0);
        assert_eq!((cell.v, cell.c, cell.r, cell.label), (1.0, 1.0, 1.0, Some(1)));
    }

    #[test]
    fn subcluster_behind_camera_scores_zero() {
        let cam = CameraView::identity(200.0, 200.0, 100.0, 100.0, 200, 200);
        let s = sphere(Point3::new(0.0, 0.0, -1.0), 0.05, 300);
        let ds = Dataset::new(
            vec![View {
                camera: cam,
                mask: InstanceMask::from_labels(200, 200, vec![1; 40_000]),
            }],
            s.clone(),
            s.clone(),
        );
        let table = build_score_table(&[subcluster_from(s)], &ds, 0.01, 0.02).unwrap();
        let cell = table.get(0, 0);
        assert_eq!((cell.v, cell.c, cell.r, cell.label), (0.0, 0.0, 0.0, None));
    }

    #[test]
    fn invalid_dataset_is_rejected() {
        let cam = CameraView::identity(200.0, 200.0, 100.0, 100.0, 200, 200);
        let s = sphere(Point3::new(0.0, 0.0, 1.0), 0.05, 100);
        let ds = Dataset::new(
            vec![View {
                camera: cam,
                mask: InstanceMask::new(10, 10),
            }],
            s.clone(),
            s.clone(),
        );
        assert!(matches!(
            build_score_table(&[subcluster_from(s)], &ds, 0.01, 0.02),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn tsv_dump_has_one_row_per_cell() {
        let table = ScoreTable::from_cells(2, 3, vec![ViewScore::ZERO; 6]);
        let mut buf = Vec::new();
        table.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("0\t0\t0\t0\t0\t-"));
    }

    proptest! {
        #[test]
        fn scores_are_bounded_and_relabel_invariant(
            labels in proptest::collection::vec(0u32..5, 64),
            visible_bits in proptest::collection::vec(any::<bool>(), 64),
            hidden_bits in proptest::collection::vec(any::<bool>(), 64),
            perm_seed in any::<u64>(),
        ) {
            let mask = InstanceMask::from_labels(8, 8, labels.clone());
            let vis_idx: Vec<u32> = (0..64u32).filter(|&i| visible_bits[i as usize]).collect();
            let free_idx: Vec<u32> = (0..64u32).filter(|&i| visible_bits[i as usize] || hidden_bits[i as usize]).collect();
            let visible = Footprint::from_indices(8, 8, vis_idx);
            let free = Footprint::from_indices(8, 8, free_idx);
            let s = ViewScore::from_footprints(&free, &visible, &mask);
            prop_assert!((0.0..=1.0).contains(&s.v));
            prop_assert!((0.0..=1.0).contains(&s.c));
            prop_assert!((0.0..=1.0).contains(&s.r));
            prop_assert_eq!(s.r, s.v * s.c);
            prop_assert_eq!(s.label.is_none(), s.c == 0.0);

            // relabel positive ids with a bijection onto scattered ids
            let mut image: Vec<u32> = vec![11, 250, 3, 7000];
            let mut state = perm_seed;
            for k in (1..image.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                image.swap(k, (state >> 33) as usize % (k + 1));
            }
            let relabel = |l: u32| if l == 0 { 0 } else { image[l as usize - 1] };
            let mask2 = InstanceMask::from_labels(8, 8, labels.iter().map(|&l| relabel(l)).collect());
            let (c2, label2) = consistency_score(&visible, &mask2);
            prop_assert_eq!(c2, s.c);
            prop_assert_eq!(label2.is_some(), s.label.is_some());
            if let (Some(a), Some(b)) = (s.label, label2) {
                // same region, up to ties in overlap
                let overlap = |m: &InstanceMask, id: u32| visible.indices().iter().filter(|&&i| m.labels()[i as usize] == id).count();
                prop_assert_eq!(overlap(&mask2, b), overlap(&mask, a));
                let unique = (1..5u32).filter(|&id| overlap(&mask, id) == overlap(&mask, a)).count() == 1;
                if unique {
                    prop_assert_eq!(b, relabel(a));
                }
            }
        }
    }
}
