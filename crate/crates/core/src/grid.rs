//! Uniform voxel hash over point indices, used for fixed-radius and
//! nearest-neighbour queries.

use std::collections::HashMap;

use nalgebra::Point3;

type Cell = (i64, i64, i64);

pub struct VoxelGrid<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl<'a> VoxelGrid<'a> {
    pub fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell)).or_default().push(i as u32);
        }
        Self { points, cell, cells }
    }

    /// Indices of all points within `radius` of `p` (inclusive), ascending.
    /// `radius` must not exceed the cell size.
    pub fn within(&self, p: &Point3<f64>, radius: f64, out: &mut Vec<u32>) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        out.clear();
        let r2 = radius * radius;
        let (cx, cy, cz) = cell_of(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if (self.points[j as usize] - p).norm_squared() <= r2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// Distance from point `i` to its nearest other point, or `None` when
    /// the grid holds a single point.
    pub fn nearest_other(&self, i: usize) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let p = &self.points[i];
        let (cx, cy, cz) = cell_of(p, self.cell);
        let mut best = f64::INFINITY;
        let mut ring: i64 = 0;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in bucket {
                                if j as usize != i {
                                    best = best.min((self.points[j as usize] - p).norm_squared());
                                }
                            }
                        }
                    }
                }
            }
            // every point in ring r+1 or beyond is at least r * cell away
            let reach = ring as f64 * self.cell;
            if best.is_finite() && best.sqrt() <= reach {
                return Some(best.sqrt());
            }
            ring += 1;
        }
    }
}

fn cell_of(p: &Point3<f64>, cell: f64) -> Cell {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
