//! Label-level mask corruption. Only pixel labels change, never geometry.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::InstanceMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Probability that a view has one pair of touching instances fused.
    pub merge_prob: f64,
    /// Probability of erasing each instance in a view.
    pub drop_prob: f64,
    /// Positive values dilate every instance by this many pixels, negative
    /// values erode.
    pub boundary_radius: i32,
    /// Probability of shifting a whole view's labels.
    pub jitter_prob: f64,
    /// Largest shift per axis, pixels.
    pub jitter_pixels: u32,
    /// Restrict corruption to these views; `None` corrupts every view.
    pub views: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            merge_prob: 0.0,
            drop_prob: 0.0,
            boundary_radius: 0,
            jitter_prob: 0.0,
            jitter_pixels: 2,
            views: None,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("merge_prob", self.merge_prob),
            ("drop_prob", self.drop_prob),
            ("jitter_prob", self.jitter_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum CorruptionOp {
    /// `absorbed` now carries the id `kept`.
    Merge {
        kept: u32,
        absorbed: u32,
    },
    Drop {
        id: u32,
    },
    Dilate {
        radius: u32,
    },
    Erode {
        radius: u32,
    },
    Jitter {
        dx: i32,
        dy: i32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionEvent {
    pub view: usize,
    #[serde(flatten)]
    pub op: CorruptionOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedMasks {
    pub masks: Vec<InstanceMask>,
    pub log: Vec<CorruptionEvent>,
}

impl CorruptedMasks {
    /// Views touched by at least one merge.
    pub fn merged_views(&self) -> BTreeSet<usize> {
        self.log
            .iter()
            .filter(|e| matches!(e.op, CorruptionOp::Merge { .. }))
            .map(|e| e.view)
            .collect()
    }
}

/// Apply merges, drops, boundary changes and jitter, in that order, to
/// each selected view. View `j` draws from its own random stream, so the
/// result for a view does not depend on the others.
pub fn corrupt_masks(masks: &[InstanceMask], spec: &CorruptionSpec) -> Result<CorruptedMasks> {
    spec.validate()?;
    let selected: Option<BTreeSet<usize>> = spec.views.as_ref().map(|v| v.iter().copied().collect());
    let mut out = Vec::with_capacity(masks.len());
    let mut log = Vec::new();
    for (j, mask) in masks.iter().enumerate() {
        if selected.as_ref().is_some_and(|s| !s.contains(&j)) {
            out.push(mask.clone());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(j as u64);
        let mut m = mask.clone();

        if spec.merge_prob > 0.0 && rng.random_bool(spec.merge_prob) {
            let pairs = mask_adjacency(&m);
            let pick: Vec<(u32, u32)> = match pairs.len() {
                0 => Vec::new(),
                n => vec![pairs[rng.random_range(0..n)]],
            };
            for (kept, absorbed) in merge_instances(&mut m, &pick) {
                log.push(CorruptionEvent {
                    view: j,
                    op: CorruptionOp::Merge { kept, absorbed },
                });
            }
        }
        if spec.drop_prob > 0.0 {
            for id in m.instance_ids() {
                if rng.random_bool(spec.drop_prob) {
                    drop_instance(&mut m, id);
                    log.push(CorruptionEvent {
                        view: j,
                        op: CorruptionOp::Drop { id },
                    });
                }
            }
        }
        if spec.boundary_radius != 0 {
            m = dilate_or_erode(&m, spec.boundary_radius);
            let radius = spec.boundary_radius.unsigned_abs();
            let op = if spec.boundary_radius > 0 {
                CorruptionOp::Dilate { radius }
            } else {
                CorruptionOp::Erode { radius }
            };
            log.push(CorruptionEvent { view: j, op });
        }
        if spec.jitter_prob > 0.0 && spec.jitter_pixels > 0 && rng.random_bool(spec.jitter_prob) {
            let s = spec.jitter_pixels as i32;
            let (dx, dy) = loop {
                let d = (rng.random_range(-s..=s), rng.random_range(-s..=s));
                if d != (0, 0) {
                    break d;
                }
            };
            m = jitter_mask(&m, dx, dy);
            log.push(CorruptionEvent {
                view: j,
                op: CorruptionOp::Jitter { dx, dy },
            });
        }
        out.push(m);
    }
    Ok(CorruptedMasks { masks: out, log })
}

/// Pairs `(a, b)`, `a < b`, of instances that share a 4-connected boundary.
pub fn mask_adjacency(mask: &InstanceMask) -> Vec<(u32, u32)> {
    let (w, h) = (mask.width(), mask.height());
    let mut pairs = BTreeSet::new();
    let mut note = |a: u32, b: u32| {
        if a != 0 && b != 0 && a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    };
    for y in 0..h {
        for x in 0..w {
            let l = mask.get(x, y);
            if x + 1 < w {
                note(l, mask.get(x + 1, y));
            }
            if y + 1 < h {
                note(l, mask.get(x, y + 1));
            }
        }
    }
    pairs.into_iter().collect()
}

/// Fuse each pair into one instance carrying the smallest id of its group.
/// Returns `(kept, absorbed)` for every id that disappeared.
pub fn merge_instances(mask: &mut InstanceMask, pairs: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let mut ids: Vec<u32> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    ids.sort_unstable();
    ids.dedup();
    let slot = |id: u32| ids.binary_search(&id).unwrap();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, slot(a)), find(&mut parent, slot(b)));
        // the smaller slot (smaller id) becomes the root
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let target: Vec<u32> = (0..ids.len()).map(|i| ids[find(&mut parent, i)]).collect();
    for l in mask.labels_mut() {
        if let Ok(i) = ids.binary_search(l) {
            *l = target[i];
        }
    }
    ids.iter()
        .zip(&target)
        .filter(|(id, t)| id != t)
        .map(|(&id, &t)| (t, id))
        .collect()
}

pub fn drop_instance(mask: &mut InstanceMask, id: u32) {
    for l in mask.labels_mut() {
        if *l == id {
            *l = 0;
        }
    }
}

/// Grow (`radius > 0`) or shrink (`radius < 0`) every instance by a disc
/// of `|radius|` pixels. Growth fills background with the nearest
/// instance's id (ties to the smaller id); shrinking clears every instance
/// pixel with a differently labeled pixel inside the disc.
pub fn dilate_or_erode(mask: &InstanceMask, radius: i32) -> InstanceMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let r = radius.unsigned_abs() as i64;
    let mut offsets: Vec<(i64, i64, i64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = dx * dx + dy * dy;
            if d2 <= r * r && d2 > 0 {
                offsets.push((d2, dx, dy));
            }
        }
    }
    offsets.sort_unstable();
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            let l = mask.get(x as u32, y as u32);
            let around = offsets.iter().filter_map(|&(d2, dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| (d2, mask.get(nx as u32, ny as u32)))
            });
            if radius > 0 && l == 0 {
                let mut best: Option<(i64, u32)> = None;
                for (d2, n) in around {
                    if n == 0 {
                        continue;
                    }
                    match best {
                        Some((bd, _)) if d2 > bd => break,
                        Some((bd, bid)) if d2 == bd && n >= bid => {}
                        _ => best = Some((d2, n)),
                    }
                }
                if let Some((_, id)) = best {
                    out.set(x as u32, y as u32, id);
                }
            } else if radius < 0 && l != 0 && around.into_iter().any(|(_, n)| n != l) {
                out.set(x as u32, y as u32, 0);
            }
        }
    }
    out
}

/// Shift all labels by `(dx, dy)`; uncovered pixels become background.
pub fn jitter_mask(mask: &InstanceMask, dx: i32, dy: i32) -> InstanceMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = InstanceMask::new(mask.width(), mask.height());
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x - dx as i64, y - dy as i64);
            if sx >= 0 && sy >= 0 && sx < w && sy < h {
                out.set(x as u32, y as u32, mask.get(sx as u32, sy as u32));
            }
        }
    }
    out
}
