//! Subcluster affinities, the signed affinity graph, label propagation and
//! instance counting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Subcluster;
use crate::scoring::{ScoreTable, ViewScore};

pub const LPA_MAX_PASSES: usize = 100;

/// How subclusters are merged into instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeVariant {
    /// Sum of label agreement signs, merge pairs with positive sum.
    Baseline,
    /// Signs weighted by both visibility scores, merge pairs with positive sum.
    Visibility,
    /// Signs weighted by both consistency scores, merge pairs with positive sum.
    Mask,
    /// Full reliability-weighted affinity, merge pairs with positive sum.
    ReliabilityThreshold,
    /// Full reliability-weighted affinity, partitioned by label propagation.
    FullLpa,
}

impl MergeVariant {
    pub const ALL: [MergeVariant; 5] = [
        MergeVariant::Baseline,
        MergeVariant::Visibility,
        MergeVariant::Mask,
        MergeVariant::ReliabilityThreshold,
        MergeVariant::FullLpa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MergeVariant::Baseline => "baseline",
            MergeVariant::Visibility => "visibility",
            MergeVariant::Mask => "mask",
            MergeVariant::ReliabilityThreshold => "reliability-threshold",
            MergeVariant::FullLpa => "full-lpa",
        }
    }

    fn term_weight(self, a: &ViewScore, b: &ViewScore) -> f64 {
        match self {
            MergeVariant::Baseline => 1.0,
            MergeVariant::Visibility => a.v * b.v,
            MergeVariant::Mask => a.c * b.c,
            MergeVariant::ReliabilityThreshold | MergeVariant::FullLpa => a.r * b.r,
        }
    }
}

impl fmt::Display for MergeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MergeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MergeVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// +1 for matching labels, -1 for different labels, 0 if either is absent.
#[inline]
fn agreement(a: &ViewScore, b: &ViewScore) -> f64 {
    match (a.label, b.label) {
        (Some(x), Some(y)) if x == y => 1.0,
        (Some(_), Some(_)) => -1.0,
        _ => 0.0,
    }
}

fn variant_affinity(table: &ScoreTable, i: usize, k: usize, variant: MergeVariant) -> f64 {
    let (a, b) = (table.row(i), table.row(k));
    let mut sum = 0.0;
    for (sa, sb) in a.iter().zip(b) {
        let s = agreement(sa, sb);
        if s != 0.0 {
            sum += variant.term_weight(sa, sb) * s;
        }
    }
    sum
}

/// Reliability-weighted signed affinity between subclusters `i` and `k`,
/// summed over views in ascending order.
pub fn affinity(table: &ScoreTable, i: usize, k: usize) -> f64 {
    debug_assert_ne!(i, k);
    variant_affinity(table, i, k, MergeVariant::FullLpa)
}

/// Complete signed weighted graph over one supercluster's subclusters.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    nodes: usize,
    weights: Vec<f64>,
}

impl AffinityGraph {
    /// Symmetric `nodes x nodes` matrix, row-major; the diagonal is ignored.
    pub fn from_matrix(nodes: usize, mut weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), nodes * nodes);
        for i in 0..nodes {
            weights[i * nodes + i] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights[i * self.nodes + k]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.nodes).all(|i| (0..self.nodes).all(|k| self.weight(i, k).to_bits() == self.weight(k, i).to_bits()))
    }

    /// Edge list `i, k, alpha` for `i < k`.
    pub fn write_edges<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "i\tk\talpha")?;
        for i in 0..self.nodes {
            for k in i + 1..self.nodes {
                writeln!(out, "{i}\t{k}\t{}", self.weight(i, k))?;
            }
        }
        Ok(())
    }
}

fn variant_graph(table: &ScoreTable, variant: MergeVariant) -> AffinityGraph {
    let m = table.subcluster_count();
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| (i + 1..m).map(|k| variant_affinity(table, i, k, variant)).collect())
        .collect();
    let mut weights = vec![0.0; m * m];
    for (i, row) in upper.iter().enumerate() {
        for (off, &w) in row.iter().enumerate() {
            let k = i + 1 + off;
            weights[i * m + k] = w;
            weights[k * m + i] = w;
        }
    }
    AffinityGraph { nodes: m, weights }
}

pub fn build_affinity_graph(table: &ScoreTable) -> AffinityGraph {
    variant_graph(table, MergeVariant::FullLpa)
}

/// Partition of one supercluster's subclusters into instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceLabeling {
    /// Instance id per subcluster, contiguous from 0 in order of first appearance.
    pub assignment: Vec<usize>,
}

impl InstanceLabeling {
    /// Renumber arbitrary labels to `0..count` by first appearance.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut map = BTreeMap::new();
        let assignment = raw
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Self { assignment }
    }

    pub fn instance_count(&self) -> usize {
        self.assignment.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Signed label propagation from singleton labels.
pub fn label_propagation(graph: &AffinityGraph, seed: u64) -> InstanceLabeling {
    let initial: Vec<usize> = (0..graph.node_count()).collect();
    label_propagation_from(graph, &initial, seed)
}

/// Asynchronous signed label propagation from a given labeling.
///
/// Nodes are visited in a seeded random order each pass. A node moves to
/// the foreign label with the largest positive weight sum when that sum
/// beats its current label's sum (ties keep the current label; among
/// foreign labels the smallest id wins). A node whose current group pulls
/// it negatively and that no foreign label attracts becomes a singleton.
/// Stops after a pass without changes or after [`LPA_MAX_PASSES`].
pub fn label_propagation_from(graph: &AffinityGraph, initial: &[usize], seed: u64) -> InstanceLabeling {
    let m = graph.node_count();
    assert_eq!(initial.len(), m);
    let mut labels = initial.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();

    for _ in 0..LPA_MAX_PASSES {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &u in &order {
            sums.clear();
            for (v, &l) in labels.iter().enumerate() {
                if v != u {
                    *sums.entry(l).or_insert(0.0) += graph.weight(u, v);
                }
            }
            let current = labels[u];
            let own = sums.get(&current).copied().unwrap_or(0.0);
            let mut best: Option<(usize, f64)> = None;
            for (&l, &s) in &sums {
                if l != current && best.is_none_or(|(_, b)| s > b) {
                    best = Some((l, s));
                }
            }
            let best_foreign = best.map_or(f64::NEG_INFINITY, |(_, s)| s);
            let next = match best {
                Some((l, s)) if s > 0.0 && s > own => Some(l),
                _ if own < 0.0 && best_foreign <= 0.0 => Some(unused_label(&labels)),
                _ => None,
            };
            if let Some(l) = next {
                labels[u] = l;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    InstanceLabeling::from_raw(&labels)
}

fn unused_label(labels: &[usize]) -> usize {
    let mut used = labels.to_vec();
    used.sort_unstable();
    used.dedup();
    used.iter()
        .enumerate()
        .find(|(k, &l)| *k != l)
        .map_or(used.len(), |(k, _)| k)
}

/// Union of all pairs with positive affinity under `variant`.
fn threshold_merge(table: &ScoreTable, variant: MergeVariant) -> InstanceLabeling {
    let graph = variant_graph(table, variant);
    let m = graph.node_count();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..m {
        for k in i + 1..m {
            if graph.weight(i, k) > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, k));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..m).map(|i| find(&mut parent, i)).collect();
    InstanceLabeling::from_raw(&roots)
}

/// Partition a supercluster's subclusters with the chosen merge strategy.
pub fn merge_with_variant(table: &ScoreTable, variant: MergeVariant, seed: u64) -> InstanceLabeling {
    match variant {
        MergeVariant::FullLpa => label_propagation(&build_affinity_graph(table), seed),
        other => threshold_merge(table, other),
    }
}

/// Same as [`merge_with_variant`] with the variant given by name.
pub fn merge_strategy_ablation(table: &ScoreTable, variant: &str, seed: u64) -> Result<InstanceLabeling> {
    Ok(merge_with_variant(table, variant.parse()?, seed))
}

/// Instance counts for a whole crop cloud.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub per_supercluster: Vec<usize>,
    pub total: usize,
    /// Global instance id per crop point; `None` for discarded outliers.
    pub point_instances: Vec<Option<usize>>,
}

/// Sum per-supercluster counts and map every crop point to a global
/// instance id (superclusters numbered consecutively in order).
pub fn count_instances(
    labelings: &[InstanceLabeling],
    subclusters: &[Vec<Subcluster>],
    crop_point_count: usize,
) -> CountReport {
    assert_eq!(labelings.len(), subclusters.len(), "one labeling per supercluster");
    let mut point_instances = vec![None; crop_point_count];
    let mut per_supercluster = Vec::with_capacity(labelings.len());
    let mut offset = 0;
    for (labeling, subs) in labelings.iter().zip(subclusters) {
        assert_eq!(labeling.len(), subs.len(), "labeling must cover every subcluster");
        for (sub, &inst) in subs.iter().zip(&labeling.assignment) {
            for &p in &sub.indices {
                point_instances[p] = Some(offset + inst);
            }
        }
        let count = labeling.instance_count();
        per_supercluster.push(count);
        offset += count;
    }
    CountReport {
        total: per_supercluster.iter().sum(),
        per_supercluster,
        point_instances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(r: f64, label: Option<u32>) -> ViewScore {
        ViewScore {
            v: r,
            c: if label.is_some() { 1.0 } else { 0.0 },
            r,
            label,
            ..ViewScore::ZERO
        }
    }

    fn table(rows: Vec<Vec<ViewScore>>) -> ScoreTable {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        ScoreTable::from_cells(m, n, rows.into_iter().flatten().collect())
    }

    #[test]
    fn agreeing_views_add_up() {
        let t = table(vec![vec![score(1.0, Some(1)); 3], vec![score(1.0, Some(1)); 3]]);
        assert_eq!(affinity(&t, 0, 1), 3.0);
    }

    #[test]
    fn disagreeing_views_subtract() {
        let t = table(vec![vec![score(1.0, Some(1)); 3], vec![score(1.0, Some(2)); 3]]);
        assert_eq!(affinity(&t, 0, 1), -3.0);
    }

    #[test]
    fn mixed_views_hand_evaluated() {
        let t = table(vec![
            vec![score(1.0, Some(1)), score(0.5, Some(1)), score(0.0, None)],
            vec![score(1.0, Some(1)), score(0.5, Some(2)), score(0.9, Some(4))],
        ]);
        // 1*1 - 0.5*0.5 + 0
        assert_eq!(affinity(&t, 0, 1), 0.75);
        assert_eq!(affinity(&t, 1, 0), 0.75);
    }

    #[test]
    fn graph_shapes() {
        let one = table(vec![vec![score(1.0, Some(1))]]);
        let g = build_affinity_graph(&one);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.weight(0, 0), 0.0);

        let two = table(vec![vec![score(0.8, Some(1))], vec![score(0.5, Some(1))]]);
        let g = build_affinity_graph(&two);
        assert_eq!(g.weight(0, 1), affinity(&two, 0, 1));
        assert!(g.is_symmetric());
    }

    fn graph(m: usize, w: impl Fn(usize, usize) -> f64) -> AffinityGraph {
        let mut weights = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                if i != k {
                    weights[i * m + k] = w(i.min(k), i.max(k));
                }
            }
        }
        AffinityGraph::from_matrix(m, weights)
    }

    #[test]
    fn all_positive_gives_one_instance() {
        let l = label_propagation(&graph(6, |_, _| 1.0), 3);
        assert_eq!(l.instance_count(), 1);
    }

    #[test]
    fn all_negative_gives_singletons() {
        let l = label_propagation(&graph(6, |_, _| -1.0), 3);
        assert_eq!(l.instance_count(), 6);
        assert_eq!(l.assignment, vec![0, 1, 2, 3, 4, 5]);
    }

    /// Partitions of `0..m` as label vectors in canonical form.
    fn all_partitions(m: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, m: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == m {
                out.push(prefix.clone());
                return;
            }
            let next = prefix.iter().max().map_or(0, |&x| x + 1);
            for l in 0..=next {
                prefix.push(l);
                rec(prefix, m, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), m, &mut out);
        out
    }

    #[test]
    fn two_pairs_split_stably_across_seeds() {
        let g = graph(4, |a, b| if (a < 2) == (b < 2) { 1.0 } else { -1.0 });
        // exhaustive check: the only partition where no node can strictly
        // improve by switching to another group or going solo
        let stable: Vec<Vec<usize>> = all_partitions(4)
            .into_iter()
            .filter(|p| {
                (0..4).all(|u| {
                    let sum = |l: usize| {
                        (0..4)
                            .filter(|&v| v != u && p[v] == l)
                            .map(|v| g.weight(u, v))
                            .sum::<f64>()
                    };
                    let own = sum(p[u]);
                    let groups = p.iter().copied().max().unwrap() + 1;
                    own >= 0.0 && (0..groups).filter(|&l| l != p[u]).all(|l| sum(l) <= own)
                })
            })
            .collect();
        assert_eq!(stable, vec![vec![0, 0, 1, 1]]);
        for seed in 0..20 {
            assert_eq!(label_propagation(&g, seed).assignment, vec![0, 0, 1, 1], "seed {seed}");
        }
    }

    #[test]
    fn repelled_member_leaves_its_group() {
        // start with everyone together; node 2 is pushed out by both others
        let g = graph(3, |a, b| if (a, b) == (0, 1) { 1.0 } else { -1.0 });
        let l = label_propagation_from(&g, &[0, 0, 0], 1);
        assert_eq!(l.assignment, vec![0, 0, 1]);
    }

    #[test]
    fn variant_names_round_trip_and_unknown_fails() {
        for v in MergeVariant::ALL {
            assert_eq!(v.name().parse::<MergeVariant>().unwrap(), v);
        }
        let t = table(vec![vec![score(1.0, Some(1))]]);
        assert!(matches!(
            merge_strategy_ablation(&t, "spectral", 0),
            Err(Error::UnknownVariant(_))
        ));
    }

    #[test]
    fn single_subcluster_is_a_singleton_for_every_variant() {
        let t = table(vec![vec![score(1.0, Some(1)); 4]]);
        for v in MergeVariant::ALL {
            assert_eq!(merge_with_variant(&t, v, 0).assignment, vec![0]);
        }
    }

    #[test]
    fn threshold_merge_is_transitive() {
        // 0-1 agree, 1-2 agree, 0-2 never co-visible
        let t = table(vec![
            vec![score(1.0, Some(1)), score(0.0, None)],
            vec![score(1.0, Some(1)), score(1.0, Some(5))],
            vec![score(0.0, None), score(1.0, Some(5))],
        ]);
        assert_eq!(
            merge_with_variant(&t, MergeVariant::Baseline, 0).assignment,
            vec![0, 0, 0]
        );
    }

    #[test]
    fn counts_sum_over_superclusters() {
        let mk = |raw: &[usize]| InstanceLabeling::from_raw(raw);
        let labelings = vec![mk(&[0, 1, 0]), mk(&[0]), mk(&[0, 1, 2, 3])];
        let subs: Vec<Vec<Subcluster>> = labelings
            .iter()
            .map(|l| {
                (0..l.len())
                    .map(|i| Subcluster {
                        supercluster: 0,
                        index: i,
                        indices: vec![],
                        points: Default::default(),
                        centroid: nalgebra::Point3::origin(),
                    })
                    .collect()
            })
            .collect();
        let report = count_instances(&labelings, &subs, 0);
        assert_eq!(report.per_supercluster, vec![2, 1, 4]);
        assert_eq!(report.total, 7);
        assert_eq!(count_instances(&[], &[], 0).total, 0);
    }

    #[test]
    fn point_instances_follow_subcluster_membership() {
        let sub = |idx: Vec<usize>| Subcluster {
            supercluster: 0,
            index: 0,
            indices: idx,
            points: Default::default(),
            centroid: nalgebra::Point3::origin(),
        };
        let subs = vec![vec![sub(vec![0, 2]), sub(vec![1])], vec![sub(vec![4])]];
        let labelings = vec![InstanceLabeling::from_raw(&[5, 9]), InstanceLabeling::from_raw(&[0])];
        let report = count_instances(&labelings, &subs, 5);
        assert_eq!(report.point_instances, vec![Some(0), Some(1), Some(0), None, Some(2)]);
    }

    fn arb_table() -> impl Strategy<Value = ScoreTable> {
        (2usize..7, 1usize..8).prop_flat_map(|(m, n)| {
            proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0u32..4), m * n).prop_map(move |cells| {
                let cells = cells
                    .into_iter()
                    .map(|(v, c, l)| {
                        let (c, label) = if l == 0 { (0.0, None) } else { (c.max(1e-3), Some(l)) };
                        ViewScore {
                            v,
                            c,
                            r: v * c,
                            label,
                            ..ViewScore::ZERO
                        }
                    })
                    .collect();
                ScoreTable::from_cells(m, n, cells)
            })
        })
    }

    proptest! {
        #[test]
        fn affinity_symmetric_and_scale_consistent(t in arb_table(), gamma in 0.01f64..=1.0) {
            let m = t.subcluster_count();
            let scaled = t.scaled_reliability(gamma);
            for i in 0..m {
                for k in 0..m {
                    if i == k { continue; }
                    prop_assert_eq!(affinity(&t, i, k).to_bits(), affinity(&t, k, i).to_bits());
                    let a = affinity(&t, i, k);
                    let b = affinity(&scaled, i, k);
                    prop_assert!((b - gamma * gamma * a).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }
            let base = merge_with_variant(&t, MergeVariant::ReliabilityThreshold, 0);
            let after = merge_with_variant(&scaled, MergeVariant::ReliabilityThreshold, 0);
            prop_assert_eq!(base, after);
        }

        #[test]
        fn lpa_is_a_valid_idempotent_partition(t in arb_table(), seed in any::<u64>()) {
            let g = build_affinity_graph(&t);
            let l = label_propagation(&g, seed);
            prop_assert_eq!(l.len(), t.subcluster_count());
            let k = l.instance_count();
            for id in 0..k {
                prop_assert!(l.assignment.contains(&id));
            }
            let again = label_propagation_from(&g, &l.assignment, seed ^ 0x9e37);
            prop_assert_eq!(again, l);
        }
    }
}
