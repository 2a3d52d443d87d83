//! End-to-end orchestration: partition, score, merge, count.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SuperclusterMode};
use crate::error::{Error, Result};
use crate::io::{write_point_cloud, PlyFormat};
use crate::merging::{build_affinity_graph, count_instances, merge_with_variant, CountReport, InstanceLabeling};
use crate::partition::{dbscan_superclusters, kmeans_subclusters, whole_cloud_supercluster, Subcluster, Supercluster};
use crate::projection::estimate_point_radius;
use crate::scene::{validate_dataset, Dataset, PointCloud};
use crate::scoring::{score_tables_by_view, ScoreTable};

/// Points sampled when estimating the splat radius.
pub const RADIUS_SAMPLE_SIZE: usize = 2000;

pub const REPORT_FILE: &str = "report.json";
pub const LABELED_CLOUD_FILE: &str = "labeled.ply";

/// Wall-clock milliseconds per stage. Not deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTimings {
    pub validate: f64,
    pub partition: f64,
    pub scoring: f64,
    pub merging: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentReport {
    pub total_count: usize,
    pub per_supercluster_counts: Vec<usize>,
    pub supercluster_sizes: Vec<usize>,
    pub subcluster_count: usize,
    pub crop_points: usize,
    pub outlier_points: usize,
    pub view_count: usize,
    pub splat_radius: f64,
    pub depth_tolerance: f64,
    /// Configuration of the run. `workers` is always recorded as 0 since
    /// results do not depend on it.
    pub config: PipelineConfig,
    pub timing_ms: StageTimings,
}

impl SegmentReport {
    /// Copy with all timings zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            timing_ms: StageTimings::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: SegmentReport,
    pub counts: CountReport,
    pub superclusters: Vec<Supercluster>,
    pub subclusters: Vec<Vec<Subcluster>>,
    pub tables: Vec<ScoreTable>,
    pub labelings: Vec<InstanceLabeling>,
}

impl PipelineRun {
    /// Per crop point: instance id counted from 1, or 0 for outliers.
    pub fn point_labels(&self) -> Vec<u32> {
        self.counts
            .point_instances
            .iter()
            .map(|l| l.map_or(0, |id| id as u32 + 1))
            .collect()
    }

    /// Write `report.json` and `labeled.ply` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, crop_cloud: &PointCloud) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORT_FILE), self.report.to_json()?)?;
        write_point_cloud(
            dir.join(LABELED_CLOUD_FILE),
            crop_cloud,
            Some(&self.point_labels()),
            PlyFormat::BinaryLittleEndian,
        )
    }

    /// Score tables and affinity edges per supercluster, as TSV files.
    pub fn write_debug_tables(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (s, table) in self.tables.iter().enumerate() {
            table.write_tsv(BufWriter::new(File::create(dir.join(format!("scores_{s:04}.tsv")))?))?;
            build_affinity_graph(table)
                .write_edges(BufWriter::new(File::create(dir.join(format!("affinity_{s:04}.tsv")))?))?;
        }
        Ok(())
    }
}

fn mix_seed(seed: u64, stream: u64, salt: u64) -> u64 {
    // splitmix64 finaliser over the combined inputs
    let mut z = seed ^ salt ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// k-means seed for supercluster `s`.
pub fn kmeans_seed(seed: u64, s: usize) -> u64 {
    mix_seed(seed, s as u64, 0x6b6d_6561_6e73)
}

/// Label propagation seed for supercluster `s`.
pub fn merge_seed(seed: u64, s: usize) -> u64 {
    mix_seed(seed, s as u64, 0x006c_7061)
}

/// Run the whole pipeline on a bounded worker pool of `config.workers`
/// threads. Results do not depend on the worker count.
pub fn run_pipeline(config: &PipelineConfig, dataset: &Dataset) -> Result<PipelineRun> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {} workers: {e}", config.workers)))?;
    pool.install(|| run_in_pool(config, dataset))
}

fn run_in_pool(config: &PipelineConfig, dataset: &Dataset) -> Result<PipelineRun> {
    let start = Instant::now();
    let mut timing = StageTimings::default();
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let findings = validate_dataset(dataset);
    if findings.has_fatal() {
        let msgs = findings.fatal().map(|f| f.to_string()).collect();
        return Err(Error::InvalidDataset(msgs).in_stage("validate"));
    }
    let crop = &dataset.crop_cloud;
    let radius = match config.splat_radius {
        Some(r) => r,
        None if crop.is_empty() => 0.0,
        None if crop.len() == 1 => {
            estimate_point_radius(&dataset.env_cloud, RADIUS_SAMPLE_SIZE).map_err(|e| e.in_stage("validate"))?
        }
        None => estimate_point_radius(crop, RADIUS_SAMPLE_SIZE).map_err(|e| e.in_stage("validate"))?,
    };
    let depth_tolerance = config.depth_tolerance_factor * radius;
    timing.validate = ms(t);

    let t = Instant::now();
    let superclusters = match config.superclusters {
        SuperclusterMode::Dbscan => {
            dbscan_superclusters(crop, config.eps, config.min_points).map_err(|e| e.in_stage("partition"))?
        }
        SuperclusterMode::WholeCloud => whole_cloud_supercluster(crop),
    };
    let subclusters: Vec<Vec<Subcluster>> = superclusters
        .par_iter()
        .enumerate()
        .map(|(s, sc)| kmeans_subclusters(sc, config.k, kmeans_seed(config.seed, s)))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("partition"))?;
    timing.partition = ms(t);

    let t = Instant::now();
    let tables = score_tables_by_view(&subclusters, dataset, radius, depth_tolerance);
    timing.scoring = ms(t);

    let t = Instant::now();
    let labelings: Vec<InstanceLabeling> = tables
        .par_iter()
        .enumerate()
        .map(|(s, table)| merge_with_variant(table, config.variant, merge_seed(config.seed, s)))
        .collect();
    let counts = count_instances(&labelings, &subclusters, crop.len());
    timing.merging = ms(t);
    timing.total = ms(start);

    let kept: usize = superclusters.iter().map(|s| s.len()).sum();
    let report = SegmentReport {
        total_count: counts.total,
        per_supercluster_counts: counts.per_supercluster.clone(),
        supercluster_sizes: superclusters.iter().map(|s| s.len()).collect(),
        subcluster_count: subclusters.iter().map(Vec::len).sum(),
        crop_points: crop.len(),
        outlier_points: crop.len() - kept,
        view_count: dataset.view_count(),
        splat_radius: radius,
        depth_tolerance,
        config: PipelineConfig {
            workers: 0,
            ..config.clone()
        },
        timing_ms: timing,
    };
    Ok(PipelineRun {
        report,
        counts,
        superclusters,
        subclusters,
        tables,
        labelings,
    })
}
