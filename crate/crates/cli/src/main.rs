use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fusecount_core::io::{self, DatasetPaths};
use fusecount_core::partition::{dbscan_superclusters, kmeans_subclusters, whole_cloud_supercluster};
use fusecount_core::pipeline::{kmeans_seed, RADIUS_SAMPLE_SIZE};
use fusecount_core::projection::{build_depth_buffer, estimate_point_radius, project_with_occlusion};
use fusecount_core::scoring::visibility_score;
use fusecount_core::synth::{self, corrupt_masks, generate_scene, CorruptionSpec, SceneSpec};
use fusecount_core::{evaluate, run_pipeline, Dataset, MergeVariant, PipelineConfig, SuperclusterMode};

/// `println!` that reports write failures, so a closed pipe ends the
/// program quietly instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout().lock(), $($arg)*)
    }};
}

const TRUTH_FILE: &str = "truth.json";
const CORRUPTION_LOG_FILE: &str = "corruption_log.json";

#[derive(Parser)]
#[command(
    name = "fusecount",
    version,
    about = "Count crop instances in a point cloud from per-view instance masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the counting pipeline on a dataset.
    Segment(SegmentArgs),
    /// Generate a synthetic dataset with ground truth.
    Synth {
        /// Scene spec JSON; omitted fields take defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy a dataset with corrupted masks.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        /// Corruption spec JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and true counts.
    Eval {
        /// Report JSON files, count files or JSON arrays of counts.
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        /// truth.json files, count files or JSON arrays of counts.
        #[arg(long, num_args = 1.., required = true)]
        truth: Vec<PathBuf>,
    },
    /// Compare splat visibility scores against the ray-cast oracle.
    OracleVis {
        #[arg(long = "in")]
        input: PathBuf,
        /// Supersampling factor per pixel axis.
        #[arg(long, default_value_t = 4)]
        supersample: u32,
        /// Views to check; all by default.
        #[arg(long, num_args = 1..)]
        views: Vec<usize>,
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Args)]
struct SegmentArgs {
    /// Dataset directory holding crop.ply, env.ply, cameras.json and masks/.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    crop_cloud: Option<PathBuf>,
    #[arg(long)]
    env_cloud: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-supercluster score tables and affinity edges.
    #[arg(long)]
    dump_tables: bool,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ParamArgs {
    /// Pipeline config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// baseline, visibility, mask, reliability-threshold or full-lpa.
    #[arg(long)]
    variant: Option<MergeVariant>,
    #[arg(long)]
    workers: Option<usize>,
    /// World-space splat radius in meters.
    #[arg(long)]
    splat_radius: Option<f64>,
    /// Treat the whole crop cloud as one supercluster.
    #[arg(long)]
    whole_cloud: bool,
}

impl ParamArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(eps) = self.eps {
            c.eps = eps;
        }
        if let Some(m) = self.min_points {
            c.min_points = m;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(v) = self.variant {
            c.variant = v;
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if self.splat_radius.is_some() {
            c.splat_radius = self.splat_radius;
        }
        if self.whole_cloud {
            c.superclusters = SuperclusterMode::WholeCloud;
        }
        c.validate()?;
        Ok(c)
    }
}

impl SegmentArgs {
    fn paths(&self) -> Result<DatasetPaths> {
        let base = self.dataset.as_ref().map(DatasetPaths::in_dir);
        let pick = |given: &Option<PathBuf>, from_base: Option<&PathBuf>, flag: &str| -> Result<PathBuf> {
            match (given, from_base) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(p)) => Ok(p.clone()),
                (None, None) => bail!(UsageError(format!("--{flag} is required without --dataset"))),
            }
        };
        Ok(DatasetPaths {
            crop_cloud: pick(&self.crop_cloud, base.as_ref().map(|b| &b.crop_cloud), "crop-cloud")?,
            env_cloud: pick(&self.env_cloud, base.as_ref().map(|b| &b.env_cloud), "env-cloud")?,
            cameras: pick(&self.cameras, base.as_ref().map(|b| &b.cameras), "cameras")?,
            masks: pick(&self.masks, base.as_ref().map(|b| &b.masks), "masks")?,
        })
    }
}

/// Marks errors that should exit with the usage code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn segment(args: &SegmentArgs) -> Result<()> {
    let config = args.params.config()?;
    let paths = args.paths()?;
    let dataset = io::load_dataset(&paths)?;
    let run = run_pipeline(&config, &dataset)?;
    run.write(&args.out, &dataset.crop_cloud)?;
    if args.dump_tables {
        run.write_debug_tables(args.out.join("tables"))?;
    }
    outln!("{}", run.report.total_count)?;
    Ok(())
}

fn synth_cmd(spec: &Path, out: &Path) -> Result<()> {
    let spec: SceneSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
    let (dataset, truth) = generate_scene(&spec)?;
    io::write_dataset(out, &dataset)?;
    let doc = json!({
        "count": truth.count,
        "spec": spec,
        "view_ids": truth.view_ids,
        "point_instance": truth.point_instance,
    });
    std::fs::write(out.join(TRUTH_FILE), serde_json::to_string(&doc)? + "\n")?;
    outln!("{}", truth.count)?;
    Ok(())
}

fn corrupt_cmd(input: &Path, spec: &Path, out: &Path) -> Result<()> {
    let spec: CorruptionSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
    let dataset = io::load_dataset(&DatasetPaths::in_dir(input))?;
    let masks: Vec<_> = dataset.views.iter().map(|v| v.mask.clone()).collect();
    let corrupted = corrupt_masks(&masks, &spec)?;
    let mut out_ds = dataset.clone();
    for (view, mask) in out_ds.views.iter_mut().zip(corrupted.masks) {
        view.mask = mask;
    }
    io::write_dataset(out, &out_ds)?;
    let truth = input.join(TRUTH_FILE);
    if truth.exists() {
        std::fs::copy(&truth, out.join(TRUTH_FILE))?;
    }
    let log = json!({ "spec": spec, "events": corrupted.log });
    std::fs::write(
        out.join(CORRUPTION_LOG_FILE),
        serde_json::to_string_pretty(&log)? + "\n",
    )?;
    Ok(())
}

/// Counts from a report (`total_count`), a truth file (`count`), a bare
/// number, or an array of any of these.
fn counts_from_value(v: &Value, path: &Path, out: &mut Vec<usize>) -> Result<()> {
    match v {
        Value::Number(n) => out.push(
            n.as_u64()
                .with_context(|| format!("{}: non-integer count", path.display()))? as usize,
        ),
        Value::Array(items) => {
            for item in items {
                counts_from_value(item, path, out)?;
            }
        }
        Value::Object(obj) => {
            let n = obj
                .get("total_count")
                .or_else(|| obj.get("count"))
                .and_then(Value::as_u64)
                .with_context(|| format!("{}: no total_count or count field", path.display()))?;
            out.push(n as usize);
        }
        _ => bail!("{}: expected a count, an object or an array", path.display()),
    }
    Ok(())
}

fn read_counts(paths: &[PathBuf]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        counts_from_value(&serde_json::from_str(&text)?, p, &mut out)?;
    }
    Ok(out)
}

fn eval_cmd(pred: &[PathBuf], truth: &[PathBuf]) -> Result<()> {
    let result = evaluate(&read_counts(pred)?, &read_counts(truth)?)?;
    outln!("{}", serde_json::to_string_pretty(&result)?)?;
    Ok(())
}

fn oracle_vis(input: &Path, supersample: u32, views: &[usize], params: &ParamArgs) -> Result<()> {
    let config = params.config()?;
    let dataset: Dataset = io::load_dataset(&DatasetPaths::in_dir(input))?;
    let crop = &dataset.crop_cloud;
    let radius = match config.splat_radius {
        Some(r) => r,
        None => estimate_point_radius(crop, RADIUS_SAMPLE_SIZE)?,
    };
    let tol = config.depth_tolerance_factor * radius;
    let superclusters = match config.superclusters {
        SuperclusterMode::Dbscan => dbscan_superclusters(crop, config.eps, config.min_points)?,
        SuperclusterMode::WholeCloud => whole_cloud_supercluster(crop),
    };
    let views: Vec<usize> = if views.is_empty() {
        (0..dataset.view_count()).collect()
    } else {
        views.to_vec()
    };
    if let Some(&bad) = views.iter().find(|&&j| j >= dataset.view_count()) {
        bail!(UsageError(format!(
            "view {bad} out of range (dataset has {})",
            dataset.view_count()
        )));
    }
    outln!("view\tsupercluster\tsubcluster\tsplat\toracle\tdiff")?;
    let mut worst: f64 = 0.0;
    for (s, sc) in superclusters.iter().enumerate() {
        let subs = kmeans_subclusters(sc, config.k, kmeans_seed(config.seed, s))?;
        for &j in &views {
            let cam = &dataset.views[j].camera;
            let buffer = build_depth_buffer(cam, &dataset.env_cloud, radius);
            for (i, sub) in subs.iter().enumerate() {
                let (free, visible) = project_with_occlusion(cam, &sub.points, &buffer, radius, tol);
                if free.is_empty() {
                    continue;
                }
                let splat = visibility_score(&free, &visible);
                let oracle =
                    synth::raycast_visibility_oracle(cam, &sub.points, &dataset.env_cloud, radius, supersample, tol);
                let diff = (splat - oracle).abs();
                worst = worst.max(diff);
                outln!("{j}\t{s}\t{i}\t{splat:.4}\t{oracle:.4}\t{diff:.4}")?;
            }
        }
    }
    eprintln!("max |splat - oracle| = {worst:.4}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Segment(args) => segment(args),
        Command::Synth { spec, out } => synth_cmd(spec, out),
        Command::Corrupt { input, spec, out } => corrupt_cmd(input, spec, out),
        Command::Eval { pred, truth } => eval_cmd(pred, truth),
        Command::OracleVis {
            input,
            supersample,
            views,
            params,
        } => oracle_vis(input, *supersample, views, params),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>()
        .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
        Err(_) => ExitCode::from(3),
    }
}
