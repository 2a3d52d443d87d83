use fusecount_core::merging::merge_with_variant;
use fusecount_core::pipeline::merge_seed;
use fusecount_core::scoring::{build_score_table, score_tables_by_view};
use fusecount_core::synth::{generate_scene, SceneSpec};
use fusecount_core::{run_pipeline, MergeVariant, PipelineConfig};

fn spec(count: usize, per: usize, seed: u64) -> SceneSpec {
    SceneSpec {
        instance_count: count,
        clusters: count.div_ceil(per),
        foliage_blobs: count,
        seed,
        ..SceneSpec::default()
    }
}

#[test]
fn twenty_five_instances_count_exactly() {
    let (ds, truth) = generate_scene(&spec(25, 3, 11)).unwrap();
    assert_eq!(truth.count, 25);
    let run = run_pipeline(&PipelineConfig::default(), &ds).unwrap();
    assert_eq!(run.report.total_count, 25);
    assert_eq!(run.report.per_supercluster_counts.iter().sum::<usize>(), 25);
    assert_eq!(run.point_labels().len(), ds.crop_cloud.len());
}

#[test]
fn recovered_instances_match_generator_labels() {
    let (ds, truth) = generate_scene(&spec(6, 2, 12)).unwrap();
    let run = run_pipeline(&PipelineConfig::default(), &ds).unwrap();
    // every predicted instance holds points of exactly one true instance
    let labels = run.point_labels();
    let mut owner = std::collections::HashMap::new();
    for (p, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let t = truth.point_instance[p];
        assert_eq!(*owner.entry(l).or_insert(t), t, "instance {l} mixes true instances");
    }
    assert_eq!(owner.len(), truth.count);
}

#[test]
fn view_major_scoring_matches_per_supercluster_scoring() {
    let (ds, _) = generate_scene(&spec(8, 4, 13)).unwrap();
    let run = run_pipeline(&PipelineConfig::default(), &ds).unwrap();
    let (rho, tol) = (run.report.splat_radius, run.report.depth_tolerance);
    let by_view = score_tables_by_view(&run.subclusters, &ds, rho, tol);
    for (group, table) in run.subclusters.iter().zip(&by_view) {
        assert_eq!(&build_score_table(group, &ds, rho, tol).unwrap(), table);
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let (ds, _) = generate_scene(&spec(10, 3, 14)).unwrap();
    let runs: Vec<_> = [1, 2, 3, 0]
        .into_iter()
        .map(|workers| {
            run_pipeline(
                &PipelineConfig {
                    workers,
                    ..PipelineConfig::default()
                },
                &ds,
            )
            .unwrap()
        })
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.report.without_timing(), runs[0].report.without_timing());
        assert_eq!(r.point_labels(), runs[0].point_labels());
        assert_eq!(r.tables, runs[0].tables);
    }
}

#[test]
fn every_variant_is_exact_on_perfect_masks() {
    let (ds, truth) = generate_scene(&spec(9, 3, 15)).unwrap();
    let config = PipelineConfig::default();
    let run = run_pipeline(&config, &ds).unwrap();
    for variant in MergeVariant::ALL {
        let count: usize = run
            .tables
            .iter()
            .enumerate()
            .map(|(s, t)| merge_with_variant(t, variant, merge_seed(config.seed, s)).instance_count())
            .sum();
        assert_eq!(count, truth.count, "{}", variant.name());
    }
}
