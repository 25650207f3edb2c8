use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use transductive::DecisionRule;
use transductive_harness::config::{self, GpExperimentConfig};
use transductive_harness::embeddings::{load_embeddings, write_embeddings_binary};
use transductive_harness::error::Error;
use transductive_harness::gp_exp::{run_gp_experiment_on, GpExperimentResult};
use transductive_harness::retrieve::{retrieve, RetrievalOptions, Selector};
use transductive_harness::stats::subsample_targets;
use transductive_harness::workers::pool_with;

fn shipped(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(path).unwrap()
}

/// Parses `text` with the `[experiment]` keys in `edits` replaced.
fn edited(text: &str, edits: &[(&str, &str)]) -> GpExperimentConfig {
    let mut doc: toml::Table = text.parse().unwrap();
    let e = doc["experiment"].as_table_mut().unwrap();
    for (key, value) in edits {
        let v: toml::Table = format!("v = {value}").parse().unwrap();
        e.insert(key.to_string(), v["v"].clone());
    }
    config::parse(&doc.to_string()).unwrap()
}

fn run(mut cfg: GpExperimentConfig, dir: &Path, workers: usize) -> GpExperimentResult {
    cfg.experiment.output_dir = dir.to_path_buf();
    run_gp_experiment_on(&cfg, &pool_with(workers).unwrap()).unwrap()
}

fn grid_point(i: usize) -> (f64, f64) {
    let step = 6.0 / 49.0;
    (-3.0 + (i / 50) as f64 * step, -3.0 + (i % 50) as f64 * step)
}

fn in_box(i: usize, half: f64) -> bool {
    let (x, y) = grid_point(i);
    x.abs() <= half + 1e-9 && y.abs() <= half + 1e-9
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().into(), std::fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn zero_rounds_write_only_the_prior_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(&shipped("gp_interpolation.toml"), &[("rounds", "0"), ("seeds", "[4, 7]"), ("rules", r#"["itl"]"#)]);
    let result = run(cfg, dir.path(), 1);
    assert_eq!(result.runs[0].rows.len(), 2);
    assert!(result.runs[0].rows.iter().all(|r| r.round == 0 && r.chosen.is_empty()));
    let csv = std::fs::read_to_string(dir.path().join("interpolation_itl.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn itl_leaves_the_target_box_when_interpolating() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(&shipped("gp_interpolation.toml"), &[("rounds", "25"), ("seeds", "[0]"), ("rules", r#"["itl"]"#)]);
    let result = run(cfg, dir.path(), 1);
    let picks = result.runs[0].picks(0);
    assert_eq!(picks.len(), 25);
    assert!(picks.iter().all(|&i| i < 2500));
    assert!(picks.iter().any(|&i| !in_box(i, 1.0)));
}

#[test]
fn itl_avoids_the_noisy_square() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(&shipped("gp_heteroscedastic.toml"), &[("seeds", "[0, 1, 2]")]);
    let result = run(cfg, dir.path(), 1);
    let noisy_fraction = |rule| {
        let run = result.run(rule).unwrap();
        let picks: Vec<usize> = [0, 1, 2].iter().flat_map(|&s| run.picks(s)).collect();
        picks.iter().filter(|&&i| in_box(i, 0.5)).count() as f64 / picks.len() as f64
    };
    let itl = noisy_fraction(DecisionRule::ITL);
    let unsa = noisy_fraction(DecisionRule::UncertaintySampling);
    assert!(itl < unsa, "itl {itl} vs unsa {unsa}");
}

#[test]
fn laplace_itl_matches_uncertainty_sampling_inside_the_targets() {
    let text = shipped("gp_laplace.toml");
    let dir = tempfile::tempdir().unwrap();
    let itl = run(edited(&text, &[("rules", r#"["itl"]"#)]), dir.path(), 1);
    let local = text.replace("[sample_space]\nkind = \"all\"", "[sample_space]\nkind = \"box\"\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]");
    let unsa = run(edited(&local, &[("rules", r#"["unsa"]"#)]), dir.path(), 1);
    for seed in [0, 1, 2] {
        let mut a = itl.runs[0].picks(seed);
        let mut b = unsa.runs[0].picks(seed);
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn target_subsamples_are_uniform() {
    let full: Vec<usize> = (100..150).collect();
    let mut counts = vec![0.0_f64; full.len()];
    for seed in 0..10_000 {
        let s = subsample_targets(&full, 5, seed);
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for i in s {
            counts[i - 100] += 1.0;
        }
    }
    let expected = 10_000.0 * 5.0 / 50.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 0.999 quantile of chi-square with 49 degrees of freedom.
    assert!(chi2 < 85.35, "chi-square {chi2}");
}

fn unit(v: [f32; 3]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[test]
fn itl_retrieval_covers_more_clusters_than_cosine() {
    let mut rows = Vec::new();
    let mut cluster = Vec::new();
    for k in 0..10 {
        rows.extend(unit([1.0, 1.0, 1.0 + 0.01 * k as f32]));
        cluster.push(3);
    }
    for (c, base) in [[1.0, 0.05, 0.05], [0.05, 1.0, 0.05], [0.05, 0.05, 1.0]].iter().enumerate() {
        for k in 0..3 {
            let mut v = *base;
            v[c] += 0.01 * k as f32;
            rows.extend(unit(v));
            cluster.push(c);
        }
    }
    let candidates = transductive::FiniteDomain::from_embeddings(3, rows).unwrap();
    let targets = transductive::FiniteDomain::from_embeddings(3, [unit([1.0, 0.0, 0.0]), unit([0.0, 1.0, 0.0]), unit([0.0, 0.0, 1.0])].concat()).unwrap();
    let clusters = |selector| {
        let opts = RetrievalOptions {
            selector,
            batch_size: 4,
            ..Default::default()
        };
        let picks = &retrieve(&candidates, &targets, &opts).unwrap()[0].indices;
        picks.iter().map(|&i| cluster[i]).collect::<BTreeSet<_>>().len()
    };
    assert_eq!(clusters(Selector::Cosine), 1);
    assert!(clusters(Selector::Rule(DecisionRule::ITL)) >= 3);
}

#[test]
fn a_million_embeddings_load_without_copies() {
    let (count, dim) = (1_000_000, 64);
    let values: Vec<f32> = (0..count * dim).map(|i| (i % 97) as f32 / 97.0).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.bin");
    write_embeddings_binary(&path, dim, &values).unwrap();
    drop(values);
    let domain = load_embeddings(&path).unwrap();
    assert_eq!(domain.len(), count);
    assert_eq!(domain.dim(), dim);
    let raw = domain.raw_f32().unwrap();
    assert_eq!(raw.len(), count * dim);
    assert_eq!(raw[count * dim - 1], ((count * dim - 1) % 97) as f32 / 97.0);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let cfg = edited(&shipped("gp_extrapolation.toml"), &[("rounds", "10"), ("seeds", "[0, 1, 2, 3]")]);
    let one = tempfile::tempdir().unwrap();
    let three = tempfile::tempdir().unwrap();
    run(cfg.clone(), one.path(), 1);
    run(cfg, three.path(), 3);
    let (a, b) = (files(one.path()), files(three.path()));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn config_errors_name_the_field() {
    let text = shipped("gp_interpolation.toml");
    let path_of = |text: &str| match config::parse::<GpExperimentConfig>(text) {
        Err(Error::Config { path, .. }) => path,
        other => panic!("expected a config error, got {other:?}"),
    };
    assert_eq!(path_of(&text.replace("rounds = 100", "rounds = \"many\"")), "experiment.rounds");
    assert!(path_of(&text.replace("lengthscale = 1.0", "lenghtscale = 1.0")).starts_with("kernel"));
    let bad_rule = edited(&text, &[("rules", r#"["itl", "sideways"]"#)]);
    match bad_rule.validate() {
        Err(Error::Config { path, .. }) => assert!(path.starts_with("experiment.rules"), "{path}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
