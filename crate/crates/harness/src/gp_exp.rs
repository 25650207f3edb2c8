//! GP experiments: sequential (or batched) selection on a fixed prior with
//! ground truth drawn from that prior.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rayon::ThreadPool;
use transductive::acquisition::select_next;
use transductive::gp::sample_with_factor;
use transductive::theory::irreducible_uncertainties;
use transductive::{
    linalg, select_batch, BatchMode, BatchRequest, DecisionRule, FiniteDomain, GaussianBelief, Kernel, NoiseModel,
    TargetedBelief,
};

use crate::config::GpExperimentConfig;
use crate::error::Result;
use crate::output::{float, Table};
use crate::stats::{derive_seed, mean_se, running_average, subsample_targets};
use crate::workers;

const TRUTH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const RANDOM_STREAM: u64 = 3;
const TARGET_STREAM: u64 = 4;

/// Window of the running average applied to entropy in the summary.
pub const ENTROPY_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub round: usize,
    pub rule: String,
    /// Indices observed this round (empty for the prior row).
    pub chosen: Vec<usize>,
    pub entropy: f64,
    pub mean_std: f64,
    pub max_excess: f64,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RuleRun {
    pub rule: DecisionRule,
    /// Rows for every seed, seed-major in configuration order.
    pub rows: Vec<MetricsRow>,
}

impl RuleRun {
    pub fn seed_rows(&self, seed: u64) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.seed == seed)
    }

    /// `metric` of every seed at `round`, in seed order.
    pub fn at_round(&self, round: usize, metric: impl Fn(&MetricsRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.round == round).map(metric).collect()
    }

    /// All indices observed for `seed`, in order.
    pub fn picks(&self, seed: u64) -> Vec<usize> {
        self.seed_rows(seed).flat_map(|r| r.chosen.iter().copied()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GpExperimentResult {
    pub runs: Vec<RuleRun>,
    pub sample_space: Vec<usize>,
    pub target_space: Vec<usize>,
    pub noise: NoiseModel,
    pub domain: FiniteDomain,
}

impl GpExperimentResult {
    pub fn run(&self, rule: DecisionRule) -> Option<&RuleRun> {
        self.runs.iter().find(|r| r.rule == rule)
    }
}

/// Everything shared by all (rule, seed) trajectories.
pub struct Setup {
    pub domain: FiniteDomain,
    pub kernel: Kernel,
    pub noise: NoiseModel,
    pub prior: GaussianBelief,
    pub sample_space: Vec<usize>,
    pub target_space: Vec<usize>,
    pub irreducible: Vec<f64>,
    truth_factor: DMatrix<f64>,
}

impl Setup {
    pub fn new(cfg: &GpExperimentConfig) -> Result<Self> {
        let domain = cfg.domain.build("domain", cfg.experiment.max_points)?;
        let kernel = cfg.kernel.build("kernel")?;
        let noise = cfg.noise.build("noise", &domain)?;
        let sample_space = cfg.sample_space.build("sample_space", &domain)?;
        let target_space = cfg.target_space.build("target_space", &domain)?;
        let prior = GaussianBelief::prior(&domain, &kernel, |_| 0.0)?;
        let irreducible = irreducible_uncertainties(&prior, &sample_space, &target_space)?;
        let truth_factor = linalg::cholesky(prior.cov())?.l();
        Ok(Setup {
            domain,
            kernel,
            noise,
            prior,
            sample_space,
            target_space,
            irreducible,
            truth_factor,
        })
    }

    /// Ground truth for `seed`: one joint draw from the prior.
    pub fn truth(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TRUTH_STREAM, 0));
        sample_with_factor(self.prior.mean(), &self.truth_factor, &mut rng)
            .as_slice()
            .to_vec()
    }

    fn metrics(&self, belief: &GaussianBelief) -> Result<(f64, f64, f64)> {
        let a = &self.target_space;
        let entropy = belief.entropy(a)?;
        let mean_std = a.iter().map(|&i| belief.std(i)).sum::<f64>() / a.len() as f64;
        let max_excess = a
            .iter()
            .zip(&self.irreducible)
            .map(|(&i, eta)| belief.variance(i) - eta)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((entropy, mean_std, max_excess))
    }
}

fn round_rule(rule: DecisionRule, seed: u64, round: usize) -> DecisionRule {
    match rule {
        DecisionRule::Random { seed: base } => DecisionRule::Random {
            seed: derive_seed(seed ^ base, RANDOM_STREAM, round as u64),
        },
        other => other,
    }
}

/// One trajectory of `rule` for `seed`.
pub fn run_trajectory(setup: &Setup, cfg: &GpExperimentConfig, rule: DecisionRule, seed: u64) -> Result<Vec<MetricsRow>> {
    let e = &cfg.experiment;
    let start = Instant::now();
    let truth = setup.truth(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM, 0));
    let mut tracker = TargetedBelief::new(setup.prior.clone(), &setup.target_space, rule, &setup.noise)?;
    let mut rows = Vec::with_capacity(e.rounds + 1);
    let wall = |t: &Instant| e.record_wall_time.then(|| t.elapsed().as_secs_f64());
    let (entropy, mean_std, max_excess) = setup.metrics(tracker.posterior())?;
    rows.push(MetricsRow {
        seed,
        round: 0,
        rule: rule.name().to_string(),
        chosen: Vec::new(),
        entropy,
        mean_std,
        max_excess,
        wall_time: wall(&start),
    });
    for round in 1..=e.rounds {
        let r = round_rule(rule, seed, round);
        let targets = match e.target_subsample {
            Some(m) => subsample_targets(&setup.target_space, m, derive_seed(seed, TARGET_STREAM, round as u64)),
            None => setup.target_space.clone(),
        };
        let chosen = if e.batch_size > 1 {
            let req = BatchRequest {
                rule: r,
                batch_size: e.batch_size,
                samples: setup.sample_space.clone(),
                targets,
                mode: BatchMode::from(e.batch_mode),
            };
            select_batch(tracker.posterior(), &req, &setup.noise)?.indices
        } else if e.target_subsample.is_some() {
            vec![select_next(r, tracker.posterior(), &setup.sample_space, &targets, &setup.noise)?.chosen]
        } else {
            vec![tracker.select(r, &setup.sample_space, &setup.noise)?.chosen]
        };
        for &x in &chosen {
            let rho2 = setup.noise.variance(x);
            let y = truth[x] + rho2.sqrt() * noise_rng.sample::<f64, _>(StandardNormal);
            tracker.observe(x, rho2, Some(y))?;
        }
        let (entropy, mean_std, max_excess) = setup.metrics(tracker.posterior())?;
        rows.push(MetricsRow {
            seed,
            round,
            rule: rule.name().to_string(),
            chosen,
            entropy,
            mean_std,
            max_excess,
            wall_time: wall(&start),
        });
    }
    Ok(rows)
}

/// Runs every (rule, seed) pair on the worker pool and writes
/// `<name>_<rule>.csv` files plus `<name>_summary.csv` into the output
/// directory.
pub fn run_gp_experiment(cfg: &GpExperimentConfig) -> Result<GpExperimentResult> {
    run_gp_experiment_on(cfg, &workers::pool()?)
}

/// [`run_gp_experiment`] on a given pool.
pub fn run_gp_experiment_on(cfg: &GpExperimentConfig, pool: &ThreadPool) -> Result<GpExperimentResult> {
    let rules = cfg.validate()?;
    let setup = Setup::new(cfg)?;
    let jobs: Vec<(usize, u64)> = (0..rules.len())
        .flat_map(|r| cfg.experiment.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let outputs: Vec<Result<Vec<MetricsRow>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, seed)| run_trajectory(&setup, cfg, rules[r], seed))
            .collect()
    });
    let mut runs: Vec<RuleRun> = rules.iter().map(|&rule| RuleRun { rule, rows: Vec::new() }).collect();
    for ((r, _), out) in jobs.iter().zip(outputs) {
        runs[*r].rows.extend(out?);
    }
    let result = GpExperimentResult {
        runs,
        sample_space: setup.sample_space.clone(),
        target_space: setup.target_space.clone(),
        noise: setup.noise.clone(),
        domain: setup.domain.clone(),
    };
    write_outputs(cfg, &result)?;
    Ok(result)
}

fn write_outputs(cfg: &GpExperimentConfig, result: &GpExperimentResult) -> Result<()> {
    let e = &cfg.experiment;
    let dir = Path::new(&e.output_dir);
    for run in &result.runs {
        let mut header = vec!["seed", "round", "rule", "chosen", "entropy", "mean_std", "max_excess"];
        if e.record_wall_time {
            header.push("wall_time");
        }
        let mut t = Table::new(&header);
        for row in &run.rows {
            let chosen: Vec<String> = row.chosen.iter().map(|c| c.to_string()).collect();
            let mut cells = vec![
                row.seed.to_string(),
                row.round.to_string(),
                row.rule.clone(),
                chosen.join(";"),
                float(row.entropy),
                float(row.mean_std),
                float(row.max_excess),
            ];
            if let Some(w) = row.wall_time {
                cells.push(float(w));
            }
            t.row(&cells);
        }
        t.write(&dir.join(format!("{}_{}.csv", e.name, run.rule.name())))?;
    }
    summary_table(e.rounds, &result.runs).write(&dir.join(format!("{}_summary.csv", e.name)))
}

/// Per-rule, per-round mean and standard error across seeds.
pub fn summary_table(rounds: usize, runs: &[RuleRun]) -> Table {
    let mut t = Table::new(&[
        "rule",
        "round",
        "entropy_mean",
        "entropy_se",
        "entropy_smoothed",
        "mean_std_mean",
        "mean_std_se",
        "max_excess_mean",
        "max_excess_se",
    ]);
    for run in runs {
        let entropy: Vec<(f64, f64)> = (0..=rounds).map(|n| mean_se(&run.at_round(n, |r| r.entropy))).collect();
        let smoothed = running_average(&entropy.iter().map(|e| e.0).collect::<Vec<_>>(), ENTROPY_WINDOW);
        for n in 0..=rounds {
            let (sm, sse) = mean_se(&run.at_round(n, |r| r.mean_std));
            let (em, ese) = mean_se(&run.at_round(n, |r| r.max_excess));
            t.row(&[
                run.rule.name().to_string(),
                n.to_string(),
                float(entropy[n].0),
                float(entropy[n].1),
                float(smoothed[n]),
                float(sm),
                float(sse),
                float(em),
                float(ese),
            ]);
        }
    }
    t
}
