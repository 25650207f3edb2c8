//! Safe BO experiments on the synthetic line and island tasks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rayon::ThreadPool;
use transductive::safebo::{
    estimate_lipschitz, safebo_step, safeopt_step, GroundTruth, SafeBoConfig, SafeBoState, SafeOptVariant,
    TargetMode, TelemetryRow, LIPSCHITZ_SAFETY_FACTOR,
};
use transductive::{DecisionRule, FiniteDomain, GaussianBelief, Kernel};

use crate::config::{parse_rule, SafeBoExperimentConfig, SafeTask, TargetModeSpec};
use crate::error::{Error, Result};
use crate::output::{float, Table};
use crate::stats::{derive_seed, mean_se};
use crate::workers;

const NOISE_STREAM: u64 = 2;
const INITIAL_STREAM: u64 = 5;

/// Observation noise standard deviation of both tasks.
pub const NOISE_STD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Transductive(DecisionRule),
    SafeOpt(SafeOptVariant),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Transductive(rule) => rule.name(),
            Method::SafeOpt(SafeOptVariant::Oracle) => "safeopt-oracle",
            Method::SafeOpt(SafeOptVariant::Estimated) => "safeopt",
            Method::SafeOpt(SafeOptVariant::Heuristic) => "safeopt-heuristic",
        }
    }
}

pub fn parse_method(field: &str, name: &str) -> Result<Method> {
    match name.to_ascii_lowercase().as_str() {
        "safeopt-oracle" => Ok(Method::SafeOpt(SafeOptVariant::Oracle)),
        "safeopt" => Ok(Method::SafeOpt(SafeOptVariant::Estimated)),
        "safeopt-heuristic" => Ok(Method::SafeOpt(SafeOptVariant::Heuristic)),
        _ => parse_rule(field, name).map(Method::Transductive),
    }
}

/// A synthetic safe BO problem: priors, ground truth and the initial safe
/// seeds. The priors already include one noisy observation at `centre`.
#[derive(Debug, Clone)]
pub struct Task {
    pub points: Vec<Vec<f64>>,
    pub f: GaussianBelief,
    pub g: Vec<GaussianBelief>,
    pub truth: GroundTruth,
    pub seeds: Vec<usize>,
    pub centre: usize,
    /// Largest nearest-neighbour slope of each true constraint.
    pub lipschitz: Vec<f64>,
}

fn bumps(kernel: &Kernel, points: &[Vec<f64>], offset: f64, centres: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            centres.iter().try_fold(offset, |acc, (z, c)| Ok(acc + c * kernel.eval(p, z)?))
        })
        .collect()
}

fn nearest(points: &[Vec<f64>], target: &[f64]) -> usize {
    let d = |p: &Vec<f64>| p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..points.len())
        .min_by(|&i, &j| d(&points[i]).total_cmp(&d(&points[j])))
        .expect("non-empty domain")
}

fn true_lipschitz(points: &[Vec<f64>], g: &[Vec<f64>]) -> Vec<f64> {
    g.iter()
        .map(|v| estimate_lipschitz(points, v) / LIPSCHITZ_SAFETY_FACTOR)
        .collect()
}

/// 1d task on `[0, 10]` with 500 points. One function serves as objective
/// and constraint: a local hump around the initial safe set at `x = 2`, a
/// safe valley, and the global maximum near `x = 7`.
pub fn line_task() -> Result<Task> {
    let domain = FiniteDomain::grid(&[0.0], &[10.0], 500)?;
    let points = domain.all_points();
    let kernel = Kernel::gaussian(1.0);
    let offset = -0.5;
    let h = bumps(&kernel, &points, offset, &[(&[2.0], 1.2), (&[4.5], 0.45), (&[7.0], 2.0)])?;
    let prior = GaussianBelief::prior(&domain, &kernel, |_| offset)?;
    let seeds = domain.indices_in_box(&[1.6], &[2.4]);
    let truth = GroundTruth::new(h.clone(), vec![h.clone()])?;
    let lipschitz = true_lipschitz(&points, &truth.g);
    let centre = nearest(&points, &[2.0]);
    Ok(Task {
        points,
        f: prior.clone(),
        g: vec![prior],
        truth,
        seeds,
        centre,
        lipschitz,
    })
}

/// 2d island task on `[-3, 3]²` with 2500 points. The constraint is a round
/// island of radius about 1.77; the objective peaks at a reef to the
/// north-east, partly outside the island.
pub fn island_task() -> Result<Task> {
    let domain = FiniteDomain::grid(&[-3.0, -3.0], &[3.0, 3.0], 50)?;
    let points = domain.all_points();
    let g_kernel = Kernel::gaussian(1.5);
    let f_kernel = Kernel::gaussian(1.0);
    let g = bumps(&g_kernel, &points, -1.0, &[(&[0.0, 0.0], 2.0)])?;
    let f = bumps(&f_kernel, &points, 0.0, &[(&[2.0, 2.0], 1.5), (&[-1.0, 0.5], 0.5)])?;
    let f_prior = GaussianBelief::prior(&domain, &f_kernel, |_| 0.0)?;
    let g_prior = GaussianBelief::prior(&domain, &g_kernel, |_| -1.0)?;
    let seeds = domain.indices_in_box(&[-0.5, -0.5], &[0.5, 0.5]);
    let truth = GroundTruth::new(f, vec![g])?;
    let lipschitz = true_lipschitz(&points, &truth.g);
    let centre = nearest(&points, &[0.0, 0.0]);
    Ok(Task {
        points,
        f: f_prior,
        g: vec![g_prior],
        truth,
        seeds,
        centre,
        lipschitz,
    })
}

pub fn build_task(task: SafeTask) -> Result<Task> {
    match task {
        SafeTask::Line => line_task(),
        SafeTask::Island => island_task(),
    }
}

fn target_mode(spec: TargetModeSpec, k: usize) -> TargetMode {
    match spec {
        TargetModeSpec::Maximizers => TargetMode::Maximizers,
        TargetModeSpec::Expanders => TargetMode::Expanders,
        TargetModeSpec::Thompson => TargetMode::Thompson(k),
    }
}

/// One trajectory of `method` on `task` for `seed`.
pub fn run_trajectory(task: &Task, cfg: &SafeBoExperimentConfig, method: Method, seed: u64) -> Result<Vec<TelemetryRow>> {
    let e = &cfg.experiment;
    let noise_var = NOISE_STD * NOISE_STD;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INITIAL_STREAM, 0));
    let mut observe_centre = |b: &GaussianBelief, value: f64| -> Result<GaussianBelief> {
        let mut b = b.clone();
        let y = value + NOISE_STD * init_rng.sample::<f64, _>(StandardNormal);
        b.rank_one_update(task.centre, noise_var, Some(y))?;
        Ok(b)
    };
    let f = observe_centre(&task.f, task.truth.f[task.centre])?;
    let g = task
        .g
        .iter()
        .zip(&task.truth.g)
        .map(|(b, v)| observe_centre(b, v[task.centre]))
        .collect::<Result<Vec<_>>>()?;
    let config = SafeBoConfig {
        beta: e.beta,
        noise_f: noise_var,
        noise_g: vec![noise_var; g.len()],
        target_cap: e.target_cap,
        seed: derive_seed(seed, NOISE_STREAM, 0),
    };
    let mut state = SafeBoState::new(task.points.clone(), f, g, task.truth.clone(), &task.seeds, &config)?;
    let mode = target_mode(e.target_mode, e.thompson_samples);
    for _ in 0..e.rounds {
        match method {
            Method::Transductive(rule) => {
                safebo_step(&mut state, rule, mode)?;
            }
            Method::SafeOpt(variant) => {
                safeopt_step(&mut state, &task.lipschitz, variant)?;
            }
        }
    }
    Ok(state.history().to_vec())
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    /// `(seed, telemetry)` in configuration order.
    pub seeds: Vec<(u64, Vec<TelemetryRow>)>,
}

impl MethodRun {
    pub fn violations(&self) -> usize {
        self.seeds.iter().flat_map(|(_, rows)| rows).filter(|r| r.violation).count()
    }

    /// `metric` of the last row of every seed.
    pub fn final_values(&self, metric: impl Fn(&TelemetryRow) -> f64) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|(_, rows)| rows.last())
            .map(metric)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SafeBoResult {
    pub runs: Vec<MethodRun>,
    pub task: Task,
}

impl SafeBoResult {
    pub fn run(&self, name: &str) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method.name() == name)
    }
}

pub fn validate(cfg: &SafeBoExperimentConfig) -> Result<Vec<Method>> {
    let e = &cfg.experiment;
    if e.seeds.is_empty() {
        return Err(Error::config("experiment.seeds", "must not be empty"));
    }
    if e.methods.is_empty() {
        return Err(Error::config("experiment.methods", "must not be empty"));
    }
    if !(e.beta >= 0.0) {
        return Err(Error::config("experiment.beta", "must be nonnegative"));
    }
    if e.thompson_samples == 0 {
        return Err(Error::config("experiment.thompson_samples", "must be at least 1"));
    }
    if e.target_cap == Some(0) {
        return Err(Error::config("experiment.target_cap", "must be at least 1"));
    }
    e.methods
        .iter()
        .enumerate()
        .map(|(i, m)| parse_method(&format!("experiment.methods[{i}]"), m))
        .collect()
}

/// Runs every (method, seed) pair on the worker pool and writes
/// `<name>_<method>.csv` telemetry plus `<name>_summary.csv`.
pub fn run_safebo_experiment(cfg: &SafeBoExperimentConfig) -> Result<SafeBoResult> {
    run_safebo_experiment_on(cfg, &workers::pool()?)
}

/// [`run_safebo_experiment`] on a given pool.
pub fn run_safebo_experiment_on(cfg: &SafeBoExperimentConfig, pool: &ThreadPool) -> Result<SafeBoResult> {
    let methods = validate(cfg)?;
    let task = build_task(cfg.experiment.task)?;
    let jobs: Vec<(usize, u64)> = (0..methods.len())
        .flat_map(|m| cfg.experiment.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outputs: Vec<Result<Vec<TelemetryRow>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, seed)| run_trajectory(&task, cfg, methods[m], seed))
            .collect()
    });
    let mut runs: Vec<MethodRun> = methods
        .iter()
        .map(|&method| MethodRun { method, seeds: Vec::new() })
        .collect();
    for (&(m, seed), out) in jobs.iter().zip(outputs) {
        runs[m].seeds.push((seed, out?));
    }
    let result = SafeBoResult { runs, task };
    write_outputs(cfg, &result)?;
    Ok(result)
}

fn write_outputs(cfg: &SafeBoExperimentConfig, result: &SafeBoResult) -> Result<()> {
    let e = &cfg.experiment;
    let dir = Path::new(&e.output_dir);
    let constraints = result.task.g.len();
    for run in &result.runs {
        let mut header = vec!["seed".to_string(), "round".into(), "chosen".into(), "y_f".into()];
        header.extend((0..constraints).map(|i| format!("y_g{i}")));
        header.extend(
            ["safe_size", "optimistic_size", "maximizers_size", "regret", "violation"].map(String::from),
        );
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = Table::new(&header);
        for (seed, rows) in &run.seeds {
            for r in rows {
                let mut cells = vec![seed.to_string(), r.round.to_string(), r.chosen.to_string(), float(r.y_f)];
                cells.extend(r.y_g.iter().map(|&v| float(v)));
                cells.extend([
                    r.safe_size.to_string(),
                    r.optimistic_size.to_string(),
                    r.maximizers_size.to_string(),
                    float(r.regret),
                    u8::from(r.violation).to_string(),
                ]);
                t.row(&cells);
            }
        }
        t.write(&dir.join(format!("{}_{}.csv", e.name, run.method.name())))?;
    }
    summary_table(e.rounds, &result.runs).write(&dir.join(format!("{}_summary.csv", e.name)))
}

/// Per-method, per-round regret and safe-set size across seeds, with the
/// cumulative violation count over all seeds.
pub fn summary_table(rounds: usize, runs: &[MethodRun]) -> Table {
    let mut t = Table::new(&[
        "method",
        "round",
        "regret_mean",
        "regret_se",
        "safe_size_mean",
        "safe_size_se",
        "violations",
    ]);
    for run in runs {
        let mut violations = 0;
        for n in 1..=rounds {
            let rows: Vec<&TelemetryRow> = run.seeds.iter().filter_map(|(_, rows)| rows.get(n - 1)).collect();
            violations += rows.iter().filter(|r| r.violation).count();
            let (rm, rse) = mean_se(&rows.iter().map(|r| r.regret).collect::<Vec<_>>());
            let (sm, sse) = mean_se(&rows.iter().map(|r| r.safe_size as f64).collect::<Vec<_>>());
            t.row(&[
                run.method.name().to_string(),
                n.to_string(),
                float(rm),
                float(rse),
                float(sm),
                float(sse),
                violations.to_string(),
            ]);
        }
    }
    t
}
