//! Theory runs: greedy capacity curve with task complexity, and the
//! excess-variance check along trajectories that observe prior-sampled truth.

use std::path::Path;

use rayon::prelude::*;
use rayon::ThreadPool;
use transductive::theory::{greedy_capacity, verify_variance_bound, BoundCheck, BoundReport, CapacityCurve, VarianceTrajectory};
use transductive::{DecisionRule, GaussianBelief, NoiseModel};

use crate::config::{BatchModeSpec, GpExperimentConfig, GpExperimentSection, TheoryConfig};
use crate::error::{Error, Result};
use crate::gp_exp::{run_trajectory, Setup};
use crate::output::{float, Table};
use crate::workers;

#[derive(Debug, Clone)]
pub struct BoundRun {
    pub rule: DecisionRule,
    pub seed: u64,
    pub picks: Vec<usize>,
    pub report: BoundReport,
}

#[derive(Debug, Clone)]
pub struct TheoryResult {
    pub capacity: CapacityCurve,
    pub alphas: Vec<f64>,
    pub bounds: Vec<BoundRun>,
}

impl TheoryResult {
    pub fn runs(&self, rule: DecisionRule) -> impl Iterator<Item = &BoundRun> {
        self.bounds.iter().filter(move |b| b.rule == rule)
    }
}

/// The same instance as a GP experiment, without its outputs.
pub fn as_gp_config(cfg: &TheoryConfig) -> GpExperimentConfig {
    let e = &cfg.experiment;
    GpExperimentConfig {
        experiment: GpExperimentSection {
            name: e.name.clone(),
            rounds: e.rounds,
            seeds: e.seeds.clone(),
            rules: e.rules.clone(),
            batch_size: 1,
            batch_mode: BatchModeSpec::Bace,
            target_subsample: None,
            record_wall_time: false,
            max_points: e.max_points,
            output_dir: e.output_dir.clone(),
        },
        domain: cfg.domain.clone(),
        kernel: cfg.kernel.clone(),
        noise: cfg.noise.clone(),
        sample_space: cfg.sample_space.clone(),
        target_space: cfg.target_space.clone(),
    }
}

/// Target variances after each pick, starting from the prior.
pub fn replay(prior: &GaussianBelief, a: &[usize], picks: &[usize], noise: &NoiseModel) -> Result<VarianceTrajectory> {
    let mut belief = prior.clone();
    let snapshot = |b: &GaussianBelief| a.iter().map(|&t| b.variance(t)).collect::<Vec<_>>();
    let mut variances = vec![snapshot(&belief)];
    for &x in picks {
        belief.rank_one_update(x, noise.variance(x), None)?;
        variances.push(snapshot(&belief));
    }
    Ok(VarianceTrajectory {
        targets: a.to_vec(),
        picks: picks.to_vec(),
        variances,
    })
}

pub fn run_theory(cfg: &TheoryConfig) -> Result<TheoryResult> {
    run_theory_on(cfg, &workers::pool()?)
}

/// [`run_theory`] on a given pool.
pub fn run_theory_on(cfg: &TheoryConfig, pool: &ThreadPool) -> Result<TheoryResult> {
    let e = &cfg.experiment;
    if e.capacity_budget == 0 {
        return Err(Error::config("experiment.capacity_budget", "must be at least 1"));
    }
    if !(e.threshold_fraction > 0.0) {
        return Err(Error::config("experiment.threshold_fraction", "must be positive"));
    }
    let gp = as_gp_config(cfg);
    let rules = gp.validate()?;
    let setup = Setup::new(&gp)?;
    let capacity = greedy_capacity(&setup.prior, &setup.target_space, &setup.sample_space, &setup.noise, e.capacity_budget)?;
    let alphas = capacity.history().alphas();
    let check = BoundCheck {
        threshold_fraction: e.threshold_fraction,
        ..BoundCheck::default()
    };
    let jobs: Vec<(DecisionRule, u64)> = rules
        .iter()
        .flat_map(|&r| e.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let bounds: Vec<Result<BoundRun>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(rule, seed)| {
                let rows = run_trajectory(&setup, &gp, rule, seed)?;
                let picks: Vec<usize> = rows.iter().flat_map(|r| r.chosen.iter().copied()).collect();
                let traj = replay(&setup.prior, &setup.target_space, &picks, &setup.noise)?;
                let report = verify_variance_bound(&setup.prior, &traj, &setup.sample_space, check)?;
                Ok(BoundRun {
                    rule,
                    seed,
                    picks,
                    report,
                })
            })
            .collect()
    });
    let result = TheoryResult {
        capacity,
        alphas,
        bounds: bounds.into_iter().collect::<Result<_>>()?,
    };
    write_outputs(cfg, &rules, &result)?;
    Ok(result)
}

fn write_outputs(cfg: &TheoryConfig, rules: &[DecisionRule], result: &TheoryResult) -> Result<()> {
    let e = &cfg.experiment;
    let dir = Path::new(&e.output_dir);
    let c = &result.capacity;
    let mut t = Table::new(&["n", "pick", "gain", "capacity", "alpha"]);
    for n in 0..c.values.len() {
        t.row(&[
            (n + 1).to_string(),
            c.picks[n].to_string(),
            float(c.gains[n]),
            float(c.values[n]),
            float(result.alphas[n]),
        ]);
    }
    t.write(&dir.join(format!("{}_capacity.csv", e.name)))?;

    for &rule in rules {
        let mut t = Table::new(&["seed", "round", "target", "variance", "irreducible", "excess"]);
        for run in result.runs(rule) {
            let r = &run.report;
            for (n, row) in r.excess.iter().enumerate() {
                for (j, &ex) in row.iter().enumerate() {
                    t.row(&[
                        run.seed.to_string(),
                        n.to_string(),
                        r.targets[j].to_string(),
                        float(ex + r.irreducible[j]),
                        float(r.irreducible[j]),
                        float(ex),
                    ]);
                }
            }
        }
        t.write(&dir.join(format!("{}_{}_excess.csv", e.name, rule.name())))?;
    }

    let mut t = Table::new(&[
        "rule",
        "seed",
        "min_excess",
        "max_increase",
        "final_relative_excess",
        "above_floor",
        "monotone",
        "below_threshold",
    ]);
    for run in &result.bounds {
        let r = &run.report;
        t.row(&[
            run.rule.name().to_string(),
            run.seed.to_string(),
            float(r.min_excess),
            float(r.max_increase),
            float(r.final_relative_excess),
            r.above_floor().to_string(),
            r.monotone().to_string(),
            r.below_threshold().to_string(),
        ]);
    }
    t.write(&dir.join(format!("{}_bounds.csv", e.name)))
}
