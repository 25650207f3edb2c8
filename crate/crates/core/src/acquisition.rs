//! Single-point decision rules.
//!
//! Every rule is expressed as a score to maximize; VTL is stored as the
//! negative posterior total variance so that one argmax path serves all
//! rules. Ties go to the lowest domain index.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::{check_index, GaussianBelief, NoiseModel};
use crate::linalg;

/// Variances below this are treated as zero by correlation-based rules.
pub const ZERO_VARIANCE: f64 = 1e-12;

/// How ITL conditions on the targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ItlForm {
    /// `I(f_A; y_x)`, conditioning on latent target values.
    #[default]
    Latent,
    /// `I(y_A; y_x)`: noise added to the target block before inversion.
    Stabilized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionRule {
    Itl(ItlForm),
    Vtl,
    Ctl,
    MmItl,
    UncertaintySampling,
    Random { seed: u64 },
}

impl DecisionRule {
    pub const ITL: DecisionRule = DecisionRule::Itl(ItlForm::Latent);

    /// Whether the rule reads the target space at all.
    pub fn is_directed(&self) -> bool {
        !matches!(self, DecisionRule::UncertaintySampling | DecisionRule::Random { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecisionRule::Itl(ItlForm::Latent) => "itl",
            DecisionRule::Itl(ItlForm::Stabilized) => "itl-stabilized",
            DecisionRule::Vtl => "vtl",
            DecisionRule::Ctl => "ctl",
            DecisionRule::MmItl => "mmitl",
            DecisionRule::UncertaintySampling => "unsa",
            DecisionRule::Random { .. } => "random",
        }
    }
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "itl" => Ok(DecisionRule::ITL),
            "itl-stabilized" => Ok(DecisionRule::Itl(ItlForm::Stabilized)),
            "vtl" => Ok(DecisionRule::Vtl),
            "ctl" => Ok(DecisionRule::Ctl),
            "mmitl" | "mm-itl" => Ok(DecisionRule::MmItl),
            "unsa" => Ok(DecisionRule::UncertaintySampling),
            "random" => Ok(DecisionRule::Random { seed: 0 }),
            other => Err(Error::InvalidArgument(format!(
                "unknown decision rule '{other}' (expected itl|itl-stabilized|vtl|ctl|mmitl|unsa|random)"
            ))),
        }
    }
}

/// Scores of every candidate together with the chosen index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub chosen: usize,
    pub rule: DecisionRule,
}

impl ScoreReport {
    pub fn chosen_score(&self) -> f64 {
        self.candidates
            .iter()
            .position(|&c| c == self.chosen)
            .map(|p| self.scores[p])
            .unwrap_or(f64::NAN)
    }
}

/// Position of the best score; ties resolve to the lowest domain index.
pub fn argmax_lowest_index(candidates: &[usize], scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (pos, (&c, &s)) in candidates.iter().zip(scores).enumerate() {
        match best {
            None => best = Some(pos),
            Some(b) => {
                let (bc, bs) = (candidates[b], scores[b]);
                if s > bs || (s == bs && c < bc) {
                    best = Some(pos);
                }
            }
        }
    }
    best
}

fn check_sets(belief: &GaussianBelief, s: &[usize], a: &[usize]) -> Result<()> {
    for &i in s.iter().chain(a) {
        check_index(i, belief.len())?;
    }
    Ok(())
}

/// `K_{A,S}` pre-multiplied by the inverse lower factor of the target block.
fn whitened_cross(
    belief: &GaussianBelief,
    a: &[usize],
    s: &[usize],
    target_noise: Option<&NoiseModel>,
) -> Result<DMatrix<f64>> {
    let mut k_aa = belief.sub_cov(a, a);
    if let Some(noise) = target_noise {
        for (i, &ai) in a.iter().enumerate() {
            k_aa[(i, i)] += noise.variance(ai);
        }
    }
    let factor = linalg::cholesky(&k_aa)?;
    let mut v = belief.sub_cov(a, s);
    factor.solve_lower_mut(&mut v);
    Ok(v)
}

/// ITL scores via the backward form: one factorization of the target block,
/// then a scalar ratio per candidate.
pub fn itl_scores(
    belief: &GaussianBelief,
    a: &[usize],
    s: &[usize],
    noise: &NoiseModel,
    form: ItlForm,
) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::Empty("target set"));
    }
    check_sets(belief, s, a)?;
    let stabilized = form == ItlForm::Stabilized;
    let v = whitened_cross(belief, a, s, stabilized.then_some(noise))?;
    Ok(s.iter()
        .enumerate()
        .map(|(col, &x)| {
            let var = belief.variance(x);
            let rho2 = noise.variance(x);
            let explained = v.column(col).norm_squared();
            let conditional = if !stabilized && a.contains(&x) {
                0.0
            } else {
                (var - explained).clamp(0.0, var)
            };
            itl_ratio(var, conditional, rho2)
        })
        .collect())
}

fn itl_ratio(var: f64, conditional: f64, rho2: f64) -> f64 {
    (0.5 * ((var + rho2) / (conditional + rho2)).ln()).max(0.0)
}

/// `I(f_A; y_x)` for a single candidate (backward form).
pub fn itl_score(belief: &GaussianBelief, a: &[usize], x: usize, noise: &NoiseModel) -> Result<f64> {
    Ok(itl_scores(belief, a, &[x], noise, ItlForm::Latent)?[0])
}

/// `I(y_A; y_x)`: the target block carries observation noise.
pub fn itl_score_stabilized(belief: &GaussianBelief, a: &[usize], x: usize, noise: &NoiseModel) -> Result<f64> {
    Ok(itl_scores(belief, a, &[x], noise, ItlForm::Stabilized)?[0])
}

/// Negative posterior total variance of `f_A` after observing `y_x`.
pub fn vtl_score(belief: &GaussianBelief, a: &[usize], x: usize, noise: &NoiseModel) -> Result<f64> {
    check_sets(belief, &[x], a)?;
    let denom = belief.variance(x) + noise.variance(x);
    Ok(-a
        .iter()
        .map(|&t| {
            let c = belief.covariance(x, t);
            belief.variance(t) - c * c / denom
        })
        .sum::<f64>())
}

/// Sum of posterior correlations between `f_x` and each target.
pub fn ctl_score(belief: &GaussianBelief, a: &[usize], x: usize) -> Result<f64> {
    check_sets(belief, &[x], a)?;
    let vx = belief.variance(x);
    if vx < ZERO_VARIANCE {
        return Ok(0.0);
    }
    let sx = vx.sqrt();
    Ok(a.iter()
        .filter(|&&t| belief.variance(t) >= ZERO_VARIANCE)
        .map(|&t| belief.covariance(x, t) / (sx * belief.variance(t).sqrt()))
        .sum())
}

/// Sum over targets of the marginal information gain `I(f_a; y_x)`.
pub fn mmitl_score(belief: &GaussianBelief, a: &[usize], x: usize, noise: &NoiseModel) -> Result<f64> {
    check_sets(belief, &[x], a)?;
    let denom = belief.variance(x) + noise.variance(x);
    Ok(a.iter()
        .filter(|&&t| belief.variance(t) >= ZERO_VARIANCE)
        .map(|&t| {
            let c = belief.covariance(x, t);
            let r2 = (c * c / (belief.variance(t) * denom)).clamp(0.0, 1.0 - f64::EPSILON);
            -0.5 * (1.0 - r2).ln()
        })
        .sum())
}

/// Current marginal variance `σ²(x)`.
pub fn unsa_score(belief: &GaussianBelief, x: usize) -> Result<f64> {
    check_index(x, belief.len())?;
    Ok(belief.variance(x))
}

/// Scores of every candidate in `s` under `rule`.
pub fn score_candidates(
    rule: DecisionRule,
    belief: &GaussianBelief,
    s: &[usize],
    a: &[usize],
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    check_sets(belief, s, a)?;
    if noise.len() < belief.len() {
        return Err(Error::DimensionMismatch {
            expected: belief.len(),
            found: noise.len(),
        });
    }
    match rule {
        DecisionRule::Itl(form) => itl_scores(belief, a, s, noise, form),
        DecisionRule::Vtl => s.iter().map(|&x| vtl_score(belief, a, x, noise)).collect(),
        DecisionRule::Ctl => s.iter().map(|&x| ctl_score(belief, a, x)).collect(),
        DecisionRule::MmItl => s.iter().map(|&x| mmitl_score(belief, a, x, noise)).collect(),
        DecisionRule::UncertaintySampling => Ok(s.iter().map(|&x| belief.variance(x)).collect()),
        DecisionRule::Random { .. } => Ok(vec![0.0; s.len()]),
    }
}

/// Picks the next observation from `s`.
pub fn select_next(
    rule: DecisionRule,
    belief: &GaussianBelief,
    s: &[usize],
    a: &[usize],
    noise: &NoiseModel,
) -> Result<ScoreReport> {
    if s.is_empty() {
        return Err(Error::Empty("sample space"));
    }
    let scores = score_candidates(rule, belief, s, a, noise)?;
    let chosen = choose(rule, s, &scores);
    Ok(ScoreReport {
        candidates: s.to_vec(),
        scores,
        chosen,
        rule,
    })
}

pub(crate) fn choose(rule: DecisionRule, s: &[usize], scores: &[f64]) -> usize {
    match rule {
        DecisionRule::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            s[rng.gen_range(0..s.len())]
        }
        _ => s[argmax_lowest_index(s, scores).expect("non-empty sample space")],
    }
}

/// Belief tracker for a fixed target space.
///
/// Keeps the posterior and, for ITL, the posterior additionally conditioned
/// on the targets, so each round costs two rank-one updates and O(|S|)
/// scoring instead of refactoring the target block.
#[derive(Debug, Clone)]
pub struct TargetedBelief {
    posterior: GaussianBelief,
    target_conditioned: Option<GaussianBelief>,
    targets: Vec<usize>,
    form: ItlForm,
}

impl TargetedBelief {
    pub fn new(prior: GaussianBelief, targets: &[usize], rule: DecisionRule, noise: &NoiseModel) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("target set"));
        }
        check_sets(&prior, &[], targets)?;
        let (target_conditioned, form) = match rule {
            DecisionRule::Itl(form) => {
                let locations: Vec<(usize, f64)> = match form {
                    ItlForm::Latent => targets.iter().map(|&t| (t, 0.0)).collect(),
                    ItlForm::Stabilized => targets.iter().map(|&t| (t, noise.variance(t))).collect(),
                };
                (Some(condition_on_targets(&prior, &locations)?), form)
            }
            _ => (None, ItlForm::Latent),
        };
        Ok(TargetedBelief {
            posterior: prior,
            target_conditioned,
            targets: targets.to_vec(),
            form,
        })
    }

    pub fn posterior(&self) -> &GaussianBelief {
        &self.posterior
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn observe(&mut self, index: usize, noise_var: f64, value: Option<f64>) -> Result<()> {
        self.posterior.rank_one_update(index, noise_var, value)?;
        if let Some(tc) = self.target_conditioned.as_mut() {
            tc.rank_one_update(index, noise_var, None)?;
        }
        Ok(())
    }

    pub fn scores(&self, rule: DecisionRule, s: &[usize], noise: &NoiseModel) -> Result<Vec<f64>> {
        match (rule, &self.target_conditioned) {
            (DecisionRule::Itl(form), Some(tc)) if form == self.form => {
                check_sets(&self.posterior, s, &[])?;
                Ok(s.iter()
                    .map(|&x| {
                        let var = self.posterior.variance(x);
                        let conditional = match form {
                            ItlForm::Latent if self.targets.contains(&x) => 0.0,
                            _ => tc.variance(x).clamp(0.0, var),
                        };
                        itl_ratio(var, conditional, noise.variance(x))
                    })
                    .collect())
            }
            _ => score_candidates(rule, &self.posterior, s, &self.targets, noise),
        }
    }

    pub fn select(&self, rule: DecisionRule, s: &[usize], noise: &NoiseModel) -> Result<ScoreReport> {
        if s.is_empty() {
            return Err(Error::Empty("sample space"));
        }
        let scores = self.scores(rule, s, noise)?;
        let chosen = choose(rule, s, &scores);
        Ok(ScoreReport {
            candidates: s.to_vec(),
            scores,
            chosen,
            rule,
        })
    }
}

/// Covariance conditioned on target locations; zero noise means latent
/// values (factorized with the jitter ladder).
fn condition_on_targets(prior: &GaussianBelief, locations: &[(usize, f64)]) -> Result<GaussianBelief> {
    let idx: Vec<usize> = locations.iter().map(|l| l.0).collect();
    let mut k = prior.sub_cov(&idx, &idx);
    for (i, l) in locations.iter().enumerate() {
        k[(i, i)] += l.1;
    }
    let factor = linalg::cholesky(&k)?;
    let all: Vec<usize> = (0..prior.len()).collect();
    let mut w = prior.sub_cov(&idx, &all);
    factor.solve_lower_mut(&mut w);
    let mut cov = prior.cov() - w.transpose() * &w;
    linalg::symmetrize_in_place(&mut cov);
    for i in 0..cov.nrows() {
        if cov[(i, i)] < 0.0 {
            cov[(i, i)] = 0.0;
        }
    }
    GaussianBelief::new(prior.mean().clone(), cov)
}
