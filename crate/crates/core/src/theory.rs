//! Theory instruments: information capacity, irreducible uncertainty,
//! information ratio, task complexity, approximate Markov boundaries and
//! an empirical check of the excess-variance decay.

use std::io::{self, Write};

use crate::acquisition::{argmax_lowest_index, itl_scores, DecisionRule, ItlForm, TargetedBelief};
use crate::error::{Error, Result};
use crate::gp::{check_index, GaussianBelief, NoiseModel};
use crate::linalg;

/// Largest sample space accepted by [`exhaustive_capacity`].
pub const EXHAUSTIVE_MAX_SAMPLES: usize = 12;
/// Largest observation budget accepted by [`exhaustive_capacity`].
pub const EXHAUSTIVE_MAX_BUDGET: usize = 4;

/// Greedy information-capacity curve. `values[n - 1]` is `I(f_A; y_X)` for
/// the first `n` greedy picks, a (1 − 1/e) lower bound on the capacity when
/// the objective is submodular.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityCurve {
    pub values: Vec<f64>,
    pub picks: Vec<usize>,
    /// Marginal gain of each pick, i.e. `Γ_i` of the greedy run.
    pub gains: Vec<f64>,
}

impl CapacityCurve {
    pub fn history(&self) -> GainHistory {
        let mut h = GainHistory::default();
        for &g in &self.gains {
            h.push(g);
        }
        h
    }
}

/// Greedy maximization of `I(f_A; y_X)` over multisets `X ⊆ S` of size up to
/// `budget`. Values are accumulated with the chain rule.
pub fn greedy_capacity(
    belief: &GaussianBelief,
    a: &[usize],
    s: &[usize],
    noise: &NoiseModel,
    budget: usize,
) -> Result<CapacityCurve> {
    if budget == 0 {
        return Err(Error::InvalidArgument("capacity budget must be at least 1".into()));
    }
    if s.is_empty() {
        return Err(Error::Empty("sample space"));
    }
    let mut tracker = TargetedBelief::new(belief.clone(), a, DecisionRule::ITL, noise)?;
    let mut curve = CapacityCurve {
        values: Vec::with_capacity(budget),
        picks: Vec::with_capacity(budget),
        gains: Vec::with_capacity(budget),
    };
    let mut total = 0.0;
    for _ in 0..budget {
        let report = tracker.select(DecisionRule::ITL, s, noise)?;
        let gain = report.chosen_score();
        total += gain;
        curve.values.push(total);
        curve.picks.push(report.chosen);
        curve.gains.push(gain);
        tracker.observe(report.chosen, noise.variance(report.chosen), None)?;
    }
    Ok(curve)
}

/// Exact `max_{|X| ≤ budget} I(f_A; y_X)` over multisets of `S`, by
/// enumeration. Only for tiny instances.
pub fn exhaustive_capacity(
    belief: &GaussianBelief,
    a: &[usize],
    s: &[usize],
    noise: &NoiseModel,
    budget: usize,
) -> Result<f64> {
    if s.len() > EXHAUSTIVE_MAX_SAMPLES || budget > EXHAUSTIVE_MAX_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "exhaustive capacity needs |S| <= {EXHAUSTIVE_MAX_SAMPLES} and n <= {EXHAUSTIVE_MAX_BUDGET}, got {} and {budget}",
            s.len()
        )));
    }
    if budget == 0 || s.is_empty() {
        return Ok(0.0);
    }
    let mut best = 0.0_f64;
    let mut positions = vec![0usize; budget];
    // Non-decreasing position tuples enumerate each multiset once; the
    // objective is monotone so only full-size sets need checking.
    loop {
        let x: Vec<usize> = positions.iter().map(|&p| s[p]).collect();
        best = best.max(belief.mutual_information(a, &x, noise)?);
        let mut k = budget;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            if positions[k] + 1 < s.len() {
                positions[k] += 1;
                for j in k + 1..budget {
                    positions[j] = positions[k];
                }
                break;
            }
        }
    }
}

/// `Var(f_x | f_S)`: noise-free conditioning on the whole sample space,
/// the floor that no amount of sampling in `S` can beat.
pub fn irreducible_uncertainty(belief: &GaussianBelief, s: &[usize], x: usize) -> Result<f64> {
    Ok(irreducible_uncertainties(belief, s, &[x])?[0])
}

/// [`irreducible_uncertainty`] for several points with one factorization.
pub fn irreducible_uncertainties(belief: &GaussianBelief, s: &[usize], xs: &[usize]) -> Result<Vec<f64>> {
    for &i in s.iter().chain(xs) {
        check_index(i, belief.len())?;
    }
    if s.is_empty() {
        return Ok(xs.iter().map(|&x| belief.variance(x)).collect());
    }
    let in_s: std::collections::HashSet<usize> = s.iter().copied().collect();
    if xs.iter().all(|x| in_s.contains(x)) {
        return Ok(vec![0.0; xs.len()]);
    }
    let factor = linalg::cholesky_regularized(&belief.sub_cov(s, s), linalg::NOISELESS_JITTER)?;
    let mut w = belief.sub_cov(s, xs);
    factor.solve_lower_mut(&mut w);
    Ok(xs
        .iter()
        .enumerate()
        .map(|(col, &x)| {
            let prior = belief.variance(x);
            if in_s.contains(&x) {
                0.0
            } else {
                (prior - w.column(col).norm_squared()).clamp(0.0, prior)
            }
        })
        .collect())
}

/// `Σ_{x∈X} I(f_A; y_x | y_D) / I(f_A; y_X | y_D)`. Values below one
/// indicate synergy among the points of `X`; a zero denominator gives 1.
pub fn information_ratio(
    belief: &GaussianBelief,
    x: &[usize],
    d: &[usize],
    a: &[usize],
    noise: &NoiseModel,
) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Empty("observation set"));
    }
    let mut conditioned = belief.clone();
    for &i in d {
        conditioned.rank_one_update(i, noise.variance(i), None)?;
    }
    let joint = conditioned.mutual_information(a, x, noise)?;
    if joint <= 0.0 {
        return Ok(1.0);
    }
    let mut separate = 0.0;
    for &i in x {
        separate += conditioned.mutual_information(a, &[i], noise)?;
    }
    Ok(separate / joint)
}

/// Per-round maximal marginal gains `Γ_i` with their running minimum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainHistory {
    gains: Vec<f64>,
    running_min: Vec<f64>,
}

impl GainHistory {
    pub fn push(&mut self, gain: f64) {
        let min = self.running_min.last().map_or(gain, |m| m.min(gain));
        self.gains.push(gain);
        self.running_min.push(min);
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// `α_n` after each round.
    pub fn alphas(&self) -> Vec<f64> {
        self.gains
            .iter()
            .zip(&self.running_min)
            .map(|(&g, &m)| alpha(g, m))
            .collect()
    }
}

fn alpha(latest: f64, min: f64) -> f64 {
    if min > 0.0 {
        latest / min
    } else if latest > 0.0 {
        f64::INFINITY
    } else {
        // 0/0: no gain anywhere, so no evidence of synergy either.
        1.0
    }
}

/// Task complexity `α_n = Γ_{n−1} / min_{i ≤ n−1} Γ_i` for the latest round.
pub fn task_complexity(history: &GainHistory) -> Result<f64> {
    match (history.gains.last(), history.running_min.last()) {
        (Some(&g), Some(&m)) => Ok(alpha(g, m)),
        _ => Err(Error::Empty("gain history")),
    }
}

/// Greedily grows `B ⊆ S` with undirected ITL (targets = `S`) until
/// `Var(f_x | y_B) ≤ η²_S(x) + ε`. Repeated picks are allowed; more than
/// `|S|` picks is reported as non-convergence.
pub fn approx_markov_boundary(
    belief: &GaussianBelief,
    s: &[usize],
    x: usize,
    epsilon: f64,
    noise: &NoiseModel,
) -> Result<Vec<usize>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if s.is_empty() {
        return Err(Error::Empty("sample space"));
    }
    let floor = irreducible_uncertainty(belief, s, x)?;
    let mut current = belief.clone();
    let mut boundary = Vec::new();
    loop {
        if current.variance(x) <= floor + epsilon {
            return Ok(boundary);
        }
        if boundary.len() >= s.len() {
            return Err(Error::NoConvergence { picks: boundary.len() });
        }
        let scores = itl_scores(&current, s, s, noise, ItlForm::Latent)?;
        let pick = s[argmax_lowest_index(s, &scores).expect("non-empty sample space")];
        current.rank_one_update(pick, noise.variance(pick), None)?;
        boundary.push(pick);
    }
}

/// Marginal variances over the targets, one row per round starting with the
/// prior.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTrajectory {
    pub targets: Vec<usize>,
    pub picks: Vec<usize>,
    pub variances: Vec<Vec<f64>>,
}

/// Runs `rounds` covariance-only rounds of `rule` and records target
/// variances. `rule_for_round` lets randomized rules reseed per round.
pub fn variance_trajectory<F>(
    prior: &GaussianBelief,
    s: &[usize],
    a: &[usize],
    noise: &NoiseModel,
    rounds: usize,
    mut rule_for_round: F,
) -> Result<VarianceTrajectory>
where
    F: FnMut(usize) -> DecisionRule,
{
    let first = rule_for_round(0);
    let mut tracker = TargetedBelief::new(prior.clone(), a, first, noise)?;
    let snapshot = |b: &GaussianBelief| a.iter().map(|&t| b.variance(t)).collect::<Vec<_>>();
    let mut out = VarianceTrajectory {
        targets: a.to_vec(),
        picks: Vec::with_capacity(rounds),
        variances: vec![snapshot(prior)],
    };
    for n in 0..rounds {
        let rule = if n == 0 { first } else { rule_for_round(n) };
        let pick = tracker.select(rule, s, noise)?.chosen;
        tracker.observe(pick, noise.variance(pick), None)?;
        out.picks.push(pick);
        out.variances.push(snapshot(tracker.posterior()));
    }
    Ok(out)
}

/// Tolerances for [`verify_variance_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub floor_tolerance: f64,
    pub monotone_tolerance: f64,
    /// Final excess must be below this fraction of the prior variance.
    pub threshold_fraction: f64,
}

impl Default for BoundCheck {
    fn default() -> Self {
        BoundCheck {
            floor_tolerance: 1e-8,
            monotone_tolerance: 1e-6,
            threshold_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub targets: Vec<usize>,
    pub irreducible: Vec<f64>,
    pub prior_variance: Vec<f64>,
    /// `excess[n][j] = σ_n²(A_j) − η²_S(A_j)`.
    pub excess: Vec<Vec<f64>>,
    pub min_excess: f64,
    pub max_increase: f64,
    /// Largest final excess relative to the prior variance.
    pub final_relative_excess: f64,
    pub check: BoundCheck,
}

impl BoundReport {
    pub fn above_floor(&self) -> bool {
        self.min_excess >= -self.check.floor_tolerance
    }

    pub fn monotone(&self) -> bool {
        self.max_increase <= self.check.monotone_tolerance
    }

    pub fn below_threshold(&self) -> bool {
        self.final_relative_excess < self.check.threshold_fraction
    }

    pub fn passed(&self) -> bool {
        self.above_floor() && self.monotone() && self.below_threshold()
    }

    /// Long-format CSV: `round,target,variance,irreducible,excess`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "round,target,variance,irreducible,excess")?;
        for (n, row) in self.excess.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                let eta = self.irreducible[j];
                writeln!(w, "{n},{},{:.16e},{:.16e},{:.16e}", self.targets[j], e + eta, eta, e)?;
            }
        }
        Ok(())
    }
}

/// Compares a recorded trajectory with the irreducible floor of `S`.
pub fn verify_variance_bound(
    prior: &GaussianBelief,
    trajectory: &VarianceTrajectory,
    s: &[usize],
    check: BoundCheck,
) -> Result<BoundReport> {
    let a = &trajectory.targets;
    let irreducible = irreducible_uncertainties(prior, s, a)?;
    let prior_variance: Vec<f64> = a.iter().map(|&t| prior.variance(t)).collect();
    let mut min_excess = f64::INFINITY;
    let mut max_increase = f64::NEG_INFINITY;
    let mut excess = Vec::with_capacity(trajectory.variances.len());
    for row in &trajectory.variances {
        if row.len() != a.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: row.len(),
            });
        }
        let e: Vec<f64> = row.iter().zip(&irreducible).map(|(v, eta)| v - eta).collect();
        min_excess = e.iter().fold(min_excess, |m, &v| m.min(v));
        if let Some(prev) = excess.last() {
            let prev: &Vec<f64> = prev;
            max_increase = e.iter().zip(prev).fold(max_increase, |m, (c, p)| m.max(c - p));
        }
        excess.push(e);
    }
    let final_relative_excess = excess
        .last()
        .map(|row| {
            row.iter()
                .zip(&prior_variance)
                .map(|(e, p)| if *p > 0.0 { e / p } else { 0.0 })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .unwrap_or(f64::NAN);
    Ok(BoundReport {
        targets: a.clone(),
        irreducible,
        prior_variance,
        excess,
        min_excess,
        max_increase: max_increase.max(0.0),
        final_relative_excess,
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn belief(cov: &[f64], n: usize) -> GaussianBelief {
        GaussianBelief::new(DVector::zeros(n), DMatrix::from_row_slice(n, n, cov)).unwrap()
    }

    #[test]
    fn synergy_example_ratio() {
        let a = 0.6_f64;
        let b = belief(&[1.0, a, a, a, 1.0, 0.0, a, 0.0, 1.0], 3);
        let noise = NoiseModel::homoscedastic(3, 1e-6).unwrap();
        let r = information_ratio(&b, &[1, 2], &[], &[0], &noise).unwrap();
        let expected = (1.0 - 2.0 * a * a + a.powi(4)).ln() / (1.0 - 2.0 * a * a).ln();
        assert!((r - expected).abs() < 1e-3, "{r} vs {expected}");
        assert!(r < 1.0);
    }

    #[test]
    fn single_point_ratio_is_one() {
        let b = belief(&[1.0, 0.3, 0.3, 1.0], 2);
        let noise = NoiseModel::homoscedastic(2, 0.1).unwrap();
        assert_eq!(information_ratio(&b, &[1], &[], &[0], &noise).unwrap(), 1.0);
    }

    #[test]
    fn uncorrelated_ratio_falls_back_to_one() {
        let b = belief(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3);
        let noise = NoiseModel::homoscedastic(3, 0.1).unwrap();
        assert_eq!(information_ratio(&b, &[1, 2], &[], &[0], &noise).unwrap(), 1.0);
    }

    #[test]
    fn task_complexity_direct_formula() {
        let mut h = GainHistory::default();
        for g in [0.5, 0.2, 0.4] {
            h.push(g);
        }
        assert_eq!(task_complexity(&h).unwrap(), 2.0);
        assert_eq!(h.alphas(), vec![1.0, 1.0, 2.0]);
        assert!(task_complexity(&GainHistory::default()).is_err());
    }

    #[test]
    fn capacity_flat_when_uncorrelated() {
        let b = belief(&[1.0, 0.0, 0.0, 1.0], 2);
        let noise = NoiseModel::homoscedastic(2, 0.1).unwrap();
        let c = greedy_capacity(&b, &[0], &[1], &noise, 3).unwrap();
        assert_eq!(c.values, vec![0.0; 3]);
    }

    #[test]
    fn capacity_matches_direct_information() {
        let b = belief(&[1.0, 0.5, 0.2, 0.5, 1.0, 0.4, 0.2, 0.4, 1.0], 3);
        let noise = NoiseModel::homoscedastic(3, 0.1).unwrap();
        let c = greedy_capacity(&b, &[0], &[1, 2], &noise, 3).unwrap();
        for n in 1..=3 {
            let direct = b.mutual_information(&[0], &c.picks[..n], &noise).unwrap();
            assert!((c.values[n - 1] - direct).abs() < 1e-10);
        }
        let exact = exhaustive_capacity(&b, &[0], &[1, 2], &noise, 3).unwrap();
        assert!(c.values[2] <= exact + 1e-12);
        assert!(c.values[2] >= (1.0 - (-1.0_f64).exp()) * exact);
    }

    #[test]
    fn irreducible_in_sample_space_is_zero() {
        let b = belief(&[1.0, 0.5, 0.5, 1.0], 2);
        assert_eq!(irreducible_uncertainty(&b, &[0], 0).unwrap(), 0.0);
        assert!((irreducible_uncertainty(&b, &[0], 1).unwrap() - 0.75).abs() < 1e-8);
        assert_eq!(irreducible_uncertainty(&b, &[], 1).unwrap(), 1.0);
    }

    #[test]
    fn markov_boundary_empty_when_already_satisfied() {
        let b = belief(&[1.0, 0.5, 0.5, 1.0], 2);
        let noise = NoiseModel::homoscedastic(2, 0.1).unwrap();
        assert!(approx_markov_boundary(&b, &[0], 1, 0.3, &noise).unwrap().is_empty());
        let bnd = approx_markov_boundary(&b, &[0, 1], 1, 0.2, &noise).unwrap();
        assert!(!bnd.is_empty());
    }

    #[test]
    fn bound_report_csv_has_header_and_rows() {
        let b = belief(&[1.0, 0.9, 0.9, 1.0], 2);
        let noise = NoiseModel::homoscedastic(2, 0.01).unwrap();
        let t = variance_trajectory(&b, &[0], &[1], &noise, 3, |_| DecisionRule::ITL).unwrap();
        let r = verify_variance_bound(&b, &t, &[0], BoundCheck::default()).unwrap();
        assert!(r.above_floor() && r.monotone());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(text.starts_with("round,target,variance,irreducible,excess\n"));
    }
}
