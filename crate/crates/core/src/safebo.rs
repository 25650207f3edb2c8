//! Safe Bayesian optimization over a finite domain.
//!
//! The objective `f` and constraints `g_i` have independent GP beliefs.
//! Every query returns noisy values of all of them. Confidence intervals are
//! intersected across rounds, so pessimistic safe sets only grow.

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::acquisition::{self, argmax_lowest_index, DecisionRule};
use crate::error::{Error, Result};
use crate::gp::{check_index, GaussianBelief, NoiseModel};

pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_THOMPSON_SAMPLES: usize = 5;
/// Safety factor applied to the finite-difference Lipschitz estimate.
pub const LIPSCHITZ_SAFETY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(size: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; size],
            upper: vec![f64::INFINITY; size],
        }
    }

    pub fn exact(values: &[f64]) -> Self {
        Bounds {
            lower: values.to_vec(),
            upper: values.to_vec(),
        }
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Intersects with `μ ± βσ`. An empty intersection keeps the previous
    /// interval.
    fn intersect(&mut self, belief: &GaussianBelief, beta: f64) {
        for i in 0..self.lower.len() {
            let mu = belief.mean()[i];
            let half = beta * belief.std(i);
            let lo = self.lower[i].max(mu - half);
            let hi = self.upper[i].min(mu + half);
            if lo <= hi {
                self.lower[i] = lo;
                self.upper[i] = hi;
            }
        }
    }
}

/// Confidence intervals for the objective and each constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    pub beta: f64,
    pub f: Bounds,
    pub g: Vec<Bounds>,
}

impl ConfidenceState {
    pub fn unbounded(size: usize, constraints: usize, beta: f64) -> Self {
        ConfidenceState {
            beta,
            f: Bounds::unbounded(size),
            g: vec![Bounds::unbounded(size); constraints],
        }
    }

    /// Intervals collapsed onto known values.
    pub fn exact(truth: &GroundTruth, beta: f64) -> Self {
        ConfidenceState {
            beta,
            f: Bounds::exact(&truth.f),
            g: truth.g.iter().map(|g| Bounds::exact(g)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.f.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest interval width over the objective and all constraints.
    pub fn max_width(&self, i: usize) -> f64 {
        self.g.iter().map(|b| b.width(i)).fold(self.f.width(i), f64::max)
    }
}

/// Intersects the current intervals with the posterior `μ ± βσ` of each
/// function.
pub fn update_confidence(state: &ConfidenceState, f: &GaussianBelief, g: &[GaussianBelief]) -> ConfidenceState {
    let mut next = state.clone();
    next.f.intersect(f, state.beta);
    for (b, belief) in next.g.iter_mut().zip(g) {
        b.intersect(belief, state.beta);
    }
    next
}

/// Pessimistic and optimistic safe sets, potential maximizers and
/// potential expanders, each as sorted index lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SafeSets {
    pub safe: Vec<usize>,
    pub optimistic: Vec<usize>,
    pub maximizers: Vec<usize>,
    pub expanders: Vec<usize>,
}

/// Sets induced by the confidence intervals. Seeds count as safe. With an
/// empty safe set every optimistic point is a potential maximizer.
pub fn compute_sets(conf: &ConfidenceState, seeds: &[usize]) -> SafeSets {
    let m = conf.len();
    let mut is_seed = vec![false; m];
    for &s in seeds {
        if s < m {
            is_seed[s] = true;
        }
    }
    let safe: Vec<usize> = (0..m)
        .filter(|&i| is_seed[i] || conf.g.iter().all(|b| b.lower[i] >= 0.0))
        .collect();
    let optimistic: Vec<usize> = (0..m)
        .filter(|&i| is_seed[i] || conf.g.iter().all(|b| b.upper[i] >= 0.0))
        .collect();
    let threshold = safe.iter().map(|&i| conf.f.lower[i]).fold(f64::NEG_INFINITY, f64::max);
    let maximizers = optimistic
        .iter()
        .copied()
        .filter(|&i| conf.f.upper[i] >= threshold)
        .collect();
    let mut in_safe = vec![false; m];
    for &i in &safe {
        in_safe[i] = true;
    }
    let expanders = optimistic.iter().copied().filter(|&i| !in_safe[i]).collect();
    SafeSets {
        safe,
        optimistic,
        maximizers,
        expanders,
    }
}

/// True objective and constraint values, for telemetry only.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub f: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub safe_set: Vec<usize>,
    pub safe_optimum: f64,
}

impl GroundTruth {
    pub fn new(f: Vec<f64>, g: Vec<Vec<f64>>) -> Result<Self> {
        for c in &g {
            if c.len() != f.len() {
                return Err(Error::DimensionMismatch {
                    expected: f.len(),
                    found: c.len(),
                });
            }
        }
        let safe_set: Vec<usize> = (0..f.len()).filter(|&i| g.iter().all(|c| c[i] >= 0.0)).collect();
        let safe_optimum = safe_set.iter().map(|&i| f[i]).fold(f64::NEG_INFINITY, f64::max);
        Ok(GroundTruth {
            f,
            g,
            safe_set,
            safe_optimum,
        })
    }

    pub fn is_safe(&self, i: usize) -> bool {
        self.g.iter().all(|c| c[i] >= 0.0)
    }

    pub fn optimum_over(&self, region: &[usize]) -> f64 {
        region.iter().map(|&i| self.f[i]).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    Maximizers,
    Expanders,
    Thompson(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafeOptVariant {
    /// Known Lipschitz constants.
    Oracle,
    /// Lipschitz constants estimated from the constraint posterior mean.
    Estimated,
    /// Kernel-based safe set with hallucinated-observation expanders.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeBoConfig {
    pub beta: f64,
    pub noise_f: f64,
    pub noise_g: Vec<f64>,
    /// Targets beyond this many are uniformly subsampled each round.
    pub target_cap: Option<usize>,
    pub seed: u64,
}

/// One round of telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub round: usize,
    pub chosen: usize,
    pub y_f: f64,
    pub y_g: Vec<f64>,
    pub safe_size: usize,
    pub optimistic_size: usize,
    pub maximizers_size: usize,
    pub regret: f64,
    pub violation: bool,
}

/// Single-trajectory state of a safe BO run.
#[derive(Debug, Clone)]
pub struct SafeBoState {
    points: Vec<Vec<f64>>,
    f: GaussianBelief,
    g: Vec<GaussianBelief>,
    noise_f: NoiseModel,
    noise_g: Vec<NoiseModel>,
    confidence: ConfidenceState,
    sets: SafeSets,
    seeds: Vec<usize>,
    lipschitz_safe: Vec<bool>,
    truth: GroundTruth,
    region: Vec<usize>,
    target_cap: Option<usize>,
    rng: ChaCha8Rng,
    history: Vec<TelemetryRow>,
}

impl SafeBoState {
    /// `points` are the domain coordinates (used for Lipschitz distances).
    /// Regret is measured against `truth` over its safe set.
    pub fn new(
        points: Vec<Vec<f64>>,
        f: GaussianBelief,
        g: Vec<GaussianBelief>,
        truth: GroundTruth,
        seeds: &[usize],
        config: &SafeBoConfig,
    ) -> Result<Self> {
        let m = points.len();
        if f.len() != m || truth.f.len() != m || g.iter().any(|b| b.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: f.len(),
            });
        }
        if g.len() != config.noise_g.len() || g.len() != truth.g.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                found: config.noise_g.len(),
            });
        }
        if seeds.is_empty() {
            return Err(Error::NoSafeSeed);
        }
        for &s in seeds {
            check_index(s, m)?;
        }
        if !(config.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {}", config.beta)));
        }
        let noise_f = NoiseModel::homoscedastic(m, config.noise_f)?;
        let noise_g = config
            .noise_g
            .iter()
            .map(|&v| NoiseModel::homoscedastic(m, v))
            .collect::<Result<Vec<_>>>()?;
        let confidence = update_confidence(&ConfidenceState::unbounded(m, g.len(), config.beta), &f, &g);
        let sets = compute_sets(&confidence, seeds);
        let mut lipschitz_safe = vec![false; m];
        for &s in seeds {
            lipschitz_safe[s] = true;
        }
        let region = truth.safe_set.clone();
        Ok(SafeBoState {
            points,
            f,
            g,
            noise_f,
            noise_g,
            confidence,
            sets,
            seeds: seeds.to_vec(),
            lipschitz_safe,
            truth,
            region,
            target_cap: config.target_cap,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: Vec::new(),
        })
    }

    /// Restricts the regret reference region (defaults to the true safe set).
    pub fn set_regret_region(&mut self, region: Vec<usize>) {
        self.region = region;
    }

    /// Replaces the confidence intervals, e.g. with exact oracle bounds.
    pub fn set_confidence(&mut self, confidence: ConfidenceState) {
        self.confidence = confidence;
        self.sets = compute_sets(&self.confidence, &self.seeds);
    }

    pub fn confidence(&self) -> &ConfidenceState {
        &self.confidence
    }

    pub fn sets(&self) -> &SafeSets {
        &self.sets
    }

    pub fn objective(&self) -> &GaussianBelief {
        &self.f
    }

    pub fn constraints(&self) -> &[GaussianBelief] {
        &self.g
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn history(&self) -> &[TelemetryRow] {
        &self.history
    }

    /// Current Lipschitz-based SafeOpt safe set.
    pub fn lipschitz_safe_set(&self) -> Vec<usize> {
        (0..self.lipschitz_safe.len()).filter(|&i| self.lipschitz_safe[i]).collect()
    }

    /// Queries `index`, updates beliefs, bounds and sets, and records a row
    /// whose safe-set size is that of the kernel-based pessimistic set.
    pub fn observe(&mut self, index: usize) -> Result<&TelemetryRow> {
        let y_f = self.query(index)?;
        let safe = self.sets.safe.clone();
        self.record(index, y_f.0, y_f.1, &safe)
    }

    fn query(&mut self, index: usize) -> Result<(f64, Vec<f64>)> {
        check_index(index, self.points.len())?;
        let noise = |rng: &mut ChaCha8Rng, var: f64| var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let y_f = self.truth.f[index] + noise(&mut self.rng, self.noise_f.variance(index));
        let y_g: Vec<f64> = (0..self.g.len())
            .map(|i| self.truth.g[i][index] + noise(&mut self.rng, self.noise_g[i].variance(index)))
            .collect();
        self.f.rank_one_update(index, self.noise_f.variance(index), Some(y_f))?;
        for (i, b) in self.g.iter_mut().enumerate() {
            b.rank_one_update(index, self.noise_g[i].variance(index), Some(y_g[i]))?;
        }
        self.confidence = update_confidence(&self.confidence, &self.f, &self.g);
        self.sets = compute_sets(&self.confidence, &self.seeds);
        Ok((y_f, y_g))
    }

    fn record(&mut self, chosen: usize, y_f: f64, y_g: Vec<f64>, safe: &[usize]) -> Result<&TelemetryRow> {
        let regret = regret_over(&self.confidence, &self.truth, safe, &self.region)?;
        self.history.push(TelemetryRow {
            round: self.history.len() + 1,
            chosen,
            y_f,
            y_g,
            safe_size: safe.len(),
            optimistic_size: self.sets.optimistic.len(),
            maximizers_size: self.sets.maximizers.len(),
            regret,
            violation: !self.truth.is_safe(chosen),
        });
        Ok(self.history.last().expect("just pushed"))
    }

    fn cap_targets(&mut self, mut targets: Vec<usize>) -> Vec<usize> {
        if let Some(cap) = self.target_cap {
            if targets.len() > cap {
                let picks = index::sample(&mut self.rng, targets.len(), cap);
                let mut chosen: Vec<usize> = picks.iter().map(|p| targets[p]).collect();
                chosen.sort_unstable();
                targets = chosen;
            }
        }
        targets
    }

    /// Targets for the next round under `mode`.
    pub fn targets(&mut self, mode: TargetMode) -> Result<Vec<usize>> {
        let raw = match mode {
            TargetMode::Maximizers => self.sets.maximizers.clone(),
            TargetMode::Expanders if !self.sets.expanders.is_empty() => self.sets.expanders.clone(),
            TargetMode::Expanders => self.sets.maximizers.clone(),
            TargetMode::Thompson(k) => {
                let t = thompson_targets(self, k)?;
                if t.is_empty() {
                    self.sets.maximizers.clone()
                } else {
                    t
                }
            }
        };
        Ok(self.cap_targets(raw))
    }
}

fn regret_over(conf: &ConfidenceState, truth: &GroundTruth, safe: &[usize], region: &[usize]) -> Result<f64> {
    if safe.is_empty() {
        return Err(Error::Empty("pessimistic safe set"));
    }
    let lower: Vec<f64> = safe.iter().map(|&i| conf.f.lower[i]).collect();
    let reported = safe[argmax_lowest_index(safe, &lower).expect("non-empty safe set")];
    Ok(truth.optimum_over(region) - truth.f[reported])
}

/// Regret of the point maximizing the lower objective bound over the
/// pessimistic safe set, relative to the best true value in `region`.
pub fn simple_regret(state: &SafeBoState, truth: &GroundTruth, region: &[usize]) -> Result<f64> {
    regret_over(&state.confidence, truth, &state.sets.safe, region)
}

/// `k` joint posterior draws of `(f, g)` over the optimistic safe set; each
/// contributes the argmax of its sampled `f` over its sampled-safe points.
/// Draws with no sampled-safe point contribute nothing.
pub fn thompson_targets(state: &mut SafeBoState, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("Thompson sample count must be at least 1".into()));
    }
    let support = state.sets.optimistic.clone();
    if support.is_empty() {
        return Ok(Vec::new());
    }
    let f_draws = draw(&state.f, &support, k, &mut state.rng)?;
    let g_draws = state
        .g
        .clone()
        .iter()
        .map(|b| draw(b, &support, k, &mut state.rng))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(k);
    for d in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &i) in support.iter().enumerate() {
            if g_draws.iter().all(|g| g[d][pos] >= 0.0) {
                let v = f_draws[d][pos];
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        if let Some((i, _)) = best {
            out.push(i);
        }
    }
    Ok(out)
}

fn draw(belief: &GaussianBelief, support: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    belief.sample(support, k, rng)
}

fn joint_scores(state: &mut SafeBoState, rule: DecisionRule, s: &[usize], a: &[usize]) -> Result<Vec<f64>> {
    let mut total = acquisition::score_candidates(rule, &state.f, s, a, &state.noise_f)?;
    for (b, noise) in state.g.iter().zip(&state.noise_g) {
        let part = acquisition::score_candidates(rule, b, s, a, noise)?;
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

/// One round of transductive safe BO: targets from `mode`, sample space the
/// pessimistic safe set, scores summed over objective and constraints.
pub fn safebo_step(state: &mut SafeBoState, rule: DecisionRule, mode: TargetMode) -> Result<&TelemetryRow> {
    let s = state.sets.safe.clone();
    if s.is_empty() {
        return Err(Error::NoSafeSeed);
    }
    let chosen = match rule {
        DecisionRule::Random { .. } => s[state.rng.gen_range(0..s.len())],
        DecisionRule::UncertaintySampling => {
            let scores = joint_scores(state, rule, &s, &[])?;
            s[argmax_lowest_index(&s, &scores).expect("non-empty safe set")]
        }
        _ => {
            let a = state.targets(mode)?;
            if a.is_empty() {
                return Err(Error::Empty("target set"));
            }
            let scores = joint_scores(state, rule, &s, &a)?;
            s[argmax_lowest_index(&s, &scores).expect("non-empty safe set")]
        }
    };
    state.observe(chosen)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest slope of `values` between each point and its nearest neighbour,
/// times [`LIPSCHITZ_SAFETY_FACTOR`].
pub fn estimate_lipschitz(points: &[Vec<f64>], values: &[f64]) -> f64 {
    let mut slope = 0.0_f64;
    for i in 0..points.len() {
        let mut nearest = f64::INFINITY;
        let mut best = 0.0_f64;
        for j in 0..points.len() {
            if i == j {
                continue;
            }
            let d = distance(&points[i], &points[j]);
            if d <= 0.0 {
                continue;
            }
            let s = (values[i] - values[j]).abs() / d;
            if d < nearest - 1e-12 {
                nearest = d;
                best = s;
            } else if (d - nearest).abs() <= 1e-12 {
                best = best.max(s);
            }
        }
        slope = slope.max(best);
    }
    slope * LIPSCHITZ_SAFETY_FACTOR
}

/// Grows the Lipschitz safe set: `x` becomes safe when, for every
/// constraint, some safe `x'` has `l(x') − L‖x − x'‖ ≥ 0`.
fn grow_lipschitz_safe(state: &mut SafeBoState, lipschitz: &[f64]) {
    let m = state.points.len();
    let safe: Vec<usize> = state.lipschitz_safe_set();
    let mut grown = state.lipschitz_safe.clone();
    for x in 0..m {
        if grown[x] {
            continue;
        }
        let ok = state.confidence.g.iter().zip(lipschitz).all(|(b, &l)| {
            safe.iter()
                .any(|&s| b.lower[s] - l * distance(&state.points[x], &state.points[s]) >= 0.0)
        });
        if ok {
            grown[x] = true;
        }
    }
    state.lipschitz_safe = grown;
}

fn lipschitz_expanders(state: &SafeBoState, safe: &[usize], lipschitz: &[f64]) -> Vec<usize> {
    let unsafe_points: Vec<usize> = (0..state.points.len()).filter(|&i| !state.lipschitz_safe[i]).collect();
    safe.iter()
        .copied()
        .filter(|&x| {
            unsafe_points.iter().any(|&y| {
                let d = distance(&state.points[x], &state.points[y]);
                state
                    .confidence
                    .g
                    .iter()
                    .zip(lipschitz)
                    .all(|(b, &l)| b.upper[x] - l * d >= 0.0)
            })
        })
        .collect()
}

/// Points of the kernel-based safe set whose hallucinated observation at the
/// constraint upper bound would enlarge that safe set.
fn hallucinated_expanders(state: &SafeBoState) -> Vec<usize> {
    let m = state.points.len();
    let safe = &state.sets.safe;
    let mut in_safe = vec![false; m];
    for &i in safe {
        in_safe[i] = true;
    }
    let outside: Vec<usize> = (0..m).filter(|&i| !in_safe[i]).collect();
    let beta = state.confidence.beta;
    safe.iter()
        .copied()
        .filter(|&x| {
            outside.iter().any(|&y| {
                state.g.iter().zip(&state.noise_g).zip(&state.confidence.g).all(|((b, noise), bounds)| {
                    let denom = b.variance(x) + noise.variance(x);
                    let c = b.covariance(x, y);
                    let mean = b.mean()[y] + c * (bounds.upper[x] - b.mean()[x]) / denom;
                    let var = (b.variance(y) - c * c / denom).max(0.0);
                    mean - beta * var.sqrt() >= 0.0
                })
            })
        })
        .collect()
}

/// One SafeOpt round: uncertainty sampling over maximizers and expanders of
/// the variant's safe set, falling back to the whole safe set when both are
/// empty.
pub fn safeopt_step<'a>(
    state: &'a mut SafeBoState,
    lipschitz: &[f64],
    variant: SafeOptVariant,
) -> Result<&'a TelemetryRow> {
    let (safe, maximizers, expanders) = match variant {
        SafeOptVariant::Heuristic => (
            state.sets.safe.clone(),
            state.sets.maximizers.iter().copied().filter(|i| state.sets.safe.contains(i)).collect(),
            hallucinated_expanders(state),
        ),
        SafeOptVariant::Oracle | SafeOptVariant::Estimated => {
            let l: Vec<f64> = match variant {
                SafeOptVariant::Oracle => {
                    if lipschitz.len() != state.g.len() {
                        return Err(Error::DimensionMismatch {
                            expected: state.g.len(),
                            found: lipschitz.len(),
                        });
                    }
                    if let Some(bad) = lipschitz.iter().find(|l| !(**l >= 0.0)) {
                        return Err(Error::InvalidArgument(format!("Lipschitz constant must be nonnegative, got {bad}")));
                    }
                    lipschitz.to_vec()
                }
                _ => state
                    .g
                    .iter()
                    .map(|b| estimate_lipschitz(&state.points, b.mean().as_slice()))
                    .collect(),
            };
            grow_lipschitz_safe(state, &l);
            let safe = state.lipschitz_safe_set();
            let threshold = safe
                .iter()
                .map(|&i| state.confidence.f.lower[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let maximizers = safe
                .iter()
                .copied()
                .filter(|&i| state.confidence.f.upper[i] >= threshold)
                .collect();
            let expanders = lipschitz_expanders(state, &safe, &l);
            (safe, maximizers, expanders)
        }
    };
    let mut pool: Vec<usize> = maximizers;
    pool.extend(expanders);
    pool.sort_unstable();
    pool.dedup();
    if pool.is_empty() {
        pool = safe.clone();
    }
    let widths: Vec<f64> = pool.iter().map(|&i| state.confidence.max_width(i)).collect();
    let chosen = pool[argmax_lowest_index(&pool, &widths).expect("non-empty pool")];
    let (y_f, y_g) = state.query(chosen)?;
    if variant != SafeOptVariant::Heuristic {
        let l_now: Vec<f64> = match variant {
            SafeOptVariant::Oracle => lipschitz.to_vec(),
            _ => state
                .g
                .iter()
                .map(|b| estimate_lipschitz(&state.points, b.mean().as_slice()))
                .collect(),
        };
        grow_lipschitz_safe(state, &l_now);
    }
    let safe_now = match variant {
        SafeOptVariant::Heuristic => state.sets.safe.clone(),
        _ => state.lipschitz_safe_set(),
    };
    state.record(chosen, y_f, y_g, &safe_now)
}
