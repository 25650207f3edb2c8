//! Embedding retrieval: pick batches of candidates that are informative
//! about a set of target embeddings under the linear embedding kernel.

use transductive::batch::cosine_similarity_scores;
use transductive::{
    select_batch, BatchMode, BatchRequest, DecisionRule, Error as CoreError, FiniteDomain, GaussianBelief, Kernel,
    NoiseModel,
};

use crate::error::{Error, Result};
use crate::output::{float, Table};
use crate::stats::derive_seed;

const RANDOM_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Rule(DecisionRule),
    /// Mean cosine similarity to the targets, top-b per round.
    Cosine,
}

impl Selector {
    pub fn name(&self) -> &'static str {
        match self {
            Selector::Rule(r) => r.name(),
            Selector::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOptions {
    pub selector: Selector,
    pub batch_size: usize,
    pub rounds: usize,
    pub noise_variance: f64,
    pub mode: BatchMode,
    pub seed: u64,
    /// Largest `|candidates| + |targets|` accepted (the covariance is dense).
    pub max_points: usize,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions {
            selector: Selector::Rule(DecisionRule::ITL),
            batch_size: 1,
            rounds: 1,
            noise_variance: 0.01,
            mode: BatchMode::Bace,
            seed: 0,
            max_points: 10_000,
        }
    }
}

/// One round of picks; indices are candidate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRound {
    pub round: usize,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

fn joint_domain(candidates: &FiniteDomain, targets: &FiniteDomain) -> Result<FiniteDomain> {
    if candidates.dim() != targets.dim() {
        return Err(Error::Argument(format!(
            "candidate dimension {} differs from target dimension {}",
            candidates.dim(),
            targets.dim()
        )));
    }
    let mut values: Vec<f32> = Vec::with_capacity((candidates.len() + targets.len()) * candidates.dim());
    for d in [candidates, targets] {
        match d.raw_f32() {
            Some(raw) => values.extend_from_slice(raw),
            None => values.extend(d.all_points().into_iter().flatten().map(|v| v as f32)),
        }
    }
    Ok(FiniteDomain::from_embeddings(candidates.dim(), values)?)
}

/// Runs `rounds` rounds of batch selection. Candidates picked in earlier
/// rounds leave the pool, and the belief is conditioned on their locations.
pub fn retrieve(candidates: &FiniteDomain, targets: &FiniteDomain, opts: &RetrievalOptions) -> Result<Vec<RetrievalRound>> {
    if opts.batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    if opts.batch_size * opts.rounds > candidates.len() {
        return Err(Error::Core(CoreError::BatchTooLarge {
            batch: opts.batch_size * opts.rounds,
            available: candidates.len(),
        }));
    }
    let nc = candidates.len();
    let total = nc + targets.len();
    if total > opts.max_points {
        return Err(Error::Argument(format!(
            "{total} embeddings exceed the limit of {} for a dense covariance",
            opts.max_points
        )));
    }
    let domain = joint_domain(candidates, targets)?;
    let target_idx: Vec<usize> = (nc..total).collect();
    let mut pool: Vec<usize> = (0..nc).collect();
    let mut rounds = Vec::with_capacity(opts.rounds);
    match opts.selector {
        Selector::Cosine => {
            let scores = cosine_similarity_scores(&domain, &target_idx, &pool)?;
            let mut order: Vec<usize> = (0..nc).collect();
            order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
            for (n, chunk) in order.chunks(opts.batch_size).take(opts.rounds).enumerate() {
                rounds.push(RetrievalRound {
                    round: n + 1,
                    indices: chunk.to_vec(),
                    scores: chunk.iter().map(|&i| scores[i]).collect(),
                });
            }
        }
        Selector::Rule(rule) => {
            let noise = NoiseModel::homoscedastic(total, opts.noise_variance)?;
            let mut belief = GaussianBelief::prior(&domain, &Kernel::embedding(None), |_| 0.0)?;
            for n in 1..=opts.rounds {
                let rule = match rule {
                    DecisionRule::Random { .. } => DecisionRule::Random {
                        seed: derive_seed(opts.seed, RANDOM_STREAM, n as u64),
                    },
                    other => other,
                };
                let req = BatchRequest {
                    rule,
                    batch_size: opts.batch_size,
                    samples: pool.clone(),
                    targets: target_idx.clone(),
                    mode: opts.mode,
                };
                let sel = select_batch(&belief, &req, &noise)?;
                for &i in &sel.indices {
                    belief.rank_one_update(i, noise.variance(i), None)?;
                }
                pool.retain(|i| !sel.indices.contains(i));
                rounds.push(RetrievalRound {
                    round: n,
                    indices: sel.indices,
                    scores: sel.scores,
                });
            }
        }
    }
    Ok(rounds)
}

/// One row per pick: round, position within the batch, candidate index and
/// its score when picked.
pub fn selection_table(selector: Selector, rounds: &[RetrievalRound]) -> Table {
    let mut t = Table::new(&["round", "position", "rule", "index", "score"]);
    for r in rounds {
        for (pos, (i, s)) in r.indices.iter().zip(&r.scores).enumerate() {
            t.row(&[
                r.round.to_string(),
                pos.to_string(),
                selector.name().to_string(),
                i.to_string(),
                float(*s),
            ]);
        }
    }
    t
}
