//! Batch selection.
//!
//! BaCE picks greedily, conditioning the covariance on each earlier pick
//! before scoring the next one (no labels exist yet, so only locations are
//! conditioned on). Top-b takes the `b` best scores of the unconditioned
//! belief and serves as the non-diverse baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{self, argmax_lowest_index, DecisionRule, ZERO_VARIANCE};
use crate::error::{Error, Result};
use crate::gp::{check_index, FiniteDomain, GaussianBelief, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Bace,
    TopB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRequest {
    pub rule: DecisionRule,
    pub batch_size: usize,
    pub samples: Vec<usize>,
    pub targets: Vec<usize>,
    pub mode: BatchMode,
}

/// Selected indices in pick order, with the score each had when picked.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

fn distinct(samples: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    samples.iter().copied().filter(|i| seen.insert(*i)).collect()
}

pub fn select_batch(belief: &GaussianBelief, req: &BatchRequest, noise: &NoiseModel) -> Result<BatchSelection> {
    let candidates = distinct(&req.samples);
    if candidates.is_empty() {
        return Err(Error::Empty("sample space"));
    }
    if req.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if req.batch_size > candidates.len() {
        return Err(Error::BatchTooLarge {
            batch: req.batch_size,
            available: candidates.len(),
        });
    }
    for &i in &candidates {
        check_index(i, belief.len())?;
    }
    if let DecisionRule::Random { seed } = req.rule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, candidates.len(), req.batch_size);
        return Ok(BatchSelection {
            indices: picks.iter().map(|p| candidates[p]).collect(),
            scores: vec![0.0; req.batch_size],
        });
    }
    match req.mode {
        BatchMode::TopB => top_b(belief, req, &candidates, noise),
        BatchMode::Bace => bace(belief, req, candidates, noise),
    }
}

fn top_b(
    belief: &GaussianBelief,
    req: &BatchRequest,
    candidates: &[usize],
    noise: &NoiseModel,
) -> Result<BatchSelection> {
    let scores = acquisition::score_candidates(req.rule, belief, candidates, &req.targets, noise)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(candidates[i].cmp(&candidates[j]))
    });
    order.truncate(req.batch_size);
    Ok(BatchSelection {
        indices: order.iter().map(|&p| candidates[p]).collect(),
        scores: order.iter().map(|&p| scores[p]).collect(),
    })
}

fn bace(
    belief: &GaussianBelief,
    req: &BatchRequest,
    mut remaining: Vec<usize>,
    noise: &NoiseModel,
) -> Result<BatchSelection> {
    let mut current = belief.clone();
    let mut out = BatchSelection {
        indices: Vec::with_capacity(req.batch_size),
        scores: Vec::with_capacity(req.batch_size),
    };
    for _ in 0..req.batch_size {
        // Candidates whose variance has collapsed make the update degenerate.
        let live: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| current.variance(i) >= ZERO_VARIANCE)
            .collect();
        let pool = if live.is_empty() { remaining.clone() } else { live };
        let scores = acquisition::score_candidates(req.rule, &current, &pool, &req.targets, noise)?;
        let pos = argmax_lowest_index(&pool, &scores).expect("non-empty pool");
        let pick = pool[pos];
        out.indices.push(pick);
        out.scores.push(scores[pos]);
        remaining.retain(|&i| i != pick);
        current.rank_one_update(pick, noise.variance(pick), None)?;
    }
    Ok(out)
}

/// Mean cosine similarity between each candidate embedding and the targets.
pub fn cosine_similarity_scores(embeddings: &FiniteDomain, targets: &[usize], samples: &[usize]) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::Empty("target set"));
    }
    let normalized = |i: usize| -> Result<Vec<f64>> {
        check_index(i, embeddings.len())?;
        let v = embeddings.point(i);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        Ok(v.into_iter().map(|x| x / n).collect())
    };
    let t: Vec<Vec<f64>> = targets.iter().map(|&i| normalized(i)).collect::<Result<_>>()?;
    samples
        .iter()
        .map(|&i| {
            let c = normalized(i)?;
            let total: f64 = t
                .iter()
                .map(|tv| tv.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            Ok(total / t.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::select_next;
    use crate::kernels::Kernel;

    fn duplicated_instance() -> (GaussianBelief, NoiseModel) {
        // Two copies of x=0, one distinct point at x=1.1, target at x=0.5.
        let domain = FiniteDomain::from_points(&[vec![0.0], vec![0.0], vec![1.1], vec![0.5]]).unwrap();
        let b = GaussianBelief::prior(&domain, &Kernel::gaussian(1.0), |_| 0.0).unwrap();
        (b, NoiseModel::homoscedastic(4, 0.01).unwrap())
    }

    fn request(mode: BatchMode, b: usize) -> BatchRequest {
        BatchRequest {
            rule: DecisionRule::ITL,
            batch_size: b,
            samples: vec![0, 1, 2],
            targets: vec![3],
            mode,
        }
    }

    #[test]
    fn duplicates_split_by_bace_not_by_top_b() {
        let (b, noise) = duplicated_instance();
        let bace = select_batch(&b, &request(BatchMode::Bace, 2), &noise).unwrap();
        assert_eq!(bace.indices, vec![0, 2]);
        let top = select_batch(&b, &request(BatchMode::TopB, 2), &noise).unwrap();
        assert_eq!(top.indices, vec![0, 1]);
    }

    #[test]
    fn second_pick_score_matches_conditional_information() {
        let (b, noise) = duplicated_instance();
        let bace = select_batch(&b, &request(BatchMode::Bace, 2), &noise).unwrap();
        let joint = b.mutual_information(&[3], &[0, 2], &noise).unwrap();
        let first = b.mutual_information(&[3], &[0], &noise).unwrap();
        assert!((bace.scores[0] - first).abs() < 1e-10);
        assert!((bace.scores[1] - (joint - first)).abs() < 1e-10);
    }

    #[test]
    fn batch_of_one_matches_select_next() {
        let (b, noise) = duplicated_instance();
        for mode in [BatchMode::Bace, BatchMode::TopB] {
            for rule in [DecisionRule::ITL, DecisionRule::Vtl, DecisionRule::Ctl, DecisionRule::UncertaintySampling] {
                let mut req = request(mode, 1);
                req.rule = rule;
                let sel = select_batch(&b, &req, &noise).unwrap();
                let next = select_next(rule, &b, &[0, 1, 2], &[3], &noise).unwrap();
                assert_eq!(sel.indices, vec![next.chosen]);
            }
        }
    }

    #[test]
    fn oversized_batch_errors() {
        let (b, noise) = duplicated_instance();
        assert!(matches!(
            select_batch(&b, &request(BatchMode::Bace, 4), &noise),
            Err(Error::BatchTooLarge { batch: 4, available: 3 })
        ));
    }

    #[test]
    fn random_batch_is_distinct_and_seeded() {
        let (b, noise) = duplicated_instance();
        let mut req = request(BatchMode::Bace, 3);
        req.rule = DecisionRule::Random { seed: 3 };
        let x = select_batch(&b, &req, &noise).unwrap();
        let y = select_batch(&b, &req, &noise).unwrap();
        assert_eq!(x, y);
        let mut sorted = x.indices.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn cosine_scores() {
        let d = FiniteDomain::from_points(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = cosine_similarity_scores(&d, &[0], &[0, 1, 2]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - 1.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity_scores(&d, &[0], &[3]), Err(Error::ZeroNorm(3))));
    }
}
