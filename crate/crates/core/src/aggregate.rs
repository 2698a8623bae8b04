//! Interest fusion under a preference-guided temperature softmax, item
//! scoring and top-N retrieval.

use std::cmp::Ordering;
use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{DsieError, Result};
use crate::graph::{Graph, Var};
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutput {
    pub alpha: Array1<f64>,
    pub current: Array1<f64>,
}

/// Returns `(alpha 1×K, current interest 1×d)`.
pub fn build_aggregate(g: &mut Graph, interests: Var, preference: Var, tau: f64) -> (Var, Var) {
    let k = g.shape(interests).0;
    let sims = g.matmul_t(preference, interests);
    let sims = g.scale(sims, 1.0 / tau);
    let alpha = g.softmax_rows(sims, &vec![true; k]);
    let current = g.matmul(alpha, interests);
    (alpha, current)
}

pub fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DsieError::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

pub fn aggregate(interests: &Array2<f64>, preference: &Array1<f64>, tau: f64) -> Result<AggregationOutput> {
    check_tau(tau)?;
    let sims = interests.dot(preference) / tau;
    let max = sims.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = sims.mapv(|v| (v - max).exp());
    let alpha = &exp / exp.sum();
    let current = alpha.dot(interests);
    Ok(AggregationOutput { alpha, current })
}

/// Inner products `⟨user, e_x⟩` for the given candidates.
pub fn score_items(user: ArrayView1<f64>, params: &ModelParams, candidates: &[usize]) -> Result<Vec<f64>> {
    let emb = params.item_embeddings();
    candidates
        .iter()
        .map(|&c| {
            if c >= emb.nrows() {
                return Err(DsieError::IndexOutOfRange {
                    index: c,
                    items: emb.nrows(),
                });
            }
            Ok(emb.row(c).dot(&user))
        })
        .collect()
}

/// Scores for the whole catalog.
pub fn score_all(user: ArrayView1<f64>, params: &ModelParams) -> Array1<f64> {
    params.item_embeddings().dot(&user)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// `(item, score)` in descending score, ascending index on ties.
    pub items: Vec<(usize, f64)>,
    /// Fewer than N candidates were available.
    pub short: bool,
}

impl Retrieval {
    pub fn item_indices(&self) -> Vec<usize> {
        self.items.iter().map(|&(i, _)| i).collect()
    }
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Top-N over precomputed scores, skipping `exclude`.
pub fn top_n(scores: &[f64], n: usize, exclude: &HashSet<usize>) -> Result<Retrieval> {
    if n == 0 {
        return Err(DsieError::invalid("N must be at least 1"));
    }
    let mut pool: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(i, &s)| (i, s))
        .collect();
    let short = pool.len() < n;
    if pool.len() > n {
        pool.select_nth_unstable_by(n - 1, rank_order);
        pool.truncate(n);
    }
    pool.sort_by(rank_order);
    Ok(Retrieval { items: pool, short })
}

pub fn retrieve_topn(
    user: ArrayView1<f64>,
    params: &ModelParams,
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<Retrieval> {
    let scores = score_all(user, params);
    top_n(scores.as_slice().expect("contiguous scores"), n, exclude)
}

/// Retrieves N items per interest, then reranks the union by each item's
/// best score across interests and keeps the top N.
pub fn retrieve_per_interest(
    interests: &Array2<f64>,
    params: &ModelParams,
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<Retrieval> {
    let mut best: Vec<Option<f64>> = vec![None; params.dims().items];
    let mut available = 0;
    for f in interests.axis_iter(Axis(0)) {
        let r = retrieve_topn(f, params, n, exclude)?;
        available = available.max(r.items.len());
        for (i, s) in r.items {
            let slot = &mut best[i];
            *slot = Some(slot.map_or(s, |b: f64| b.max(s)));
        }
    }
    let mut pool: Vec<(usize, f64)> = best
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    pool.sort_by(rank_order);
    pool.truncate(n);
    Ok(Retrieval {
        short: pool.len() < n,
        items: pool,
    })
}
