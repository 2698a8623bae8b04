//! The three-term training objective and its batch gradient.
//!
//! A batch is first turned into [`SamplePlan`]s, which fix every random
//! choice (negatives, shuffles, in-batch partners). The loss is then a
//! deterministic function of the parameters, which is what gradient checks
//! and reproducible training both rely on.

use ndarray::Array1;
use rand::seq::index;
use rand::Rng;

use crate::config::TrainConfig;
use crate::dataset::{in_batch_negative_indices, shuffle_augment_with, TrainingSample};
use crate::encoder::build_encoder;
use crate::error::{DsieError, Result};
use crate::exec::{self, Execution};
use crate::graph::{softplus, Graph, Var};
use crate::interest::build_orthogonality;
use crate::model::build_forward;
use crate::params::{Grads, ModelParams, Param};

/// Samples per parallel work unit. Fixed so that sums do not depend on the
/// thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub main: f64,
    pub aux: f64,
    pub contrastive: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(main: f64, aux: f64, contrastive: f64, alpha_reg: f64, beta_cl: f64) -> Self {
        LossBreakdown {
            main,
            aux,
            contrastive,
            total: main + alpha_reg * aux + beta_cl * contrastive,
        }
    }

    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<(&'static str, f64)> {
        [
            ("main", self.main),
            ("aux", self.aux),
            ("contrastive", self.contrastive),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}

/// `n` distinct uniform items other than `target`.
pub fn draw_negatives<R: Rng + ?Sized>(rng: &mut R, items: usize, target: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(DsieError::invalid("need at least one negative"));
    }
    if items < n + 1 {
        return Err(DsieError::invalid(format!(
            "catalog of {items} items cannot supply {n} negatives besides the target"
        )));
    }
    Ok(index::sample(rng, items - 1, n)
        .into_iter()
        .map(|i| if i >= target { i + 1 } else { i })
        .collect())
}

/// `−log softmax` of the target against the given negatives; `current` is
/// `1×d`.
pub fn build_sampled_softmax(g: &mut Graph, current: Var, target: usize, negatives: &[usize]) -> Var {
    let mut rows = Vec::with_capacity(negatives.len() + 1);
    rows.push(Some(target));
    rows.extend(negatives.iter().map(|&n| Some(n)));
    let candidates = g.gather(Param::ItemEmbeddings, rows);
    let logits = g.matmul_t(current, candidates);
    g.cross_entropy_first(logits)
}

/// `−log σ(⟨o, s⟩ − ⟨o, n⟩)` for `1×d` vectors.
pub fn build_bpr(g: &mut Graph, orig: Var, positive: Var, negative: Var) -> Var {
    let pos = g.matmul_t(orig, positive);
    let neg = g.matmul_t(orig, negative);
    let margin = g.sub(pos, neg);
    g.neg_log_sigmoid(margin)
}

/// Sampled-softmax loss for one user vector with explicit negatives.
pub fn sampled_softmax_with(current: &Array1<f64>, target: usize, negatives: &[usize], params: &ModelParams) -> f64 {
    let emb = params.item_embeddings();
    let pos = emb.row(target).dot(current);
    let logits: Vec<f64> = std::iter::once(pos)
        .chain(negatives.iter().map(|&n| emb.row(n).dot(current)))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - pos
}

/// Batch-mean sampled-softmax loss, drawing fresh negatives from `rng`.
pub fn sampled_softmax_loss<R: Rng + ?Sized>(
    currents: &[Array1<f64>],
    targets: &[usize],
    params: &ModelParams,
    n_negatives: usize,
    rng: &mut R,
) -> Result<f64> {
    if currents.len() != targets.len() || currents.is_empty() {
        return Err(DsieError::invalid("need one target per user vector"));
    }
    let items = params.dims().items;
    let mut total = 0.0;
    for (r, &t) in currents.iter().zip(targets) {
        let negs = draw_negatives(rng, items, t, n_negatives)?;
        total += sampled_softmax_with(r, t, &negs, params);
    }
    Ok(total / currents.len() as f64)
}

/// Batch-mean BPR loss over preference triples.
pub fn bpr_contrastive_loss(orig: &[Array1<f64>], shuffled: &[Array1<f64>], negative: &[Array1<f64>]) -> f64 {
    assert!(orig.len() == shuffled.len() && orig.len() == negative.len());
    let total: f64 = orig
        .iter()
        .zip(shuffled)
        .zip(negative)
        .map(|((o, s), n)| softplus(-(o.dot(s) - o.dot(n))))
        .sum();
    total / orig.len() as f64
}

/// All random choices for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub items: Vec<usize>,
    pub target: usize,
    pub negatives: Vec<usize>,
    /// Shuffled copy of `items`; empty when the contrastive term is off.
    pub shuffled: Vec<usize>,
    /// Items of the in-batch partner; empty when the contrastive term is off.
    pub partner: Vec<usize>,
}

pub fn plan_batch<R: Rng + ?Sized>(
    batch: &[TrainingSample],
    items: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<SamplePlan>> {
    if batch.is_empty() {
        return Err(DsieError::invalid("empty batch"));
    }
    let contrastive = config.effective_beta() > 0.0;
    let partners = if contrastive {
        in_batch_negative_indices(batch.len())?
    } else {
        Vec::new()
    };
    batch
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let negatives = draw_negatives(rng, items, s.target, config.negatives)?;
            let (shuffled, partner) = if contrastive {
                let shuffled = crate::dataset::real_items(&shuffle_augment_with(&s.prefix, &s.mask, rng), &s.mask);
                (shuffled, batch[partners[j]].items())
            } else {
                (Vec::new(), Vec::new())
            };
            Ok(SamplePlan {
                items: s.items(),
                target: s.target,
                negatives,
                shuffled,
                partner,
            })
        })
        .collect()
}

/// Per-sample loss nodes.
pub struct SampleTerms {
    pub main: Var,
    pub contrastive: Option<Var>,
}

pub fn build_sample_terms(g: &mut Graph, plan: &SamplePlan, config: &TrainConfig) -> Result<SampleTerms> {
    let fwd = build_forward(g, &plan.items, config)?;
    let current = match fwd.current {
        Some(c) => c,
        None => {
            // without aggregation, train the interest closest to the target
            let f = g.value(fwd.interests);
            let target = g.params().item_embeddings().row(plan.target);
            let scores = f.dot(&target);
            let best = scores
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (k, &s)| if s > b.1 { (k, s) } else { b })
                .0;
            g.row(fwd.interests, best)
        }
    };
    let main = build_sampled_softmax(g, current, plan.target, &plan.negatives);
    let contrastive = match fwd.preference {
        Some(pref) if config.effective_beta() > 0.0 && !plan.partner.is_empty() => {
            let shuffled = build_encoder(g, &plan.shuffled, &vec![true; plan.shuffled.len()])?;
            let partner = build_encoder(g, &plan.partner, &vec![true; plan.partner.len()])?;
            Some(build_bpr(g, pref, shuffled.preference, partner.preference))
        }
        _ => None,
    };
    Ok(SampleTerms { main, contrastive })
}

struct ChunkResult {
    main: f64,
    contrastive: f64,
    grads: Option<Grads>,
}

fn run_chunk(
    params: &ModelParams,
    plans: &[SamplePlan],
    config: &TrainConfig,
    batch_len: usize,
    with_grads: bool,
) -> Result<ChunkResult> {
    let beta = config.effective_beta();
    let inv = 1.0 / batch_len as f64;
    let mut out = ChunkResult {
        main: 0.0,
        contrastive: 0.0,
        grads: with_grads.then(|| Grads::new(params.len())),
    };
    for plan in plans {
        let mut g = Graph::new(params);
        let terms = build_sample_terms(&mut g, plan, config)?;
        out.main += g.scalar(terms.main);
        let mut objective = g.scale(terms.main, inv);
        if let Some(cl) = terms.contrastive {
            out.contrastive += g.scalar(cl);
            let weighted = g.scale(cl, beta * inv);
            objective = g.add(objective, weighted);
        }
        if let Some(acc) = &mut out.grads {
            acc.merge(&g.backward(objective).params);
        }
    }
    Ok(out)
}

fn batch_pass(
    params: &ModelParams,
    plans: &[SamplePlan],
    config: &TrainConfig,
    exec: Execution,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<Grads>)> {
    if plans.is_empty() {
        return Err(DsieError::invalid("empty batch"));
    }
    let chunks = exec::map_chunks(exec, plans, CHUNK, |c| {
        run_chunk(params, c, config, plans.len(), with_grads)
    });
    let mut main = 0.0;
    let mut contrastive = 0.0;
    let mut grads = with_grads.then(|| Grads::new(params.len()));
    for c in chunks {
        let c = c?;
        main += c.main;
        contrastive += c.contrastive;
        if let (Some(acc), Some(g)) = (&mut grads, &c.grads) {
            acc.merge(g);
        }
    }
    let n = plans.len() as f64;

    let mut g = Graph::new(params);
    let aux_node = build_orthogonality(&mut g);
    let aux = g.scalar(aux_node);
    if let Some(acc) = &mut grads {
        if config.alpha_reg > 0.0 {
            let weighted = g.scale(aux_node, config.alpha_reg);
            acc.merge(&g.backward(weighted).params);
        }
    }
    let breakdown = LossBreakdown::new(
        main / n,
        aux,
        contrastive / n,
        config.alpha_reg,
        config.effective_beta(),
    );
    Ok((breakdown, grads))
}

/// Loss of a planned batch.
pub fn planned_loss(
    params: &ModelParams,
    plans: &[SamplePlan],
    config: &TrainConfig,
    exec: Execution,
) -> Result<LossBreakdown> {
    Ok(batch_pass(params, plans, config, exec, false)?.0)
}

/// Loss and parameter gradient of a planned batch.
pub fn loss_and_grads(
    params: &ModelParams,
    plans: &[SamplePlan],
    config: &TrainConfig,
    exec: Execution,
) -> Result<(LossBreakdown, Grads)> {
    let (loss, grads) = batch_pass(params, plans, config, exec, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Plans the batch from `rng` and evaluates the full objective.
pub fn total_loss<R: Rng + ?Sized>(
    batch: &[TrainingSample],
    params: &ModelParams,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let plans = plan_batch(batch, params.dims().items, config, rng)?;
    planned_loss(params, &plans, config, Execution::Sequential)
}

/// Full-catalog next-item log-likelihood for one user vector, i.e. the
/// quantity the sampled loss approximates.
pub fn full_softmax_log_prob(current: &Array1<f64>, params: &ModelParams) -> Array1<f64> {
    let logits: Array1<f64> = params.item_embeddings().dot(current);
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.mapv(|l| (l - max).exp()).sum().ln();
    logits - lse
}
