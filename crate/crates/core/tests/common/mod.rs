//! Shared checks for the integration and acceptance targets. Each check
//! returns a [`Check`] rather than panicking so the acceptance runner can
//! print every line before deciding.
#![allow(dead_code)]

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsie::aggregate::{aggregate, build_aggregate, retrieve_topn};
use dsie::config::TrainConfig;
use dsie::dataset::TrainingSample;
use dsie::encoder::{attentive_readout, build_encoder, embed_sequence, residual_stack};
use dsie::eval::metrics_for_user;
use dsie::exec::Execution;
use dsie::graph::{Graph, Var};
use dsie::interest::{build_extraction, build_orthogonality, extract_interests, orthogonality_regularizer};
use dsie::losses::{
    bpr_contrastive_loss, build_bpr, build_sampled_softmax, full_softmax_log_prob, loss_and_grads, plan_batch,
    planned_loss, sampled_softmax_with,
};
use dsie::params::{Dims, Grads, ModelParams, Param};

#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check {
            passed,
            detail: detail.into(),
        }
    }

    pub fn all(parts: Vec<Check>) -> Check {
        let passed = parts.iter().all(|c| c.passed);
        let detail = parts
            .iter()
            .map(|c| format!("{}{}", if c.passed { "" } else { "FAILED " }, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Check { passed, detail }
    }
}

pub fn random_params(dims: Dims, seed: u64, stretch: f64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::new(dims, &mut rng).unwrap();
    // perturb gains and biases off their init so every path is exercised
    for param in ModelParams::layout(&dims) {
        p.get_mut(param)
            .mapv_inplace(|v| v * stretch + rng.random_range(-0.1..0.1));
    }
    p
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// finite differences

/// Relative error `‖num − ana‖ / max(‖num‖, ‖ana‖)` per tensor; tensors with
/// both norms below `1e-9` report their absolute difference.
pub fn gradient_errors(params: &ModelParams, f: impl Fn(&ModelParams) -> f64, grads: &Grads) -> Vec<(String, f64)> {
    const H: f64 = 1e-6;
    let mut work = params.clone();
    let dims = *params.dims();
    ModelParams::layout(&dims)
        .map(|param| {
            let analytic = grads.get(params, param);
            let mut numeric = Array2::<f64>::zeros(analytic.dim());
            let n = numeric.len();
            for i in 0..n {
                let orig = work.get(param).as_slice().unwrap()[i];
                work.get_mut(param).as_slice_mut().unwrap()[i] = orig + H;
                let up = f(&work);
                work.get_mut(param).as_slice_mut().unwrap()[i] = orig - H;
                let down = f(&work);
                work.get_mut(param).as_slice_mut().unwrap()[i] = orig;
                numeric.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * H);
            }
            let diff = (&numeric - &analytic).mapv(|v| v * v).sum().sqrt();
            let scale = numeric
                .mapv(|v| v * v)
                .sum()
                .sqrt()
                .max(analytic.mapv(|v| v * v).sum().sqrt());
            let err = if scale < 1e-9 { diff } else { diff / scale };
            (param.name(), err)
        })
        .collect()
}

pub fn gradient_check(label: &str, errors: &[(String, f64)], tol: f64) -> Check {
    let worst = errors
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |w, e| if e.1 > w.1 { e } else { w });
    Check::new(
        errors.iter().all(|(_, e)| *e < tol),
        format!("{label}: {} tensors, worst {} {:.2e}", errors.len(), worst.0, worst.1),
    )
}

pub const GRAD_DIMS: Dims = Dims {
    items: 20,
    dim: 8,
    layers: 2,
    interests: 3,
};

pub fn grad_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        max_len: 5,
        layers: 2,
        interests: 3,
        negatives: 4,
        ..TrainConfig::default()
    }
}

const PREFIX: [usize; 5] = [0, 3, 7, 7, 12];
const MASK: [bool; 5] = [false, true, true, true, true];

/// Gradient of `Σ (node ⊙ R)` for a component built by `build`, checked
/// against finite differences.
fn projected_check(label: &str, params: &ModelParams, seed: u64, build: impl Fn(&mut Graph) -> Var) -> Check {
    let shape = {
        let mut g = Graph::new(params);
        let v = build(&mut g);
        g.shape(v)
    };
    let r = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), shape.0, shape.1);
    let eval = |p: &ModelParams| -> (f64, Option<Grads>) {
        let mut g = Graph::new(p);
        let v = build(&mut g);
        let rc = g.constant(r.clone());
        let m = g.mul(v, rc);
        let s = g.sum(m);
        (g.scalar(s), Some(g.backward(s).params))
    };
    let grads = eval(params).1.unwrap();
    let errors = gradient_errors(params, |p| eval(p).0, &grads);
    gradient_check(label, &errors, 1e-4)
}

pub fn gradient_suite() -> Vec<Check> {
    let params = random_params(GRAD_DIMS, 11, 1.5);
    let cfg = grad_config();
    let mut out = Vec::new();

    out.push(projected_check("encoder", &params, 1, |g| {
        build_encoder(g, &PREFIX, &MASK).unwrap().preference
    }));
    out.push(projected_check("interest extraction", &params, 2, |g| {
        let enc = build_encoder(g, &PREFIX, &MASK).unwrap();
        build_extraction(g, enc.embedded, Some(enc.preference), &MASK).interests
    }));
    out.push(projected_check("aggregation", &params, 3, |g| {
        let enc = build_encoder(g, &PREFIX, &MASK).unwrap();
        let f = build_extraction(g, enc.embedded, Some(enc.preference), &MASK).interests;
        build_aggregate(g, f, enc.preference, cfg.tau).1
    }));
    out.push(projected_check("sampled softmax", &params, 4, |g| {
        let enc = build_encoder(g, &PREFIX, &MASK).unwrap();
        let f = build_extraction(g, enc.embedded, Some(enc.preference), &MASK).interests;
        let current = build_aggregate(g, f, enc.preference, cfg.tau).1;
        build_sampled_softmax(g, current, 5, &[1, 9, 14, 19])
    }));
    out.push(projected_check("bpr contrastive", &params, 5, |g| {
        let o = build_encoder(g, &[3, 7, 7, 12], &[true; 4]).unwrap().preference;
        let s = build_encoder(g, &[7, 12, 3, 7], &[true; 4]).unwrap().preference;
        let n = build_encoder(g, &[2, 4, 18], &[true; 3]).unwrap().preference;
        build_bpr(g, o, s, n)
    }));
    out.push(projected_check("orthogonality", &params, 6, build_orthogonality));

    for variant in ["full", "no_gs"] {
        let cfg = dsie::config::ablation_variant(&cfg, variant).unwrap();
        let batch = vec![
            sample(&[0, 3, 7, 7, 12], &MASK, 5),
            sample(&[1, 2, 4, 6, 8], &[true; 5], 9),
            sample(&[0, 0, 0, 11, 19], &[false, false, false, true, true], 13),
        ];
        let plans = plan_batch(&batch, GRAD_DIMS.items, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let (_, grads) = loss_and_grads(&params, &plans, &cfg, Execution::Sequential).unwrap();
        let errors = gradient_errors(
            &params,
            |p| planned_loss(p, &plans, &cfg, Execution::Sequential).unwrap().total,
            &grads,
        );
        out.push(gradient_check(&format!("total objective ({variant})"), &errors, 1e-4));
    }
    out
}

pub fn sample(prefix: &[usize], mask: &[bool], target: usize) -> TrainingSample {
    TrainingSample {
        prefix: prefix.to_vec(),
        mask: mask.to_vec(),
        target,
    }
}

// ---------------------------------------------------------------------------
// normalisation

fn sums_to_one(values: impl IntoIterator<Item = f64>, worst: &mut f64) {
    let s: f64 = values.into_iter().sum();
    *worst = worst.max((s - 1.0).abs());
}

/// Largest deviation from 1 over every softmax-derived distribution, across
/// `configs` random model and sequence shapes.
pub fn normalization_suite(configs: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut distributions = 0;
    for c in 0..configs {
        let dims = Dims {
            items: rng.random_range(2..40),
            dim: rng.random_range(1..12),
            layers: rng.random_range(1..4),
            interests: rng.random_range(1..6),
        };
        let stretch = rng.random_range(0.2..4.0);
        let params = random_params(dims, seed ^ (c as u64 + 1), stretch);
        let len = rng.random_range(1..10);
        let prefix: Vec<usize> = (0..len).map(|_| rng.random_range(0..dims.items)).collect();
        let mut mask: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
        let pick = rng.random_range(0..len);
        mask[pick] = true;
        let tau = [0.01, 0.1, 1.0, 10.0][rng.random_range(0..4)];

        let emb = embed_sequence(&params, &prefix, &mask).unwrap();
        let hidden = residual_stack(&params, &emb);
        let readout = attentive_readout(&params, &hidden, &emb).unwrap();
        let real = |row: ndarray::ArrayView1<f64>| -> Vec<f64> {
            row.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect()
        };
        sums_to_one(real(readout.weights.view()), &mut worst);
        distributions += 1;

        let local = extract_interests(&params, &emb, Some(&readout.preference.0));
        for (l, &m) in mask.iter().enumerate() {
            if m {
                sums_to_one(local.assignment.column(l).iter().copied(), &mut worst);
                distributions += 1;
            }
        }
        for row in local.position.axis_iter(Axis(0)) {
            sums_to_one(real(row), &mut worst);
            distributions += 1;
        }
        let agg = aggregate(&local.interests, &readout.preference.0, tau).unwrap();
        sums_to_one(agg.alpha.iter().copied(), &mut worst);
        let full = full_softmax_log_prob(&agg.current, &params);
        sums_to_one(full.iter().map(|l| l.exp()), &mut worst);
        distributions += 2;
    }
    (worst, distributions)
}

// ---------------------------------------------------------------------------
// oracles

/// Sampled softmax with every non-target as a negative against the exact
/// cross-entropy, on random 6-item catalogs.
pub fn sampled_softmax_full_negatives(trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let dims = Dims {
            items: 6,
            dim: 4,
            layers: 1,
            interests: 2,
        };
        let params = random_params(dims, 100 + t as u64, 3.0);
        let current = Array1::from_shape_fn(4, |_| rng.random_range(-2.0..2.0));
        let target = rng.random_range(0..6);
        let negatives: Vec<usize> = (0..6).filter(|&i| i != target).collect();
        let sampled = sampled_softmax_with(&current, target, &negatives, &params);
        // exact cross-entropy computed from scratch
        let logits: Vec<f64> = (0..6).map(|i| params.item_embeddings().row(i).dot(&current)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let exact = -(logits[target].exp() / z).ln();
        worst = worst.max((sampled - exact).abs());
        worst = worst.max((sampled + full_softmax_log_prob(&current, &params)[target]).abs());
    }
    worst
}

/// Brute-force metric definitions, written independently of the library:
/// a relevance vector by rank, then DCG over it and IDCG over the ideal
/// ordering.
pub fn metric_oracle(ranked: &[usize], targets: &HashSet<usize>, n: usize) -> (f64, f64, f64) {
    let list: Vec<usize> = ranked.iter().take(n).copied().collect();
    let rel: Vec<f64> = list
        .iter()
        .map(|i| if targets.contains(i) { 1.0 } else { 0.0 })
        .collect();
    let hits = rel.iter().filter(|&&r| r == 1.0).count();
    let mut dcg = 0.0;
    for (r, &g) in rel.iter().enumerate() {
        if g == 1.0 {
            dcg += g / (r as f64 + 2.0).log2();
        }
    }
    let ideal_hits = targets.len().min(n);
    let mut idcg = 0.0;
    for r in 0..ideal_hits {
        idcg += 1.0 / (r as f64 + 2.0).log2();
    }
    let recall = hits as f64 / targets.len() as f64;
    let hr = if hits == 0 { 0.0 } else { 1.0 };
    (recall, if idcg == 0.0 { 0.0 } else { dcg / idcg }, hr)
}

pub fn metrics_match_oracle(trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mismatches = 0;
    for _ in 0..trials {
        let items = rng.random_range(2..60);
        let n = rng.random_range(1..=items);
        let mut pool: Vec<usize> = (0..items).collect();
        rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
        let ranked: Vec<usize> = pool[..rng.random_range(0..=n)].to_vec();
        let t = rng.random_range(1..=items);
        rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
        let targets: HashSet<usize> = pool[..t].iter().copied().collect();
        let m = metrics_for_user(&ranked, &targets, n);
        if (m.recall, m.ndcg, m.hr) != metric_oracle(&ranked, &targets, n) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Full sort by (score desc, index asc), excluded items dropped.
pub fn topn_oracle(scores: &[f64], n: usize, exclude: &HashSet<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.into_iter().filter(|(i, _)| !exclude.contains(i)).take(n).collect()
}

pub fn retrieval_matches_oracle(trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut mismatches = 0;
    for t in 0..trials {
        let dims = Dims {
            items: rng.random_range(1..120),
            dim: rng.random_range(1..6),
            layers: 1,
            interests: 1,
        };
        let mut params = random_params(dims, 200 + t as u64, 1.0);
        if t % 4 == 0 {
            // coarse values force score ties
            params
                .get_mut(Param::ItemEmbeddings)
                .mapv_inplace(|v| (v * 2.0).round());
        }
        let mut user = Array1::from_shape_fn(dims.dim, |_| rng.random_range(-1.0f64..1.0));
        if t % 4 == 0 {
            user.mapv_inplace(f64::round);
        }
        let exclude: HashSet<usize> = (0..dims.items).filter(|_| rng.random_bool(0.2)).collect();
        let n = rng.random_range(1..=dims.items + 3);
        let got = retrieve_topn(user.view(), &params, n, &exclude).unwrap();
        let scores: Vec<f64> = params.item_embeddings().dot(&user).to_vec();
        let want = topn_oracle(&scores, n, &exclude);
        if got.items != want || got.short != (want.len() < n) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Regularizer with prototypes fixed to the 2×2 identity.
pub fn orthogonality_worked_example() -> f64 {
    let dims = Dims {
        items: 3,
        dim: 2,
        layers: 1,
        interests: 2,
    };
    let mut params = random_params(dims, 0, 1.0);
    params.get_mut(Param::Prototypes).assign(&Array2::eye(2));
    orthogonality_regularizer(&params)
}

// ---------------------------------------------------------------------------
// analytic spot values

pub fn bpr_zero_margin() -> f64 {
    let o = Array1::from(vec![1.0, 2.0, 0.0]);
    let s = Array1::from(vec![1.0, 0.0, 5.0]);
    // a different vector with the same inner product against o
    let n = Array1::from(vec![-1.0, 1.0, 7.0]);
    bpr_contrastive_loss(&[o], &[s], &[n])
}

pub fn uniform_ten_way() -> f64 {
    let dims = Dims {
        items: 12,
        dim: 5,
        layers: 1,
        interests: 2,
    };
    let params = random_params(dims, 9, 1.0);
    let zero = Array1::zeros(5);
    sampled_softmax_with(&zero, 3, &[0, 1, 2, 4, 5, 6, 7, 8, 9], &params)
}

/// `(max |current − f¹|, alpha)` for random single-interest inputs.
pub fn single_interest_aggregation() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    let mut alpha = 1.0;
    for _ in 0..50 {
        let f = random_matrix(&mut rng, 1, 7) * 10.0;
        let g = Array1::from_shape_fn(7, |_| rng.random_range(-5.0..5.0));
        let out = aggregate(&f, &g, 0.1).unwrap();
        worst = worst.max(
            (&out.current - &f.row(0))
                .mapv(f64::abs)
                .fold(0.0, |a: f64, &b| a.max(b)),
        );
        alpha = out.alpha[0];
    }
    (worst, alpha)
}
