//! Adam training loop with validation-driven early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::Corpus;
use crate::dataset::{expand_training_samples, SplitName, TrainingSample};
use crate::error::{DsieError, Result};
use crate::eval::{evaluate_split, DsieRecommender, Mode};
use crate::exec::Execution;
use crate::losses::{loss_and_grads, plan_batch, LossBreakdown};
use crate::params::{Adam, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub valid_recall: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation recall.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub log: Vec<EpochLog>,
}

pub fn log_tsv(log: &[EpochLog], topn: usize) -> String {
    let mut out = format!("epoch\tmain\taux\tcontrastive\ttotal\tvalid_recall@{topn}\n");
    for e in log {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.epoch, e.loss.main, e.loss.aux, e.loss.contrastive, e.loss.total, e.valid_recall
        )
        .unwrap();
    }
    out
}

/// Training samples of the train users, keeping only each user's most
/// recent `max_samples_per_user` when set.
pub fn training_samples(corpus: &Corpus, config: &TrainConfig) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for &u in &corpus.split.train {
        let mut s = expand_training_samples(&corpus.sequences[u], config.max_len);
        if let Some(m) = config.max_samples_per_user {
            s.drain(..s.len().saturating_sub(m));
        }
        out.extend(s);
    }
    out
}

/// Batch boundaries over `len` samples. A trailing single sample joins the
/// previous batch so every batch has an in-batch partner.
pub fn batch_ranges(len: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges: Vec<_> = (0..len)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(len))
        .collect();
    if ranges.len() > 1 && ranges.last().is_some_and(|r| r.len() == 1) {
        let tail = ranges.pop().unwrap();
        ranges.last_mut().unwrap().end = tail.end;
    }
    ranges
}

pub fn train(
    corpus: &Corpus,
    config: &TrainConfig,
    exec: Execution,
    mut observer: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = training_samples(corpus, config);
    if samples.is_empty() {
        return Err(DsieError::invalid("no training samples"));
    }
    let items = corpus.catalog.item_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::new(config.dims(items), &mut rng)?;
    let mut adam = Adam::new(&params, config.learning_rate);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        for range in batch_ranges(order.len(), config.batch_size) {
            let batch: Vec<TrainingSample> = order[range].iter().map(|&i| samples[i].clone()).collect();
            let plans = plan_batch(&batch, items, config, &mut rng)?;
            let (loss, grads) = loss_and_grads(&params, &plans, config, exec)?;
            if let Some((term, value)) = loss.non_finite_term() {
                return Err(DsieError::Diverged { epoch, term, value });
            }
            if !grads.is_finite() {
                return Err(DsieError::Diverged {
                    epoch,
                    term: "gradient",
                    value: f64::NAN,
                });
            }
            adam.step(&mut params, &grads);
            let w = batch.len() as f64;
            sums[0] += w * loss.main;
            sums[1] += w * loss.aux;
            sums[2] += w * loss.contrastive;
        }
        let n = samples.len() as f64;
        let loss = LossBreakdown::new(
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            config.alpha_reg,
            config.effective_beta(),
        );

        let rec = DsieRecommender {
            params: &params,
            config,
        };
        let valid_recall =
            evaluate_split(&rec, corpus, SplitName::Valid, config.valid_topn, Mode::Standard, exec)?.recall;
        let entry = EpochLog {
            epoch,
            loss,
            valid_recall,
        };
        observer(&entry);
        log.push(entry);

        if valid_recall > best.2 {
            best = (params.clone(), epoch, valid_recall);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        last: params,
        log,
    })
}
