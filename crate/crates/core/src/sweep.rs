//! One-hyperparameter sweeps averaged over training seeds.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::TrainConfig;
use crate::corpus::Corpus;
use crate::dataset::SplitName;
use crate::error::{DsieError, Result};
use crate::eval::{evaluate_split, DsieRecommender, EvalReport, Mode, REPORT_HEADER};
use crate::exec::Execution;
use crate::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Layers,
    Interests,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Layers => "layers",
            SweepParam::Interests => "interests",
        }
    }
}

impl FromStr for SweepParam {
    type Err = DsieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "layers" | "S" => Ok(SweepParam::Layers),
            "interests" | "K" => Ok(SweepParam::Interests),
            other => Err(DsieError::invalid(format!(
                "cannot sweep {other:?} (tau, layers, interests)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: String,
    /// Per-seed reports of the best checkpoint.
    pub runs: Vec<EvalReport>,
    /// Metric means over seeds; counts are taken from the first run.
    pub mean: EvalReport,
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = format!("param\tvalue\tseeds\t{REPORT_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.param.key(),
            r.value,
            r.runs.len(),
            r.mean.tsv_row()
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    /// Split the best checkpoint of each run is scored on.
    pub split: SplitName,
    pub topn: usize,
}

/// Trains one model per (value, seed) and evaluates its best checkpoint.
pub fn sweep(corpus: &Corpus, base: &TrainConfig, spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepRow>> {
    let SweepSpec {
        param,
        values,
        seeds,
        split,
        topn,
    } = spec;
    let (param, split, topn) = (*param, *split, *topn);
    if values.is_empty() || seeds.is_empty() {
        return Err(DsieError::invalid("sweep needs at least one value and one seed"));
    }
    values
        .iter()
        .map(|value| {
            let mut cfg = base.clone();
            cfg.set(param.key(), value)?;
            cfg.validate()?;
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let cfg = TrainConfig { seed, ..cfg.clone() };
                    let out = train(corpus, &cfg, exec, |_| {})?;
                    let rec = DsieRecommender {
                        params: &out.best,
                        config: &cfg,
                    };
                    evaluate_split(&rec, corpus, split, topn, Mode::Standard, exec)
                })
                .collect::<Result<Vec<_>>>()?;
            let k = runs.len() as f64;
            let mut mean = runs[0].clone();
            mean.recall = runs.iter().map(|r| r.recall).sum::<f64>() / k;
            mean.ndcg = runs.iter().map(|r| r.ndcg).sum::<f64>() / k;
            mean.hr = runs.iter().map(|r| r.hr).sum::<f64>() / k;
            Ok(SweepRow {
                param,
                value: value.clone(),
                runs,
                mean,
            })
        })
        .collect()
}
