//! Holdout evaluation: metrics, novelty filtering, baselines and reports.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::corpus::Corpus;
use crate::dataset::{build_eval_samples, Catalog, EvalSample, SplitName};
use crate::error::{DsieError, Result};
use crate::exec::{self, Execution};
use crate::model;
use crate::params::ModelParams;

/// Fraction of each evaluation user's sequence held out as targets.
pub const HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Standard,
    /// Items sharing a category with the history are pushed behind novel ones.
    Novelty,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Novelty => "novelty",
        }
    }
}

impl FromStr for Mode {
    type Err = DsieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "novelty" => Ok(Mode::Novelty),
            other => Err(DsieError::invalid(format!(
                "unknown mode {other:?} (standard, novelty)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UserMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

/// Recall, NDCG and hit rate of one ranked list against a target set.
pub fn metrics_for_user(ranked: &[usize], targets: &HashSet<usize>, n: usize) -> UserMetrics {
    if targets.is_empty() {
        return UserMetrics::default();
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, item) in ranked.iter().take(n).enumerate() {
        if targets.contains(item) {
            hits += 1;
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..n.min(targets.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    UserMetrics {
        recall: hits as f64 / targets.len() as f64,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
        hr: if hits > 0 { 1.0 } else { 0.0 },
    }
}

fn shares_category(catalog: &Catalog, item: usize, categories: &HashSet<u32>) -> bool {
    catalog.categories_of(item).iter().any(|c| categories.contains(c))
}

/// Keeps novel items in rank order, then backfills with the best-ranked
/// filtered ones until the list has `n` items.
pub fn novelty_filter(
    ranked_extended: &[usize],
    history_categories: &HashSet<u32>,
    catalog: &Catalog,
    n: usize,
) -> Vec<usize> {
    let (novel, familiar): (Vec<usize>, Vec<usize>) = ranked_extended
        .iter()
        .partition(|&&i| !shares_category(catalog, i, history_categories));
    novel.into_iter().chain(familiar).take(n).collect()
}

/// Union of the categories of `items`.
pub fn history_categories(catalog: &Catalog, items: &[usize]) -> HashSet<u32> {
    items
        .iter()
        .flat_map(|&i| catalog.categories_of(i).iter().copied())
        .collect()
}

/// Widened pre-filter budget for novelty mode: enough to hold N novel items
/// after every familiar one is pushed back, and at least 4N.
pub fn novelty_budget(catalog: &Catalog, categories: &HashSet<u32>, exclude: &HashSet<usize>, n: usize) -> usize {
    let familiar = (0..catalog.item_count())
        .filter(|i| !exclude.contains(i) && shares_category(catalog, *i, categories))
        .count();
    (4 * n).max(n + familiar)
}

/// Anything that ranks the catalog for a user history.
pub trait Recommender: Sync {
    /// Longest history the recommender looks at.
    fn history_len(&self) -> usize {
        usize::MAX
    }

    fn recommend(&self, history: &[usize], n: usize, exclude: &HashSet<usize>) -> Result<Vec<usize>>;
}

pub struct DsieRecommender<'a> {
    pub params: &'a ModelParams,
    pub config: &'a TrainConfig,
}

impl Recommender for DsieRecommender<'_> {
    fn history_len(&self) -> usize {
        self.config.max_len
    }

    fn recommend(&self, history: &[usize], n: usize, exclude: &HashSet<usize>) -> Result<Vec<usize>> {
        Ok(model::recommend(self.params, self.config, history, n, exclude)?.item_indices())
    }
}

/// Static ranking by training-set interaction count, ties by item index.
#[derive(Debug, Clone, PartialEq)]
pub struct MostPopular {
    pub ranking: Vec<usize>,
    pub counts: Vec<usize>,
}

impl MostPopular {
    pub fn fit(corpus: &Corpus) -> Self {
        let mut counts = vec![0usize; corpus.catalog.item_count()];
        for &u in &corpus.split.train {
            for &i in &corpus.sequences[u].items {
                counts[i] += 1;
            }
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        let mut ranking: Vec<usize> = (0..counts.len()).collect();
        ranking.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        MostPopular { ranking, counts }
    }
}

impl Recommender for MostPopular {
    fn recommend(&self, _history: &[usize], n: usize, exclude: &HashSet<usize>) -> Result<Vec<usize>> {
        Ok(self
            .ranking
            .iter()
            .copied()
            .filter(|i| !exclude.contains(i))
            .take(n)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: Mode,
    pub split: SplitName,
    pub n: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

pub const REPORT_HEADER: &str = "mode\tsplit\tN\trecall\tndcg\thr\tusers_evaluated\tusers_skipped";

impl EvalReport {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.mode,
            self.split.as_str(),
            self.n,
            self.recall,
            self.ndcg,
            self.hr,
            self.users_evaluated,
            self.users_skipped
        )
    }

    pub fn to_tsv(reports: &[EvalReport]) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in reports {
            writeln!(out, "{}", r.tsv_row()).unwrap();
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Vec<EvalReport>> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        if lines.next() != Some(REPORT_HEADER) {
            return Err(DsieError::invalid("report header missing"));
        }
        lines
            .map(|line| {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 8 {
                    return Err(DsieError::invalid(format!("report row has {} fields", f.len())));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| DsieError::invalid(format!("bad number {s:?}")))
                };
                let int = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| DsieError::invalid(format!("bad count {s:?}")))
                };
                Ok(EvalReport {
                    mode: f[0].parse()?,
                    split: f[1].parse()?,
                    n: int(f[2])?,
                    recall: num(f[3])?,
                    ndcg: num(f[4])?,
                    hr: num(f[5])?,
                    users_evaluated: int(f[6])?,
                    users_skipped: int(f[7])?,
                })
            })
            .collect()
    }

    pub fn write(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, Self::to_tsv(reports)).map_err(|e| DsieError::io(path, e))
    }
}

fn evaluate_user(
    recommender: &dyn Recommender,
    catalog: &Catalog,
    sample: &EvalSample,
    n: usize,
    mode: Mode,
) -> Result<UserMetrics> {
    let exclude: HashSet<usize> = sample.seen.iter().copied().collect();
    let ranked = match mode {
        Mode::Standard => recommender.recommend(&sample.history, n, &exclude)?,
        Mode::Novelty => {
            let cats = history_categories(catalog, &sample.seen);
            let budget = novelty_budget(catalog, &cats, &exclude, n);
            let extended = recommender.recommend(&sample.history, budget, &exclude)?;
            novelty_filter(&extended, &cats, catalog, n)
        }
    };
    let targets: HashSet<usize> = sample.targets.iter().copied().collect();
    Ok(metrics_for_user(&ranked, &targets, n))
}

/// Evaluates `users` of `corpus` under the holdout protocol. Users whose
/// sequences are too short to hold anything out are counted as skipped.
pub fn evaluate_users(
    recommender: &dyn Recommender,
    corpus: &Corpus,
    users: &[usize],
    split: SplitName,
    n: usize,
    mode: Mode,
    exec: Execution,
) -> Result<EvalReport> {
    if n == 0 {
        return Err(DsieError::invalid("N must be at least 1"));
    }
    let samples: Vec<Option<EvalSample>> = users
        .iter()
        .map(|&u| build_eval_samples(&corpus.sequences[u], HOLDOUT_FRACTION, recommender.history_len()))
        .collect();
    let per_user = exec::map(exec, &samples, |s| {
        s.as_ref()
            .map(|s| evaluate_user(recommender, &corpus.catalog, s, n, mode))
            .transpose()
    });
    let mut sum = UserMetrics::default();
    let mut evaluated = 0;
    for m in per_user {
        if let Some(m) = m? {
            sum.recall += m.recall;
            sum.ndcg += m.ndcg;
            sum.hr += m.hr;
            evaluated += 1;
        }
    }
    let denom = evaluated.max(1) as f64;
    Ok(EvalReport {
        mode,
        split,
        n,
        recall: sum.recall / denom,
        ndcg: sum.ndcg / denom,
        hr: sum.hr / denom,
        users_evaluated: evaluated,
        users_skipped: users.len() - evaluated,
    })
}

pub fn evaluate_split(
    recommender: &dyn Recommender,
    corpus: &Corpus,
    split: SplitName,
    n: usize,
    mode: Mode,
    exec: Execution,
) -> Result<EvalReport> {
    evaluate_users(recommender, corpus, corpus.split.users(split), split, n, mode, exec)
}

/// Evaluates a checkpoint after confirming it was trained on this catalog.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    split: SplitName,
    n: usize,
    mode: Mode,
    exec: Execution,
) -> Result<EvalReport> {
    checkpoint.check_catalog(&corpus.catalog_hash())?;
    let rec = DsieRecommender {
        params: &checkpoint.params,
        config: &checkpoint.config,
    };
    evaluate_split(&rec, corpus, split, n, mode, exec)
}
