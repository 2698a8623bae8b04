//! Interaction ingestion, k-core filtering, user splits and sample
//! construction.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{DsieError, Result};

/// One raw log record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
    /// Pipe-separated category labels; may be empty.
    pub category_id: String,
}

impl Interaction {
    pub fn new(user: &str, item: &str, timestamp: u64, category: &str) -> Self {
        Interaction {
            user_id: user.to_string(),
            item_id: item.to_string(),
            timestamp,
            category_id: category.to_string(),
        }
    }
}

/// Dense id maps for users, items and item categories.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    pub item_ids: Vec<String>,
    pub user_ids: Vec<String>,
    pub category_names: Vec<String>,
    /// Sorted, deduplicated category indices per item.
    pub item_categories: Vec<Vec<u32>>,
    item_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_parts(
        item_ids: Vec<String>,
        user_ids: Vec<String>,
        category_names: Vec<String>,
        item_categories: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let item_index = index_of(&item_ids, "item")?;
        let user_index = index_of(&user_ids, "user")?;
        if item_categories.len() != item_ids.len() {
            return Err(DsieError::invalid("one category set per item required"));
        }
        Ok(Catalog {
            item_ids,
            user_ids,
            category_names,
            item_categories,
            item_index,
            user_index,
        })
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn categories_of(&self, item: usize) -> &[u32] {
        &self.item_categories[item]
    }
}

fn index_of(ids: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(DsieError::invalid(format!("duplicate {what} id {id}")));
        }
    }
    Ok(map)
}

/// Chronological item indices of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user_index: usize,
    pub items: Vec<usize>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = DsieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(DsieError::invalid(format!("unknown split {other}"))),
        }
    }
}

/// Disjoint user partitions, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn users(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }
}

/// Left-padded prefix with its next item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub prefix: Vec<usize>,
    pub mask: Vec<bool>,
    pub target: usize,
}

impl TrainingSample {
    /// The non-pad items in order.
    pub fn items(&self) -> Vec<usize> {
        real_items(&self.prefix, &self.mask)
    }
}

pub fn real_items(prefix: &[usize], mask: &[bool]) -> Vec<usize> {
    prefix.iter().zip(mask).filter(|(_, &m)| m).map(|(&i, _)| i).collect()
}

/// Holdout instance for one evaluation user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSample {
    pub user_index: usize,
    /// Most recent `max_len` items of the inference portion.
    pub history: Vec<usize>,
    /// Every item of the inference portion, untruncated.
    pub seen: Vec<usize>,
    /// Held-out items, sorted and deduplicated.
    pub targets: Vec<usize>,
}

/// Reads `user<TAB>item<TAB>timestamp<TAB>category` lines.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DsieError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| DsieError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (user, item) = (fields[0], fields[1]);
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let timestamp = fields[2]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(format!("bad timestamp {:?}: {e}", fields[2])))?;
        let category = fields.get(3).copied().unwrap_or("");
        out.push(Interaction::new(user, item, timestamp, category));
    }
    Ok(out)
}

/// Repeated item-then-user minimum-count filtering until nothing changes.
fn filter_to_fixpoint(interactions: &[Interaction], min_feedback: usize) -> Vec<&Interaction> {
    let mut alive: Vec<&Interaction> = interactions.iter().collect();
    loop {
        let before = alive.len();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for it in &alive {
            *item_counts.entry(&it.item_id).or_default() += 1;
        }
        alive.retain(|it| item_counts[it.item_id.as_str()] >= min_feedback);
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        for it in &alive {
            *user_counts.entry(&it.user_id).or_default() += 1;
        }
        alive.retain(|it| user_counts[it.user_id.as_str()] >= min_feedback);
        if alive.len() == before {
            return alive;
        }
    }
}

/// Filters sparse users and items and assigns dense indices by first
/// appearance in file order.
pub fn build_corpus(interactions: &[Interaction], min_feedback: usize) -> Result<(Catalog, Vec<UserSequence>)> {
    if min_feedback == 0 {
        return Err(DsieError::invalid("min_feedback must be at least 1"));
    }
    let alive = filter_to_fixpoint(interactions, min_feedback);
    if alive.is_empty() {
        return Err(DsieError::EmptyCorpus);
    }

    let mut item_ids = Vec::new();
    let mut user_ids = Vec::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut category_index: HashMap<&str, u32> = HashMap::new();
    let mut category_names = Vec::new();
    let mut item_categories: Vec<Vec<u32>> = Vec::new();
    let mut events: Vec<Vec<(u64, usize)>> = Vec::new();

    for it in alive {
        let item = *item_index.entry(&it.item_id).or_insert_with(|| {
            item_ids.push(it.item_id.clone());
            item_categories.push(Vec::new());
            item_ids.len() - 1
        });
        let user = *user_index.entry(&it.user_id).or_insert_with(|| {
            user_ids.push(it.user_id.clone());
            events.push(Vec::new());
            user_ids.len() - 1
        });
        for cat in it.category_id.split('|').filter(|c| !c.is_empty()) {
            let c = *category_index.entry(cat).or_insert_with(|| {
                category_names.push(cat.to_string());
                (category_names.len() - 1) as u32
            });
            if !item_categories[item].contains(&c) {
                item_categories[item].push(c);
            }
        }
        events[user].push((it.timestamp, item));
    }
    for cats in &mut item_categories {
        cats.sort_unstable();
    }
    let sequences = events
        .into_iter()
        .enumerate()
        .map(|(user_index, mut ev)| {
            // stable: equal timestamps keep file order
            ev.sort_by_key(|&(t, _)| t);
            UserSequence {
                user_index,
                items: ev.into_iter().map(|(_, i)| i).collect(),
            }
        })
        .collect();
    let catalog = Catalog::from_parts(item_ids, user_ids, category_names, item_categories)?;
    Ok((catalog, sequences))
}

/// Seeded 8:1:1 user partition.
pub fn split_users(user_count: usize, seed: u64) -> Result<DatasetSplit> {
    if user_count < 10 {
        return Err(DsieError::invalid(format!(
            "need at least 10 users to split, have {user_count}"
        )));
    }
    let mut users: Vec<usize> = (0..user_count).collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = (user_count as f64 * 0.1).round() as usize;
    let n_train = user_count - 2 * tenth;
    let mut train = users[..n_train].to_vec();
    let mut valid = users[n_train..n_train + tenth].to_vec();
    let mut test = users[n_train + tenth..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, valid, test })
}

fn left_pad(items: &[usize], max_len: usize) -> (Vec<usize>, Vec<bool>) {
    let pad = max_len - items.len();
    let mut prefix = vec![0; pad];
    prefix.extend_from_slice(items);
    let mut mask = vec![false; pad];
    mask.resize(max_len, true);
    (prefix, mask)
}

/// One sample per position `t ≥ 2`, predicting item `t` from the (at most
/// `max_len`) items before it.
pub fn expand_training_samples(sequence: &UserSequence, max_len: usize) -> Vec<TrainingSample> {
    let items = &sequence.items;
    if items.len() < 2 || max_len == 0 {
        return Vec::new();
    }
    (1..items.len())
        .map(|t| {
            let start = t.saturating_sub(max_len);
            let (prefix, mask) = left_pad(&items[start..t], max_len);
            TrainingSample {
                prefix,
                mask,
                target: items[t],
            }
        })
        .collect()
}

/// Permutes the real positions of `prefix` uniformly at random.
pub fn shuffle_augment(prefix: &[usize], mask: &[bool], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_augment_with(prefix, mask, &mut rng)
}

pub fn shuffle_augment_with<R: Rng + ?Sized>(prefix: &[usize], mask: &[bool], rng: &mut R) -> Vec<usize> {
    let positions: Vec<usize> = (0..prefix.len()).filter(|&i| mask[i]).collect();
    let mut real: Vec<usize> = positions.iter().map(|&i| prefix[i]).collect();
    real.shuffle(rng);
    let mut out = prefix.to_vec();
    for (&pos, item) in positions.iter().zip(real) {
        out[pos] = item;
    }
    out
}

/// Index of the negative partner for each batch position: `(j + 1) mod B`.
pub fn in_batch_negative_indices(batch_size: usize) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(DsieError::invalid("in-batch negatives need a batch of at least 2"));
    }
    Ok((0..batch_size).map(|j| (j + 1) % batch_size).collect())
}

pub fn in_batch_negative<T: Clone>(batch: &[T]) -> Result<Vec<T>> {
    Ok(in_batch_negative_indices(batch.len())?
        .into_iter()
        .map(|j| batch[j].clone())
        .collect())
}

/// Number of held-out items: `ceil(fraction × len)`.
pub fn holdout_count(len: usize, fraction: f64) -> usize {
    // guard against 0.2 * 10 landing a hair above 2
    ((len as f64 * fraction) - 1e-9).ceil().max(1.0) as usize
}

/// Splits a sequence into inference history and held-out targets. Returns
/// `None` for users with fewer than two interactions.
pub fn build_eval_samples(sequence: &UserSequence, holdout_fraction: f64, max_len: usize) -> Option<EvalSample> {
    let len = sequence.items.len();
    if len < 2 {
        return None;
    }
    let n_targets = holdout_count(len, holdout_fraction).min(len - 1);
    let split = len - n_targets;
    let seen = sequence.items[..split].to_vec();
    let history = seen[split.saturating_sub(max_len)..].to_vec();
    let mut targets = sequence.items[split..].to_vec();
    targets.sort_unstable();
    targets.dedup();
    Some(EvalSample {
        user_index: sequence.user_index,
        history,
        seen,
        targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_items: 200,
            n_clusters: 4,
            min_len: 10,
            max_len: 30,
            seed: 7,
        }
    }
}

/// Ground truth recorded by [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Cluster of each raw item id `i{n}` (by generation index `n`).
    pub item_cluster: Vec<usize>,
    /// Per generated user: the chosen clusters and their mixture weights.
    pub user_mixture: Vec<Vec<(usize, f64)>>,
}

/// Raw interactions for a clustered multi-interest population.
///
/// Items are split into contiguous cluster blocks; cluster `c` is also the
/// item's category label `c{c}`. Each user mixes 2–3 clusters with
/// Dirichlet(1) weights and draws items cluster-first, then uniformly among
/// the cluster's items not yet in the user's history (repeats only once a
/// cluster is exhausted).
pub fn generate_synthetic_interactions(cfg: &SynthConfig) -> Result<(Vec<Interaction>, SynthTruth)> {
    if cfg.n_clusters < 2 {
        return Err(DsieError::invalid("need ≥2 clusters"));
    }
    if cfg.n_items < cfg.n_clusters {
        return Err(DsieError::invalid("need at least one item per cluster"));
    }
    if cfg.min_len < 2 || cfg.min_len > cfg.max_len {
        return Err(DsieError::invalid("sequence length range must satisfy 2 ≤ min ≤ max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let item_cluster: Vec<usize> = (0..cfg.n_items).map(|i| i * cfg.n_clusters / cfg.n_items).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_clusters];
    for (i, &c) in item_cluster.iter().enumerate() {
        members[c].push(i);
    }

    let mut interactions = Vec::new();
    let mut user_mixture = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let m = rng.random_range(2..=3usize).min(cfg.n_clusters);
        let mut clusters: Vec<usize> = (0..cfg.n_clusters).collect();
        clusters.shuffle(&mut rng);
        clusters.truncate(m);
        // Dirichlet(1, ..., 1) as normalised unit exponentials
        let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut used: Vec<Vec<bool>> = members.iter().map(|m| vec![false; m.len()]).collect();
        for step in 0..len {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = clusters[m - 1];
            for (&c, &w) in clusters.iter().zip(&weights) {
                acc += w;
                if r < acc {
                    pick = c;
                    break;
                }
            }
            let free: Vec<usize> = (0..members[pick].len()).filter(|&j| !used[pick][j]).collect();
            let j = if free.is_empty() {
                rng.random_range(0..members[pick].len())
            } else {
                free[rng.random_range(0..free.len())]
            };
            used[pick][j] = true;
            let item = members[pick][j];
            interactions.push(Interaction::new(
                &format!("u{u}"),
                &format!("i{item}"),
                1_000 + step as u64,
                &format!("c{pick}"),
            ));
        }
        user_mixture.push(clusters.into_iter().zip(weights).collect());
    }
    Ok((
        interactions,
        SynthTruth {
            item_cluster,
            user_mixture,
        },
    ))
}

/// Synthetic corpus with no frequency filtering.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Catalog, Vec<UserSequence>, SynthTruth)> {
    let (interactions, truth) = generate_synthetic_interactions(cfg)?;
    let (catalog, sequences) = build_corpus(&interactions, 1)?;
    Ok((catalog, sequences, truth))
}
