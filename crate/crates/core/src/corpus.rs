//! Prepared-corpus directory: catalog, users, sequences and split as TSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::{
    build_corpus, generate_synthetic, load_interactions, split_users, Catalog, DatasetSplit, SplitName, SynthConfig,
    UserSequence,
};
use crate::error::{DsieError, Result};

pub const CATALOG_FILE: &str = "catalog.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const SEQUENCES_FILE: &str = "sequences.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub catalog: Catalog,
    pub sequences: Vec<UserSequence>,
    pub split: DatasetSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub mean_length: f64,
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "users\t{}", self.users)?;
        writeln!(f, "items\t{}", self.items)?;
        writeln!(f, "interactions\t{}", self.interactions)?;
        write!(f, "mean_length\t{:.3}", self.mean_length)
    }
}

impl Corpus {
    /// Raw interaction log to filtered, indexed and split corpus.
    pub fn prepare(input: impl AsRef<Path>, min_feedback: usize, seed: u64) -> Result<Self> {
        let raw = load_interactions(input)?;
        let (catalog, sequences) = build_corpus(&raw, min_feedback)?;
        let split = split_users(catalog.user_count(), seed)?;
        Ok(Corpus {
            catalog,
            sequences,
            split,
        })
    }

    pub fn synthetic(cfg: &SynthConfig, split_seed: u64) -> Result<Self> {
        let (catalog, sequences, _) = generate_synthetic(cfg)?;
        let split = split_users(catalog.user_count(), split_seed)?;
        Ok(Corpus {
            catalog,
            sequences,
            split,
        })
    }

    pub fn stats(&self) -> CorpusStats {
        let interactions: usize = self.sequences.iter().map(|s| s.len()).sum();
        CorpusStats {
            users: self.catalog.user_count(),
            items: self.catalog.item_count(),
            interactions,
            mean_length: interactions as f64 / self.sequences.len().max(1) as f64,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| DsieError::io(dir, e))?;
        write(dir.join(CATALOG_FILE), &catalog_tsv(&self.catalog))?;

        let mut users = String::new();
        for (i, id) in self.catalog.user_ids.iter().enumerate() {
            writeln!(users, "{i}\t{id}").unwrap();
        }
        write(dir.join(USERS_FILE), &users)?;

        let mut seqs = String::new();
        for s in &self.sequences {
            let items: Vec<String> = s.items.iter().map(|i| i.to_string()).collect();
            writeln!(seqs, "{}\t{}", s.user_index, items.join(",")).unwrap();
        }
        write(dir.join(SEQUENCES_FILE), &seqs)?;

        let mut assignment = vec![""; self.catalog.user_count()];
        for which in [SplitName::Train, SplitName::Valid, SplitName::Test] {
            for &u in self.split.users(which) {
                assignment[u] = which.as_str();
            }
        }
        let mut split = String::new();
        for (u, name) in assignment.iter().enumerate() {
            writeln!(split, "{u}\t{name}").unwrap();
        }
        write(dir.join(SPLIT_FILE), &split)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();

        let path = dir.join(CATALOG_FILE);
        let mut item_ids = Vec::new();
        let mut category_names: Vec<String> = Vec::new();
        let mut item_categories = Vec::new();
        for (n, fields) in read_rows(&path, 3)? {
            expect_index(&path, n, &fields[0], item_ids.len())?;
            item_ids.push(fields[1].clone());
            let mut cats = Vec::new();
            for name in fields[2].split('|').filter(|c| !c.is_empty()) {
                let idx = match category_names.iter().position(|c| c == name) {
                    Some(i) => i,
                    None => {
                        category_names.push(name.to_string());
                        category_names.len() - 1
                    }
                };
                cats.push(idx as u32);
            }
            cats.sort_unstable();
            item_categories.push(cats);
        }

        let path = dir.join(USERS_FILE);
        let mut user_ids = Vec::new();
        for (n, fields) in read_rows(&path, 2)? {
            expect_index(&path, n, &fields[0], user_ids.len())?;
            user_ids.push(fields[1].clone());
        }
        let catalog = Catalog::from_parts(item_ids, user_ids, category_names, item_categories)?;

        let path = dir.join(SEQUENCES_FILE);
        let mut sequences = Vec::new();
        for (n, fields) in read_rows(&path, 2)? {
            expect_index(&path, n, &fields[0], sequences.len())?;
            let items = fields[1]
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    let i: usize = s
                        .parse()
                        .map_err(|_| parse_err(&path, n, format!("bad item index {s:?}")))?;
                    if i >= catalog.item_count() {
                        return Err(parse_err(&path, n, format!("item index {i} out of range")));
                    }
                    Ok(i)
                })
                .collect::<Result<Vec<_>>>()?;
            sequences.push(UserSequence {
                user_index: sequences.len(),
                items,
            });
        }
        if sequences.len() != catalog.user_count() {
            return Err(DsieError::invalid(format!(
                "{} sequences for {} users",
                sequences.len(),
                catalog.user_count()
            )));
        }

        let path = dir.join(SPLIT_FILE);
        let mut split = DatasetSplit::default();
        for (n, fields) in read_rows(&path, 2)? {
            let u: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(&path, n, "bad user index".into()))?;
            if u >= catalog.user_count() {
                return Err(parse_err(&path, n, format!("user index {u} out of range")));
            }
            match fields[1].as_str() {
                "train" => split.train.push(u),
                "valid" => split.valid.push(u),
                "test" => split.test.push(u),
                other => return Err(parse_err(&path, n, format!("unknown split {other:?}"))),
            }
        }
        Ok(Corpus {
            catalog,
            sequences,
            split,
        })
    }

    pub fn catalog_hash(&self) -> String {
        catalog_hash(&self.catalog)
    }
}

/// Catalog rows with each item's categories sorted by name, so the text is
/// canonical regardless of category index order.
pub fn catalog_tsv(catalog: &Catalog) -> String {
    let mut out = String::new();
    for (i, id) in catalog.item_ids.iter().enumerate() {
        let mut names: Vec<&str> = catalog
            .categories_of(i)
            .iter()
            .map(|&c| catalog.category_names[c as usize].as_str())
            .collect();
        names.sort_unstable();
        writeln!(out, "{i}\t{id}\t{}", names.join("|")).unwrap();
    }
    out
}

/// Hex SHA-256 of the canonical catalog text.
pub fn catalog_hash(catalog: &Catalog) -> String {
    let digest = Sha256::digest(catalog_tsv(catalog).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| DsieError::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: String) -> DsieError {
    DsieError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn expect_index(path: &Path, line: usize, field: &str, want: usize) -> Result<()> {
    match field.parse::<usize>() {
        Ok(v) if v == want => Ok(()),
        _ => Err(parse_err(path, line, format!("expected index {want}, found {field:?}"))),
    }
}

fn read_rows(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| DsieError::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<String> = line.split('\t').map(str::to_string).collect();
        if parts.len() != fields {
            return Err(parse_err(
                path,
                n + 1,
                format!("expected {fields} fields, found {}", parts.len()),
            ));
        }
        rows.push((n + 1, parts));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;

    fn corpus() -> Corpus {
        let mut rows = Vec::new();
        for u in 0..12 {
            for i in 0..4 {
                let cat = if i % 2 == 0 { "B|A" } else { "" };
                rows.push(Interaction::new(
                    &format!("u{u}"),
                    &format!("i{}", (u + i) % 6),
                    i as u64,
                    cat,
                ));
            }
        }
        let (catalog, sequences) = build_corpus(&rows, 1).unwrap();
        let split = split_users(catalog.user_count(), 3).unwrap();
        Corpus {
            catalog,
            sequences,
            split,
        }
    }

    #[test]
    fn save_load_preserves_everything_but_category_order() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.sequences, c.sequences);
        assert_eq!(back.split, c.split);
        assert_eq!(back.catalog.item_ids, c.catalog.item_ids);
        assert_eq!(back.catalog.user_ids, c.catalog.user_ids);
        assert_eq!(back.catalog_hash(), c.catalog_hash());
        assert_eq!(catalog_tsv(&back.catalog), catalog_tsv(&c.catalog));
        assert!(catalog_tsv(&c.catalog).lines().next().unwrap().ends_with("A|B"));
    }

    #[test]
    fn stats_and_hash_sensitivity() {
        let c = corpus();
        let s = c.stats();
        assert_eq!((s.users, s.interactions), (12, 48));
        assert_eq!(s.mean_length, 4.0);
        let mut other = c.clone();
        other.catalog.item_ids[0] = "renamed".into();
        assert_ne!(other.catalog_hash(), c.catalog_hash());
        assert_eq!(c.catalog_hash().len(), 64);
    }

    #[test]
    fn corrupt_files_rejected() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        fs::write(dir.path().join(SPLIT_FILE), "0\tholdout\n").unwrap();
        assert!(matches!(
            Corpus::load(dir.path()),
            Err(DsieError::Parse { line: 1, .. })
        ));
    }
}
