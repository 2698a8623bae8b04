use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dsie::config::ablation_variant;
use dsie::dataset::{SplitName, SynthConfig};
use dsie::eval::{evaluate_checkpoint, evaluate_split, MostPopular};
use dsie::sweep::{sweep, sweep_tsv, SweepParam, SweepSpec};
use dsie::train::{log_tsv, train};
use dsie::{model, Checkpoint, Corpus, EvalReport, Execution, Mode, TrainConfig};

/// Dual-scale interest extraction recommender.
#[derive(Parser)]
#[command(name = "dsie", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, index and split a raw `user<TAB>item<TAB>timestamp<TAB>categories` log.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        min_feedback: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a clustered synthetic corpus.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 10)]
        min_len: usize,
        #[arg(long, default_value_t = 30)]
        max_len: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Seed of the train/valid/test user split.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Train and save the best checkpoint by validation recall.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::Full)]
        variant: VariantArg,
        /// Per-epoch loss and validation log (TSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint or baseline on a split.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 50)]
        topn: usize,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Print the top-N items for a history of raw item ids.
    Retrieve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated item ids, oldest first.
        #[arg(long)]
        items: String,
        #[arg(long, default_value_t = 10)]
        topn: usize,
    },
    /// Train over a list of values of one hyperparameter and report each.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        /// tau, layers (S) or interests (K).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated training seeds; each row averages over them.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Valid)]
        split: SplitArg,
        #[arg(long, default_value_t = 50)]
        topn: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Training configuration. Precedence, lowest first: built-in defaults,
/// `--config` file, `--set` pairs in order, `--seed`.
#[derive(Args)]
struct ConfigArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the data-parallel path.
    #[arg(long)]
    sequential: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        for pair in &self.set {
            let Some((k, v)) = pair.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {pair:?}");
            };
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    #[value(name = "no_cl")]
    NoCl,
    #[value(name = "no_gs")]
    NoGs,
}

impl VariantArg {
    fn as_str(self) -> &'static str {
        match self {
            VariantArg::Full => "full",
            VariantArg::NoCl => "no_cl",
            VariantArg::NoGs => "no_gs",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    MostPopular,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Novelty,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Valid => SplitName::Valid,
            SplitArg::Test => SplitName::Test,
        }
    }
}

fn print_report(report: &EvalReport, path: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", EvalReport::to_tsv(std::slice::from_ref(report)));
    if let Some(p) = path {
        EvalReport::write(p, std::slice::from_ref(report))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prepare {
            input,
            output,
            min_feedback,
            seed,
        } => {
            let corpus = Corpus::prepare(&input, min_feedback, seed)?;
            corpus.save(&output)?;
            println!("{}", corpus.stats());
        }
        Command::Synth {
            output,
            users,
            items,
            clusters,
            min_len,
            max_len,
            seed,
            split_seed,
        } => {
            let cfg = SynthConfig {
                n_users: users,
                n_items: items,
                n_clusters: clusters,
                min_len,
                max_len,
                seed,
            };
            let corpus = Corpus::synthetic(&cfg, split_seed)?;
            corpus.save(&output)?;
            println!("{}", corpus.stats());
        }
        Command::Train {
            corpus,
            output,
            variant,
            log,
            config,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let cfg = ablation_variant(&config.resolve()?, variant.as_str())?;
            let outcome = train(&corpus, &cfg, execution(config.sequential), |e| {
                eprintln!(
                    "epoch {:>3}  total {:.5}  main {:.5}  aux {:.5}  cl {:.5}  valid_recall@{} {:.5}",
                    e.epoch, e.loss.total, e.loss.main, e.loss.aux, e.loss.contrastive, cfg.valid_topn, e.valid_recall
                )
            })?;
            eprintln!("best epoch {}", outcome.best_epoch);
            Checkpoint {
                config: cfg.clone(),
                catalog_hash: corpus.catalog_hash(),
                params: outcome.best,
            }
            .save(&output)?;
            if let Some(path) = log {
                fs::write(&path, log_tsv(&outcome.log, cfg.valid_topn))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Eval {
            corpus,
            checkpoint,
            baseline,
            mode,
            split,
            topn,
            report,
            sequential,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let mode = match mode {
                ModeArg::Standard => Mode::Standard,
                ModeArg::Novelty => Mode::Novelty,
            };
            let exec = execution(sequential);
            let result = match (baseline, checkpoint) {
                (Some(BaselineArg::MostPopular), _) => {
                    evaluate_split(&MostPopular::fit(&corpus), &corpus, split.into(), topn, mode, exec)?
                }
                (None, Some(path)) => {
                    let ckpt = Checkpoint::load(&path)?;
                    evaluate_checkpoint(&ckpt, &corpus, split.into(), topn, mode, exec)?
                }
                (None, None) => unreachable!("clap requires one of the two"),
            };
            print_report(&result, report.as_deref())?;
        }
        Command::Retrieve {
            corpus,
            checkpoint,
            items,
            topn,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            ckpt.check_catalog(&corpus.catalog_hash())?;
            let history = items
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|id| {
                    corpus
                        .catalog
                        .item_index(id)
                        .with_context(|| format!("unknown item id {id:?}"))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let exclude: HashSet<usize> = history.iter().copied().collect();
            let r = model::recommend(&ckpt.params, &ckpt.config, &history, topn, &exclude)?;
            for (rank, (item, score)) in r.items.iter().enumerate() {
                println!("{}\t{}\t{score:.6}", rank + 1, corpus.catalog.item_ids[*item]);
            }
        }
        Command::Sweep {
            corpus,
            param,
            values,
            seeds,
            split,
            topn,
            report,
            config,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let param: SweepParam = param.parse()?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let seeds = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let spec = SweepSpec {
                param,
                values,
                seeds,
                split: split.into(),
                topn,
            };
            let rows = sweep(&corpus, &config.resolve()?, &spec, execution(config.sequential))?;
            let table = sweep_tsv(&rows);
            print!("{table}");
            if let Some(path) = report {
                fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
