use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use optskills::clustering::{adjusted_rand_index, dbscan_raw, noise_as_singletons, pairwise_f1};
use optskills::config::RunConfig;
use optskills::dataset::{load_jsonl, require_answers, train_split, ProblemInstance};
use optskills::evaluation::{pass_table, retrieval_metrics};
use optskills::pipeline::{snapshot_library, EvalRecord, Pipeline, RunDir};
use optskills::providers::EmbeddingVector;
use optskills::skills::{load_library, load_or_empty, save_library};

#[derive(Parser)]
#[command(name = "optskills", version, about = "Skill-library pipeline for optimization modeling agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an initial library from archetype clusters of the first training split.
    Discover {
        #[arg(long)]
        config: PathBuf,
    },
    /// Update the library online from the second training split.
    Learn {
        #[arg(long)]
        config: PathBuf,
    },
    /// Skill-guided inference on the eval set, or re-score a results file.
    Eval {
        #[arg(long, required_unless_present = "results")]
        config: Option<PathBuf>,
        /// Print the Pass@1 table for an existing results.jsonl and exit.
        #[arg(long, conflicts_with = "config")]
        results: Option<PathBuf>,
    },
    /// DBSCAN over precomputed embeddings, with ARI / F1 when labels are present.
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, required = true)]
        epsilon: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        min_samples: usize,
    },
    /// Leave-one-out retrieval metrics over labeled embeddings.
    Metrics {
        #[arg(long)]
        embeddings: PathBuf,
        /// JSONL of {"id", "label"} overriding labels in the embeddings file.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        k: Vec<usize>,
    },
    /// Copy the current library to <library>/snapshots/v<version>/.
    Snapshot {
        #[arg(long, required_unless_present = "library")]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        library: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    label: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// Ids, vectors and optional labels, in file order.
type EmbeddingTable = (Vec<String>, Vec<Vec<f64>>, Vec<Option<String>>);

fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let rows: Vec<EmbeddingRow> = read_jsonl(path)?;
    if rows.is_empty() {
        bail!("{} holds no embeddings", path.display());
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut vectors = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for row in rows {
        let v = EmbeddingVector::from_raw(row.vector).with_context(|| format!("embedding `{}`", row.id))?;
        ids.push(row.id);
        vectors.push(v.into_inner());
        labels.push(row.label);
    }
    Ok((ids, vectors, labels))
}

/// Maps string labels to dense integer ids in first-appearance order.
fn encode_labels(labels: &[String]) -> Vec<i64> {
    let mut seen: HashMap<&str, i64> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = seen.len() as i64;
            *seen.entry(l.as_str()).or_insert(next)
        })
        .collect()
}

fn training_splits(cfg: &RunConfig) -> Result<(Vec<ProblemInstance>, Vec<ProblemInstance>)> {
    let path = cfg.paths.dataset.as_ref().context("config has no paths.dataset")?;
    let problems = load_jsonl(path)?;
    require_answers(&problems)?;
    Ok(train_split(problems, cfg.shuffle_seed, cfg.train_fraction)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Discover { config } => {
            let cfg = RunConfig::load(&config)?;
            let (train, _) = training_splits(&cfg)?;
            let library = load_or_empty(&cfg.paths.library)?;
            let pipeline = Pipeline::from_config(cfg)?;
            let run = RunDir::create(&pipeline.config.paths.runs, &pipeline.clock, "discover")?;
            let (library, report) = pipeline.discover(&train, &library, &run)?;
            save_library(&library, &pipeline.config.paths.library)?;
            run.write_json("report.json", &report)?;
            eprintln!("run directory: {}", run.path().display());
            print_json(&report)
        }
        Command::Learn { config } => {
            let cfg = RunConfig::load(&config)?;
            let (_, learn) = training_splits(&cfg)?;
            let library = load_or_empty(&cfg.paths.library)?;
            let pipeline = Pipeline::from_config(cfg)?;
            let run = RunDir::create(&pipeline.config.paths.runs, &pipeline.clock, "learn")?;
            let (_, report) = pipeline.learn(&learn, &library, &pipeline.config.paths.library, &run)?;
            run.write_json("report.json", &report)?;
            eprintln!("run directory: {}", run.path().display());
            print_json(&report)
        }
        Command::Eval { results: Some(path), .. } => {
            let records: Vec<EvalRecord> = read_jsonl(&path)?;
            let scored = records.iter().filter_map(|r| r.correct.map(|c| (r.benchmark.as_str(), c)));
            print!("{}", pass_table(scored)?.render());
            Ok(())
        }
        Command::Eval { config, .. } => {
            let cfg = RunConfig::load(&config.expect("clap requires config"))?;
            let path = cfg.paths.eval_dataset.clone().context("config has no paths.eval_dataset")?;
            let problems = load_jsonl(&path)?;
            let library = load_library(&cfg.paths.library)
                .with_context(|| format!("loading library {}", cfg.paths.library.display()))?;
            let pipeline = Pipeline::from_config(cfg)?;
            let run = RunDir::create(&pipeline.config.paths.runs, &pipeline.clock, "eval")?;
            let report = pipeline.evaluate(&problems, &library, &run)?;
            run.write_json("report.json", &report)?;
            eprintln!("run directory: {}", run.path().display());
            match &report.pass_at_1 {
                Some(table) => print!("{}", table.render()),
                None => println!("no problem carries a ground-truth answer; nothing scored"),
            }
            Ok(())
        }
        Command::Cluster { embeddings, epsilon, min_samples } => {
            let (_, vectors, labels) = load_embeddings(&embeddings)?;
            let truth: Option<Vec<i64>> = labels.into_iter().collect::<Option<Vec<_>>>().map(|l| encode_labels(&l));
            let points: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
            println!("epsilon\tmin_samples\tclusters\tnoise\tari\tpairwise_f1");
            for eps in epsilon {
                let a = dbscan_raw(&points, eps, min_samples)?;
                let (ari, f1) = match &truth {
                    Some(t) => {
                        let pred = noise_as_singletons(&a.labels);
                        (format!("{:.4}", adjusted_rand_index(&pred, t)?), format!("{:.4}", pairwise_f1(&pred, t)?))
                    }
                    None => ("-".into(), "-".into()),
                };
                println!("{eps}\t{min_samples}\t{}\t{}\t{ari}\t{f1}", a.cluster_count, a.noise_count());
            }
            Ok(())
        }
        Command::Metrics { embeddings, labels, k } => {
            let (ids, vectors, inline) = load_embeddings(&embeddings)?;
            let labels: Vec<String> = match labels {
                Some(path) => {
                    let table: HashMap<String, String> =
                        read_jsonl::<LabelRow>(&path)?.into_iter().map(|r| (r.id, r.label)).collect();
                    ids.iter()
                        .map(|id| table.get(id).cloned().with_context(|| format!("no label for `{id}`")))
                        .collect::<Result<_>>()?
                }
                None => inline
                    .into_iter()
                    .zip(&ids)
                    .map(|(l, id)| l.with_context(|| format!("no label for `{id}`")))
                    .collect::<Result<_>>()?,
            };
            print_json(&retrieval_metrics(&vectors, &labels, &k)?)
        }
        Command::Snapshot { config, library } => {
            let dir = match (config, library) {
                (Some(c), _) => RunConfig::load(&c)?.paths.library,
                (None, Some(l)) => l,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let lib = load_library(&dir).with_context(|| format!("loading library {}", dir.display()))?;
            let target = snapshot_library(&dir, &lib)?;
            println!("{}", target.display());
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
