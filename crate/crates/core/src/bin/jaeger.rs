use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use jaeger::data::{generate_corpus, read_jsonl, write_jsonl, GenConfig, SplitName};
use jaeger::fusion::ModelConfig;
use jaeger::harness::{
    ablate, evaluate, gradcheck, load_checkpoint, predict, save_checkpoint, train, GradcheckOptions, TrainConfig,
};

#[derive(Parser)]
#[command(name = "jaeger", version, about = "Dual question-encoder document VQA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSON Lines.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        docs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Generator settings as JSON.
        #[arg(long)]
        gen_config: Option<PathBuf>,
    },
    /// Train on the train split and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report EMA on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: String,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write per-question predictions as JSON Lines.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Answer one question about one document.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        doc_id: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train and score the dual, bidir-only and causal-only variants.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare backprop gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(TrainConfig::toy()),
    }
}

fn data_path(cfg: &TrainConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    match flag.or_else(|| cfg.data.clone()) {
        Some(p) => Ok(p),
        None => bail!("no data path: pass --data or set \"data\" in the config"),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<jaeger::data::Document>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            seed,
            docs,
            out,
            gen_config,
        } => {
            let gen = match gen_config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => GenConfig::default(),
            };
            let corpus = generate_corpus(seed, docs, &gen)?;
            write_jsonl(&out, &corpus)?;
            eprintln!("wrote {} documents to {}", corpus.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = read_corpus(&data_path(&cfg, data)?)?;
            let (trained, report) = train(&cfg, &corpus)?;
            save_checkpoint(&out, &trained)?;
            for e in &report.epochs {
                println!("{}", serde_json::to_string(e)?);
            }
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Eval {
            ckpt,
            data,
            split,
            threshold,
            dump,
        } => {
            let trained = load_checkpoint(&ckpt)?;
            let split: SplitName = split.parse()?;
            let tau = threshold.unwrap_or(trained.config.threshold);
            let out = evaluate(&trained, &read_corpus(&data)?, split, tau)?;
            if let Some(path) = dump {
                let mut text = String::new();
                for r in &out.predictions {
                    text.push_str(&serde_json::to_string(r)?);
                    text.push('\n');
                }
                std::fs::write(&path, text)?;
            }
            println!("{}", serde_json::to_string(&out.report)?);
        }
        Command::Predict {
            ckpt,
            question,
            doc_id,
            data,
            threshold,
        } => {
            let trained = load_checkpoint(&ckpt)?;
            let corpus = read_corpus(&data)?;
            let Some(doc) = corpus.iter().find(|d| d.doc_id == doc_id) else {
                bail!("document {doc_id:?} not found in {}", data.display());
            };
            let tau = threshold.unwrap_or(trained.config.threshold);
            println!("{}", serde_json::to_string(&predict(&trained, doc, &question, tau)?)?);
        }
        Command::Ablate { config, data, json } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = read_corpus(&data_path(&cfg, data)?)?;
            let table = ablate(&cfg, &corpus)?;
            if json {
                println!("{}", serde_json::to_string(&table)?);
            } else {
                print!("{table}");
            }
        }
        Command::Gradcheck { config, json } => {
            let model = match config {
                Some(p) => load_config(Some(&p))?.model,
                None => ModelConfig::tiny(),
            };
            let report = gradcheck(&model, &GradcheckOptions::default())?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                for p in &report.params {
                    println!("{:<48} {:>6} {:.3e}", p.name, p.numel, p.max_rel_error);
                }
            }
            println!("{}", report.summary());
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
