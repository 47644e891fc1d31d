//! `l3ens`: validate and run experiments, encode text, and re-render reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l3ens_core::config::validate_config;
use l3ens_core::demo::write_demo;
use l3ens_core::embedding::{store_embeddings, HashEncoder};
use l3ens_core::experiment::{run_experiment, run_sweep};
use l3ens_core::reporting::{write_reports, RunResult};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "l3ens", version, about = "Lifelong-learning experiment engine over frozen embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and report every problem found.
    Validate { config: PathBuf },
    /// Run an experiment: heads, sequences, ensembles, reports.
    Run {
        config: PathBuf,
        /// Output root; results go to <OUT>/<experiment_id>/.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run seeds seed, seed+1, ..., seed+N-1 and aggregate them.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Hash-encode a JSON Lines file into an L3EM embedding file.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Source name recorded in the manifest.
        #[arg(long)]
        name: Option<String>,
    },
    /// Re-render the tables and plot data next to an existing run.json.
    Report { run: PathBuf },
    /// Write the self-contained demo (data, knowledge base, demo.json) to a directory.
    Demo {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn read_texts(path: &Path) -> Result<(Vec<String>, Vec<String>), Failure> {
    let raw = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Failure::Runtime(format!("{}:{}: {m}", path.display(), n + 1));
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let id = match &v["id"] {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(x) => x.to_string(),
            _ => return Err(bad("missing \"id\"")),
        };
        let text = match (v["text"].as_str(), v["text_a"].as_str(), v["text_b"].as_str()) {
            (Some(t), None, None) => t.to_string(),
            (None, Some(a), Some(b)) => format!("{a} {b}"),
            _ => return Err(bad("expected \"text\" or \"text_a\" + \"text_b\"")),
        };
        ids.push(id);
        texts.push(text);
    }
    Ok((ids, texts))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = validate_config(&config).map_err(|e| Failure::Config(e.to_string()))?;
            println!(
                "{}: ok ({} datasets, {} sources, {} sequences, {} ensembles; digest {})",
                config.display(),
                cfg.datasets.len(),
                cfg.embedding_sources.len(),
                cfg.sequences.len(),
                cfg.ensembles.len(),
                &cfg.digest[..12]
            );
        }
        Command::Run { config, out, seeds } => {
            let cfg = validate_config(&config).map_err(|e| Failure::Config(e.to_string()))?;
            let root = out.unwrap_or_else(|| cfg.output_dir.clone());
            match seeds {
                Some(0) => return Err(Failure::Config("--seeds must be at least 1".into())),
                Some(n) => {
                    let sweep = run_sweep(&cfg, &root, n).map_err(Failure::runtime)?;
                    for e in &sweep.ensembles {
                        println!("{:<28} mean {:.4}  std {:.4}", e.name, e.mean, e.std);
                    }
                    println!("wrote {}", root.join(&cfg.experiment_id).join("sweep.json").display());
                }
                None => {
                    let outcome = run_experiment(&cfg, &root).map_err(|e| {
                        Failure::Runtime(format!("{e}\npartial results: {}", e.run_dir.join("run.json").display()))
                    })?;
                    for f in &outcome.files {
                        println!("wrote {}", f.display());
                    }
                }
            }
        }
        Command::Encode {
            input,
            dim,
            seed,
            out,
            name,
        } => {
            let (ids, texts) = read_texts(&input)?;
            let enc = HashEncoder::new(dim, seed).map_err(|e| Failure::Config(format!("--dim: {e}")))?;
            let name = name.unwrap_or_else(|| format!("hash-d{dim}-s{seed}"));
            let m = enc.encode(name, ids, &texts).map_err(Failure::runtime)?;
            store_embeddings(&m, &out).map_err(Failure::runtime)?;
            println!("wrote {} rows of dim {dim} to {}", m.len(), out.display());
        }
        Command::Report { run } => {
            let result = RunResult::load(&run).map_err(Failure::runtime)?;
            let dir = run.parent().unwrap_or(Path::new("."));
            for f in write_reports(&result, dir).map_err(Failure::runtime)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Demo { out } => {
            let config = write_demo(&out).map_err(Failure::runtime)?;
            println!("wrote {}", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("L3ENS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            log::debug!("runtime failure");
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
