use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use topoloc::diffmath::Checkpoint;
use topoloc::localizer::LocalizerModel;
use topoloc::navigation::save_trial_log;
use topoloc::pipeline::{eval_loc, eval_nav, nav_csv, train_method, Method, RunConfig, TrainDomain};
use topoloc::simworld::{generate_world, Domain, Recording, WorldSpec};
use topoloc::topo_graph::{build_map_real, build_map_sim};
use topoloc::trainer::write_history_csv;

#[derive(Parser)]
#[command(name = "topoloc", about = "Localization and navigation on topological maps")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the world layout for a seed.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Record observations along a trajectory through a world.
    Collect {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value = "sim")]
        domain: String,
        /// Target trajectory deviation [m].
        #[arg(long, default_value_t = 0.0)]
        deviation: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a map from a recording: pose-tagged for sim, strided for real-like.
    BuildMap {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a localizer; writes model.json, history.csv and meta.json into --out.
    Train {
        #[arg(long, default_value = "ours")]
        method: Method,
        /// sim or mixed
        #[arg(long, default_value = "mixed")]
        domain: TrainDomain,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localization metrics on the held-out test worlds.
    EvalLoc {
        #[arg(long, default_value = "ours")]
        method: Method,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop navigation trials on the held-out test worlds.
    EvalNav {
        #[arg(long, default_value = "ours")]
        method: Method,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-trial JSON logs.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Merge metric CSVs into one table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "sim" => Ok(Domain::Sim),
        "real_like" => Ok(Domain::RealLike),
        _ => bail!("unknown domain '{s}' (expected sim or real_like)"),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: Option<&Path>, method: Method) -> Result<Option<LocalizerModel>> {
    if method.variant().is_none() {
        return Ok(None);
    }
    let Some(path) = path else {
        bail!("--model is required for method {}", method.name());
    };
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let model = LocalizerModel::from_checkpoint(&ckpt).with_context(|| format!("loading model {}", path.display()))?;
    Ok(Some(model))
}

/// Rows of a metric CSV, skipping `#` comment lines.
fn read_metric_csv(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers().with_context(|| format!("reading {}", path.display()))?.clone();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok((header, rows))
}

fn report(inputs: &[PathBuf]) -> Result<String> {
    let mut out = String::new();
    for path in inputs {
        let (header, rows) = read_metric_csv(path)?;
        out.push_str(&format!("## {}\n\n", path.display()));
        out.push_str(&format!("| {} |\n", header.iter().collect::<Vec<_>>().join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for r in rows {
            out.push_str(&format!("| {} |\n", r.iter().collect::<Vec<_>>().join(" | ")));
        }
        out.push('\n');
    }
    Ok(out)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let run = RunConfig::load_or_default(cli.config.as_deref())?;
    let seed = cli.seed;
    let prov = run.provenance(seed);
    let meta = json!({ "seed": seed, "config_hash": run.hash() });
    match cli.command {
        Command::GenWorld { out } => {
            let spec = WorldSpec {
                seed,
                ..run.benchmark.world.clone()
            };
            generate_world(&spec).context("generating world")?;
            write(&out, &serde_json::to_string_pretty(&spec)?)?;
        }
        Command::Collect {
            world,
            domain,
            deviation,
            out,
        } => {
            let spec = WorldSpec::load(&world).with_context(|| format!("loading world {}", world.display()))?;
            let w = generate_world(&spec).with_context(|| format!("generating world from {}", world.display()))?;
            let bench = topoloc::benchmark::BenchmarkConfig {
                world: spec,
                ..run.benchmark.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rec = bench.recording(&w, deviation, parse_domain(&domain)?, &mut rng)?;
            write(&out, &serde_json::to_string(&rec)?)?;
        }
        Command::BuildMap { recording, out } => {
            let rec = Recording::load(&recording).with_context(|| format!("loading recording {}", recording.display()))?;
            let map = match rec.domain {
                Domain::Sim => build_map_sim(&rec.samples(), &run.benchmark.map),
                Domain::RealLike => build_map_real(&rec.observations, run.benchmark.map.m_stride),
            }
            .with_context(|| format!("building map from {}", recording.display()))?;
            write(&out, &map.to_json(Some(meta)))?;
        }
        Command::Train { method, domain, out } => {
            let (model, outcome) = train_method(&run, method, domain, seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let model_path = out.join("model.json");
            model
                .to_checkpoint()
                .save(&model_path)
                .with_context(|| format!("writing {}", model_path.display()))?;
            let hist = out.join("history.csv");
            write_history_csv(&hist, &outcome.history, Some(&prov))?;
            let info = json!({
                "seed": seed,
                "config_hash": run.hash(),
                "method": method.name(),
                "domain": domain,
                "best_iteration": outcome.best_iteration,
                "best_val_loss": outcome.best_val_loss,
                "iterations": outcome.iterations,
            });
            write(&out.join("meta.json"), &serde_json::to_string_pretty(&info)?)?;
        }
        Command::EvalLoc { method, model, out } => {
            let model = load_model(model.as_deref(), method)?;
            let report = eval_loc(&run, &[(method.name(), method.predictor(model.as_ref())?)])?;
            write(&out, &report.to_csv(Some(&prov)))?;
            print!("{}", report.to_table());
        }
        Command::EvalNav {
            method,
            model,
            out,
            logs,
        } => {
            let model = load_model(model.as_deref(), method)?;
            let (metrics, outcomes) = eval_nav(&run, &method.predictor(model.as_ref())?)?;
            write(&out, &nav_csv(&[(method.name(), metrics)], Some(&prov)))?;
            if let Some(dir) = logs {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for (i, o) in outcomes.iter().enumerate() {
                    save_trial_log(&dir.join(format!("trial_{i:03}.json")), o)?;
                }
            }
            println!(
                "{}: SR {:.3} CR {:.3} TR {:.3} CovR {:.3}",
                method.name(),
                metrics.sr,
                metrics.cr,
                metrics.tr,
                metrics.cov_r
            );
        }
        Command::Report { inputs, out } => {
            let text = report(&inputs)?;
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
