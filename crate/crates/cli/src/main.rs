//! `tckae`: generate datasets, train Koopman autoencoder variants,
//! evaluate long-horizon rollouts, inspect operator spectra, and sweep
//! ablation grids.

mod config;
mod grid;
mod pipeline;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use pipeline::{build_dataset, output_root, run_eval, run_train};
use tckae::data::{load_csv, load_dataset, save_dataset, split};
use tckae::model::load_checkpoint;

#[derive(Parser)]
#[command(
    name = "tckae",
    about = "Temporally consistent Koopman autoencoders for long-horizon forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset from a config and write it as a .tckd file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output root; defaults to $TCKAE_OUT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides dataset.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run name; defaults to the config file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train a model: split, initialize, fit, write checkpoint and log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train on this dataset file instead of generating one.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset file and write a report CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training columns; the rest of the file is the test window.
        #[arg(long)]
        n_train: usize,
        #[arg(long, default_value_t = 30)]
        n_inits: usize,
        /// Sampling interval for CSV data files.
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Print the eigenvalue spectrum of a checkpoint's forward operator.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sampling interval in seconds for physical frequencies.
        #[arg(long)]
        dt: f64,
    },
    /// Run a Cartesian grid of config overrides: one train + eval per
    /// point, aggregated into ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker pool size.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides train.seed in the base config (a seeds axis in the
        /// grid spec still wins).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        name: Option<String>,
    },
}

fn run_dir(
    out: Option<PathBuf>,
    name: Option<String>,
    default_name: String,
    seed_suffix: Option<u64>,
) -> PathBuf {
    let mut run = name.unwrap_or(default_name);
    if let Some(s) = seed_suffix {
        run.push_str(&format!("_s{s}"));
    }
    output_root(out).join(run)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::GenData {
            config,
            out,
            seed,
            name,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.dataset.seed = s;
            }
            let dir = run_dir(out, name, cfg.run_name(&config), seed);
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
            let (ds, _) = build_dataset(&cfg)?;
            let path = dir.join("dataset.tckd");
            save_dataset(&ds, &path)?;
            let noise = match ds.noise_snr_db {
                Some(db) => format!("{db} dB"),
                None => "clean".into(),
            };
            println!(
                "dataset {}: {}x{}, dt={} s, {} -> {}",
                ds.name,
                ds.n_dim(),
                ds.n_tot(),
                ds.dt,
                noise,
                path.display()
            );
        }
        Cmd::Train {
            config,
            data,
            out,
            seed,
            name,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let dir = run_dir(out, name, cfg.run_name(&config), seed);
            let ds = match data {
                Some(path) => match path.extension().and_then(|e| e.to_str()) {
                    Some("csv") => load_csv(&path, cfg.dataset.dt)?,
                    _ => load_dataset(&path)?,
                },
                None => build_dataset(&cfg)?.0,
            };
            let outcome = run_train(&cfg, &ds, &dir)?;
            let final_loss = outcome.log.epochs.last().map(|r| r.loss_total);
            println!(
                "trained {} epochs, final total loss {:?} -> {}",
                outcome.log.epochs.len(),
                final_loss,
                outcome.checkpoint.display()
            );
        }
        Cmd::Eval {
            checkpoint,
            data,
            n_train,
            n_inits,
            dt,
            out,
            name,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = match data.extension().and_then(|e| e.to_str()) {
                Some("csv") => load_csv(&data, dt)?,
                _ => load_dataset(&data)?,
            };
            let s = split(&ds, n_train)?;
            let default_name = checkpoint
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| format!("{}-eval", s.to_string_lossy()))
                .unwrap_or_else(|| "eval".into());
            let dir = run_dir(out, name, default_name, None);
            run_eval(&model, &s, n_inits, &dir)?;
        }
        Cmd::Spectrum { checkpoint, dt } => {
            let model = load_checkpoint(&checkpoint)?;
            let spec = model.spectrum(dt)?;
            println!("mode,magnitude,phase_rad,frequency_hz");
            for (i, ((m, p), f)) in spec
                .magnitudes
                .iter()
                .zip(&spec.phases)
                .zip(&spec.frequencies_hz)
                .enumerate()
            {
                println!("{},{},{},{}", i, m, p, f);
            }
        }
        Cmd::Ablate {
            config,
            grid: grid_path,
            out,
            jobs,
            seed,
            name,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = run_dir(out, name, format!("{}-ablation", cfg.run_name(&config)), seed);
            // A --seed override rewrites the base config seed by passing
            // it through a temp copy of the key map; the grid runner
            // reads the file itself, so apply the override via file.
            let base_path = if let Some(s) = seed {
                let text = std::fs::read_to_string(&config)?;
                let rewritten = rewrite_seed(&text, s);
                let tmp = dir.join("base-config.cfg");
                std::fs::create_dir_all(&dir)?;
                std::fs::write(&tmp, rewritten)?;
                tmp
            } else {
                config.clone()
            };
            let rows = grid::run_grid(&base_path, &grid_path, &dir, jobs)?;
            let ok = rows.iter().filter(|r| r.status == "ok").count();
            println!(
                "ablation grid: {} runs, {} succeeded -> {}",
                rows.len(),
                ok,
                dir.join("ablation.csv").display()
            );
        }
    }
    Ok(())
}

fn rewrite_seed(config_text: &str, seed: u64) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut replaced = false;
    for line in config_text.lines() {
        if line.trim_start().starts_with("train.seed") {
            lines.push(format!("train.seed = {seed}"));
            replaced = true;
        } else {
            lines.push(line.to_string());
        }
    }
    if !replaced {
        lines.push(format!("train.seed = {seed}"));
    }
    lines.join("\n") + "\n"
}
