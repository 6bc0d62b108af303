//! Shared run machinery: dataset construction from a config, training to
//! a checkpoint, and evaluation to a report CSV. Every command routes
//! its work through these so the outputs are identical no matter how a
//! run was launched.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tckae::data::{
    add_noise, load_csv, load_dataset, min_max_scale, orthogonal_lift, simulate_pendulum, split,
    MinMaxScale, SplitDataset, TimeSeriesDataset,
};
use tckae::evaluation::{evaluate, write_report, EvalReport};
use tckae::model::{init_model, Architecture, KoopmanAutoencoder};
use tckae::training::{train, TrainLog};

use crate::config::{DataSource, ExperimentConfig, ScaleMode};

/// Builds the dataset from the config: generate (pendulum) or load a
/// file, then lift, noise, and optional scaling. Returns the scale used,
/// when any, so predictions can be reported in original units.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(TimeSeriesDataset, Option<MinMaxScale>)> {
    let d = &cfg.dataset;
    let mut ds = match &d.source {
        DataSource::Pendulum => {
            let base = simulate_pendulum(d.theta0, d.omega0, d.g, d.l, d.dt, d.n)?;
            if d.lift_dim > 0 {
                let (lifted, _) = orthogonal_lift(&base, d.lift_dim, d.seed)?;
                lifted
            } else {
                base
            }
        }
        DataSource::File(path) => match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => load_csv(path, d.dt)?,
            _ => load_dataset(path)?,
        },
    };
    let scale = match d.scale {
        ScaleMode::None => None,
        ScaleMode::MinMax => {
            let (scaled, s) = min_max_scale(&ds)?;
            ds = scaled;
            Some(s)
        }
    };
    if let Some(snr) = d.snr_db {
        ds = add_noise(&ds, snr, d.seed.wrapping_add(1))?;
    }
    Ok((ds, scale))
}

/// Folds a global min-max rescale into the model's boundary layers, so a
/// model trained in scaled space predicts directly in original units.
/// Both maps are affine, so the composition is exact.
pub fn fold_scale_into_model(mut model: KoopmanAutoencoder, scale: &MinMaxScale) -> KoopmanAutoencoder {
    let span = scale.max - scale.min;
    // Encoder input: x_scaled = (x - min)/span.
    let w1 = &model.encoder[0].weight;
    let shift: Vec<f64> = (0..w1.rows())
        .map(|i| (0..w1.cols()).map(|j| w1.get(i, j)).sum::<f64>() * (scale.min / span))
        .collect();
    model.encoder[0].weight = w1.scale(1.0 / span);
    let b1 = &model.encoder[0].bias;
    model.encoder[0].bias = tckae::Matrix::from_fn(b1.rows(), 1, |i, _| b1.get(i, 0) - shift[i]);
    // Decoder output: x = x_scaled * span + min.
    model.decoder[2].weight = model.decoder[2].weight.scale(span);
    let b3 = &model.decoder[2].bias;
    model.decoder[2].bias = tckae::Matrix::from_fn(b3.rows(), 1, |i, _| b3.get(i, 0) * span + scale.min);
    model
}

pub struct TrainOutcome {
    pub model: KoopmanAutoencoder,
    pub log: TrainLog,
    pub split: SplitDataset,
    pub checkpoint: PathBuf,
}

/// Splits, initializes, trains, and writes `final.tckm` plus
/// `train_log.csv` into the run directory.
pub fn run_train(cfg: &ExperimentConfig, ds: &TimeSeriesDataset, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let s = split(ds, cfg.n_train)?;
    let arch = Architecture::new(ds.n_dim(), cfg.n_hidden, cfg.n_latent)?;
    let model = init_model(arch, cfg.train.seed);
    let (model, log) = train(model, &s, &cfg.train, Some(out_dir))?;
    log.write_csv(&out_dir.join("train_log.csv"))?;
    Ok(TrainOutcome {
        model,
        log,
        split: s,
        checkpoint: out_dir.join("final.tckm"),
    })
}

/// Evaluates a model on a split and writes `report.csv`. Prints the
/// mean(width) pair and the machine-readable summary line.
pub fn run_eval(
    model: &KoopmanAutoencoder,
    s: &SplitDataset,
    n_inits: usize,
    out_dir: &Path,
) -> Result<EvalReport> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    if model.arch.n_in != s.train.rows() {
        bail!(
            "checkpoint expects {}-dimensional states but the dataset has {} rows",
            model.arch.n_in,
            s.train.rows()
        );
    }
    let report = evaluate(model, s, n_inits)?;
    write_report(&report, &out_dir.join("report.csv"))?;
    println!(
        "{:.3} ({:.2})",
        report.mean_error_pct, report.ci90_width_pct
    );
    println!(
        "mean_pct={} width_pct={}",
        report.mean_error_pct, report.ci90_width_pct
    );
    Ok(report)
}

/// Full train + eval pipeline for one config; returns the report.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<EvalReport> {
    let (ds, scale) = build_dataset(cfg)?;
    let outcome = run_train(cfg, &ds, out_dir)?;
    match scale {
        Some(s) => {
            // Evaluate in original units: fold the scale into the model
            // and compare against the unscaled split.
            let unscaled_cfg_split = {
                let mut raw = ds.clone();
                raw.x = s.invert(&ds.x);
                raw.clean_reference = ds.clean_reference.as_ref().map(|c| s.invert(c));
                split(&raw, cfg.n_train)?
            };
            let folded = fold_scale_into_model(outcome.model, &s);
            run_eval(&folded, &unscaled_cfg_split, cfg.n_inits, out_dir)
        }
        None => run_eval(&outcome.model, &outcome.split, cfg.n_inits, out_dir),
    }
}

/// The output root: `--out` when given, else `$TCKAE_OUT`, else `runs`.
pub fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("TCKAE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}
