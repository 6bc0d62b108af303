//! Flat `key = value` experiment configs with section-prefixed keys.
//!
//! The format is a plain text file, one assignment per line, `#` starting
//! a comment. Every key is validated against the documented key set
//! below; unknown keys are rejected by name. A config plus the code
//! version fully determines a run.
//!
//! ```text
//! # dataset section
//! dataset.source         pendulum | <path>.tckd | <path>.csv
//! dataset.theta0         initial angle in radians        (default 0.8)
//! dataset.omega0         initial angular velocity        (default 0.0)
//! dataset.g              gravitational constant          (default 9.8)
//! dataset.l              pendulum length                 (default 1.0)
//! dataset.dt             sampling interval in seconds    (default 0.1)
//! dataset.n              number of samples               (default 2200)
//! dataset.lift_dim       orthogonal lift dimension, 0 = none (default 64)
//! dataset.snr_db         noise level in dB; absent = clean
//! dataset.seed           seed for lift (and seed+1 for noise) (default 0)
//! dataset.scale          none | minmax                   (default none)
//!
//! split.n_train          training columns                (required)
//!
//! model.n_hidden         hidden layer width              (required)
//! model.n_latent         latent dimension                (required)
//!
//! train.epochs           epochs                          (required)
//! train.batch_size       batch size M                    (required)
//! train.seed             init + batching seed            (required)
//! train.lr               learning rate                   (default 1e-3)
//! train.lr_decay_factor  decay multiplier                (default 0.5)
//! train.lr_decay_epochs  comma list                      (default 30,200,400,700)
//! train.gamma_id         identity loss weight            (default 1.0)
//! train.gamma_fwd        forward loss weight             (default 0.0)
//! train.gamma_bwd        backward loss weight            (default 0.0)
//! train.gamma_con        operator-consistency weight     (default 0.0)
//! train.gamma_tc         temporal-consistency weight     (default 0.0)
//!                        (gamma_pc is accepted as an alias)
//! train.k_max_fwd        labelled look-ahead horizon     (default 10)
//! train.kappa_max_tc     consistency horizon             (default 1)
//! train.e_switch         epoch activating gamma_tc       (default 0)
//! train.adam_beta1/adam_beta2/adam_eps                   (Adam defaults)
//!
//! eval.n_inits           initial conditions to roll out  (default 30)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use tckae::losses::LossWeights;
use tckae::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Pendulum,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScaleMode {
    None,
    MinMax,
}

#[derive(Clone, Debug)]
pub struct DatasetSection {
    pub source: DataSource,
    pub theta0: f64,
    pub omega0: f64,
    pub g: f64,
    pub l: f64,
    pub dt: f64,
    pub n: usize,
    pub lift_dim: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub scale: ScaleMode,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub dataset: DatasetSection,
    pub n_train: usize,
    pub n_hidden: usize,
    pub n_latent: usize,
    pub train: TrainConfig,
    pub n_inits: usize,
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let map = parse_flat(&text, path)?;
        Self::from_map(map, path)
    }

    /// Builds a config from an already-parsed key map; used by the grid
    /// runner to apply per-point overrides before validation.
    pub(crate) fn from_map_for_grid(map: BTreeMap<String, String>, path: &Path) -> Result<Self> {
        Self::from_map(map, path)
    }

    fn from_map(mut map: BTreeMap<String, String>, path: &Path) -> Result<Self> {
        let mut take = |key: &str| map.remove(key);

        let name = take("run.name");

        let source = match take("dataset.source") {
            Some(s) if s == "pendulum" => DataSource::Pendulum,
            Some(s) => DataSource::File(PathBuf::from(s)),
            None => bail!("{}: missing required key dataset.source", path.display()),
        };
        let dataset = DatasetSection {
            source,
            theta0: parse_or(&mut take, "dataset.theta0", 0.8)?,
            omega0: parse_or(&mut take, "dataset.omega0", 0.0)?,
            g: parse_or(&mut take, "dataset.g", 9.8)?,
            l: parse_or(&mut take, "dataset.l", 1.0)?,
            dt: parse_or(&mut take, "dataset.dt", 0.1)?,
            n: parse_or(&mut take, "dataset.n", 2200)?,
            lift_dim: parse_or(&mut take, "dataset.lift_dim", 64)?,
            snr_db: parse_opt(&mut take, "dataset.snr_db")?,
            seed: parse_or(&mut take, "dataset.seed", 0)?,
            scale: match take("dataset.scale").as_deref() {
                None | Some("none") => ScaleMode::None,
                Some("minmax") => ScaleMode::MinMax,
                Some(other) => bail!("dataset.scale must be none or minmax, got '{other}'"),
            },
        };

        let n_train = parse_req(&mut take, "split.n_train", path)?;
        let n_hidden = parse_req(&mut take, "model.n_hidden", path)?;
        let n_latent = parse_req(&mut take, "model.n_latent", path)?;

        let gamma_tc = match (take("train.gamma_tc"), take("train.gamma_pc")) {
            (Some(a), None) => parse_value("train.gamma_tc", &a)?,
            (None, Some(b)) => parse_value("train.gamma_pc", &b)?,
            (Some(_), Some(_)) => {
                bail!("train.gamma_tc and its alias train.gamma_pc are both set; use one")
            }
            (None, None) => 0.0,
        };
        let weights = LossWeights {
            gamma_id: parse_or(&mut take, "train.gamma_id", 1.0)?,
            gamma_fwd: parse_or(&mut take, "train.gamma_fwd", 0.0)?,
            gamma_bwd: parse_or(&mut take, "train.gamma_bwd", 0.0)?,
            gamma_con: parse_or(&mut take, "train.gamma_con", 0.0)?,
            gamma_tc,
            k_max_fwd: parse_or(&mut take, "train.k_max_fwd", 10)?,
            kappa_max_tc: parse_or(&mut take, "train.kappa_max_tc", 1)?,
        };
        let train = TrainConfig {
            epochs: parse_req(&mut take, "train.epochs", path)?,
            batch_size: parse_req(&mut take, "train.batch_size", path)?,
            lr: parse_or(&mut take, "train.lr", 1e-3)?,
            lr_decay_factor: parse_or(&mut take, "train.lr_decay_factor", 0.5)?,
            lr_decay_epochs: match take("train.lr_decay_epochs") {
                Some(s) => parse_list("train.lr_decay_epochs", &s)?,
                None => vec![30, 200, 400, 700],
            },
            weights,
            e_switch: parse_or(&mut take, "train.e_switch", 0)?,
            seed: parse_req(&mut take, "train.seed", path)?,
            adam_beta1: parse_or(&mut take, "train.adam_beta1", 0.9)?,
            adam_beta2: parse_or(&mut take, "train.adam_beta2", 0.999)?,
            adam_eps: parse_or(&mut take, "train.adam_eps", 1e-8)?,
        };

        let n_inits = parse_or(&mut take, "eval.n_inits", 30)?;

        if let Some(unknown) = map.keys().next() {
            bail!(
                "{}: unknown config key '{}' (see the documented key set)",
                path.display(),
                unknown
            );
        }

        let cfg = ExperimentConfig {
            name,
            dataset,
            n_train,
            n_hidden,
            n_latent,
            train,
            n_inits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| anyhow!("invalid train section: {e}"))?;
        if self.dataset.dt <= 0.0 {
            bail!("dataset.dt must be positive");
        }
        if self.n_train == 0 {
            bail!("split.n_train must be >= 1");
        }
        if self.n_hidden == 0 || self.n_latent == 0 {
            bail!("model dimensions must be >= 1");
        }
        if self.n_inits == 0 {
            bail!("eval.n_inits must be >= 1");
        }
        Ok(())
    }

    /// Run name: explicit `run.name`, else the config file stem.
    pub fn run_name(&self, config_path: &Path) -> String {
        self.name.clone().unwrap_or_else(|| {
            config_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        })
    }
}

/// Parses the flat `key = value` format shared by configs and grid specs.
pub fn parse_flat(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "{}: line {}: expected 'key = value', got '{}'",
                path.display(),
                lineno + 1,
                line
            );
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            bail!("{}: duplicate key '{}'", path.display(), key);
        }
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| anyhow!("config key {key}: cannot parse '{raw}'"))
}

fn parse_or<T: std::str::FromStr>(
    take: &mut impl FnMut(&str) -> Option<String>,
    key: &str,
    default: T,
) -> Result<T> {
    match take(key) {
        Some(raw) => parse_value(key, &raw),
        None => Ok(default),
    }
}

fn parse_opt<T: std::str::FromStr>(
    take: &mut impl FnMut(&str) -> Option<String>,
    key: &str,
) -> Result<Option<T>> {
    match take(key) {
        Some(raw) => Ok(Some(parse_value(key, &raw)?)),
        None => Ok(None),
    }
}

fn parse_req<T: std::str::FromStr>(
    take: &mut impl FnMut(&str) -> Option<String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    match take(key) {
        Some(raw) => parse_value(key, &raw),
        None => bail!("{}: missing required key {}", path.display(), key),
    }
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|f| parse_value(key, f.trim()))
        .collect()
}
