//! Mini-batch Adam training with stepped learning-rate decay and delayed
//! activation of the temporal-consistency weight.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::losses::{loss_total_taped, Batch, LossWeights};
use crate::matrix::Matrix;
use crate::model::{save_checkpoint, Activation, KoopmanAutoencoder};
use crate::tape::Tape;

/// Everything that determines a training run besides the data and the
/// initial model.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Batch size M.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs at which the learning rate is multiplied by the decay
    /// factor; must be strictly increasing.
    pub lr_decay_epochs: Vec<usize>,
    pub weights: LossWeights,
    /// Epoch from which the configured `gamma_tc` applies; before it the
    /// temporal-consistency term is forced to zero and never evaluated.
    pub e_switch: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "lr_decay_epochs must be strictly increasing".into(),
            ));
        }
        if self.e_switch > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "e_switch ({}) must not exceed the epoch count ({})",
                self.e_switch, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// One completed epoch: mean loss terms over its batches. Terms that were
/// structurally skipped are recorded as zero.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_id: f64,
    pub loss_fwd: f64,
    pub loss_bwd: f64,
    pub loss_con: f64,
    pub loss_tc: f64,
    pub loss_total: f64,
    pub seconds: f64,
}

/// Per-epoch training history plus instrumentation.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Number of batches on which the temporal-consistency loss was
    /// actually evaluated; stays zero before the switch epoch.
    pub tc_eval_count: u64,
}

impl TrainLog {
    /// Writes the log as CSV with one row per epoch.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "epoch,lr,loss_id,loss_fwd,loss_bwd,loss_con,loss_tc,loss_total,seconds\n",
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.lr,
                r.loss_id,
                r.loss_fwd,
                r.loss_bwd,
                r.loss_con,
                r.loss_tc,
                r.loss_total,
                r.seconds
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Stepped decay: the base rate times `factor^(number of schedule
/// entries <= epoch)`. Non-increasing in the epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr * cfg.lr_decay_factor.powi(drops as i32)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined value.
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// All contiguous windows of `m + horizon` training columns, visited in a
/// seeded per-epoch shuffle of their start indices.
pub fn make_batches(
    split: &SplitDataset,
    m: usize,
    horizon: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    let n_train = split.n_train();
    let window = m + horizon;
    if m == 0 || n_train < window {
        let max_m = n_train.saturating_sub(horizon);
        return Err(Error::TrainSetTooSmall {
            n_train,
            window,
            max_m,
        });
    }
    let mut starts: Vec<usize> = (0..=n_train - window).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64 + 1));
    starts.shuffle(&mut rng);
    starts
        .into_iter()
        .map(|s| Batch::new(split.train.columns_range(s, window)?, m, s))
        .collect()
}

/// Adam first/second moments and the step counter, aligned with the
/// model's canonical parameter order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Matrix]) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
            v: params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidConfig(format!(
            "adam_step: {} parameters, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params
        .iter()
        .zip(grads)
        .zip(state.m.iter().zip(&state.v))
    {
        if (p.rows(), p.cols()) != (g.rows(), g.cols())
            || (p.rows(), p.cols()) != (m.rows(), m.cols())
            || (p.rows(), p.cols()) != (v.rows(), v.cols())
        {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                exp_rows: p.rows(),
                exp_cols: p.cols(),
                rows: g.rows(),
                cols: g.cols(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for (((pv, &gv), mv), vv) in pd
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Trains a model on the training split: one Adam step per contiguous
/// window, stepped learning-rate decay, and the configured `gamma_tc`
/// applied only from the switch epoch onward. Checkpoints are written
/// every 100 epochs and at the end when a directory is given.
///
/// The run is fully determined by (data, config, seed); a non-finite
/// total loss aborts with the offending epoch and batch origin.
pub fn train(
    mut model: KoopmanAutoencoder,
    split: &SplitDataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(KoopmanAutoencoder, TrainLog)> {
    cfg.validate()?;
    if model.activation == Activation::Linear {
        return Err(Error::InvalidConfig(
            "the linear-activation mode is a diagnostic for linear systems and cannot be trained"
                .into(),
        ));
    }
    // The window only needs to reach the labelled look-ahead horizon;
    // the temporal-consistency term reads nothing past the M samples.
    let horizon = if cfg.weights.gamma_fwd > 0.0 || cfg.weights.gamma_bwd > 0.0 {
        cfg.weights.k_max_fwd
    } else {
        0
    };
    // Surface infeasible batch geometry before the first epoch.
    make_batches(split, cfg.batch_size, horizon, cfg.seed, 0)?;

    let mut adam = AdamState::new(&model.params());
    let mut log = TrainLog::default();
    let mut tape = Tape::new();

    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let lr = lr_at_epoch(cfg, epoch);
        let mut weights = cfg.weights;
        if epoch < cfg.e_switch {
            weights.gamma_tc = 0.0;
        }
        let batches = make_batches(split, cfg.batch_size, horizon, cfg.seed, epoch)?;
        let n_batches = batches.len() as f64;
        let mut sums = [0.0f64; 6];

        for batch in &batches {
            tape.clear();
            let tm = model.stage(&mut tape);
            let (total, bd) = loss_total_taped(&mut tape, &tm, batch, &weights)?;
            if !bd.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    origin: batch.origin(),
                    value: bd.total,
                });
            }
            if bd.tc.is_some() {
                log.tc_eval_count += 1;
            }
            let grads = tape.grad(total, &tm.vars())?;
            let mut params = model.params_mut();
            adam_step(
                &mut params,
                &grads,
                &mut adam,
                lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )?;
            sums[0] += bd.id.unwrap_or(0.0);
            sums[1] += bd.fwd.unwrap_or(0.0);
            sums[2] += bd.bwd.unwrap_or(0.0);
            sums[3] += bd.con.unwrap_or(0.0);
            sums[4] += bd.tc.unwrap_or(0.0);
            sums[5] += bd.total;
        }

        log.epochs.push(EpochRecord {
            epoch,
            lr,
            loss_id: sums[0] / n_batches,
            loss_fwd: sums[1] / n_batches,
            loss_bwd: sums[2] / n_batches,
            loss_con: sums[3] / n_batches,
            loss_tc: sums[4] / n_batches,
            loss_total: sums[5] / n_batches,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });

        if let Some(dir) = checkpoint_dir {
            if (epoch + 1) % 100 == 0 {
                save_checkpoint(&model, &dir.join(format!("ckpt-{:05}.tckm", epoch + 1)))?;
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&model, &dir.join("final.tckm"))?;
    }
    Ok((model, log))
}
