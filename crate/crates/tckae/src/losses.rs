//! The five training loss terms and their weighted total.
//!
//! All data losses use squared 2-norms; the forward/backward consistency
//! penalty on the latent operators uses unsquared Frobenius norms of
//! truncated products. Terms whose weight is zero are skipped entirely:
//! they are never recorded on the tape, so a run without backward terms
//! never touches the backward operator.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{KoopmanAutoencoder, TapedModel};
use crate::tape::{Tape, Var};

/// Weights of the total loss plus the look-ahead horizons: `k_max_fwd`
/// bounds the labelled forward/backward losses, `kappa_max_tc` bounds the
/// label-free temporal-consistency loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma_id: f64,
    pub gamma_fwd: f64,
    pub gamma_bwd: f64,
    pub gamma_con: f64,
    pub gamma_tc: f64,
    pub k_max_fwd: usize,
    pub kappa_max_tc: usize,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let gammas = [
            ("gamma_id", self.gamma_id),
            ("gamma_fwd", self.gamma_fwd),
            ("gamma_bwd", self.gamma_bwd),
            ("gamma_con", self.gamma_con),
            ("gamma_tc", self.gamma_tc),
        ];
        for (name, g) in gammas {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and nonnegative, got {g}"
                )));
            }
        }
        if (self.gamma_fwd > 0.0 || self.gamma_bwd > 0.0) && self.k_max_fwd < 1 {
            return Err(Error::InvalidConfig(
                "k_max_fwd must be >= 1 when a labelled look-ahead loss is active".into(),
            ));
        }
        if self.gamma_tc > 0.0 && self.kappa_max_tc < 1 {
            return Err(Error::InvalidConfig(
                "kappa_max_tc must be >= 1 when gamma_tc > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A window of consecutive snapshots. The first `m` columns are the batch
/// samples for the identity/forward/consistency losses; the last `m`
/// columns anchor the backward loss so its labels stay inside the window.
#[derive(Clone, Debug)]
pub struct Batch {
    window: Matrix,
    m: usize,
    origin: usize,
}

impl Batch {
    pub fn new(window: Matrix, m: usize, origin: usize) -> Result<Self> {
        if m == 0 || window.cols() < m {
            return Err(Error::WindowTooShort {
                required: m.max(1),
                actual: window.cols(),
            });
        }
        Ok(Batch { window, m, origin })
    }

    pub fn window(&self) -> &Matrix {
        &self.window
    }

    /// Batch size M.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Start index of the window in its source trajectory.
    pub fn origin(&self) -> usize {
        self.origin
    }

    /// Extra columns past the M batch samples (the label horizon).
    pub fn horizon(&self) -> usize {
        self.window.cols() - self.m
    }
}

/// Values of every computed term; a term skipped because its weight was
/// zero stays `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub id: Option<f64>,
    pub fwd: Option<f64>,
    pub bwd: Option<f64>,
    pub con: Option<f64>,
    pub tc: Option<f64>,
    pub total: f64,
}

/// Reconstruction loss: `(1/2M) sum_n ||decode(encode(x_n)) - x_n||^2`
/// over the first M window columns.
pub fn loss_id_taped(tape: &mut Tape, tm: &TapedModel, batch: &Batch) -> Result<Var> {
    let m = batch.m();
    let x = batch.window().columns_range(0, m)?;
    let xv = tape.leaf(x.clone());
    let z = tm.encode(tape, xv)?;
    let xhat = tm.decode(tape, z)?;
    let e = tape.sq_err(xhat, &x)?;
    Ok(tape.scale(e, 1.0 / (2.0 * m as f64)))
}

/// Multi-step forward loss:
/// `(1/(2 k_m M)) sum_{k=1..k_m} sum_n ||predict(x_n, k) - x_{n+k}||^2`.
pub fn loss_fwd_taped(
    tape: &mut Tape,
    tm: &TapedModel,
    batch: &Batch,
    k_max_fwd: usize,
) -> Result<Var> {
    if k_max_fwd < 1 {
        return Err(Error::InvalidConfig("k_max_fwd must be >= 1".into()));
    }
    let m = batch.m();
    if batch.horizon() < k_max_fwd {
        return Err(Error::WindowTooShort {
            required: m + k_max_fwd,
            actual: batch.window().cols(),
        });
    }
    let x = batch.window().columns_range(0, m)?;
    let xv = tape.leaf(x);
    let mut z = tm.encode(tape, xv)?;
    let mut terms = Vec::with_capacity(k_max_fwd);
    for k in 1..=k_max_fwd {
        z = tape.matmul(tm.k_fwd, z)?;
        let xhat = tm.decode(tape, z)?;
        let labels = batch.window().columns_range(k, m)?;
        terms.push((tape.sq_err(xhat, &labels)?, 1.0));
    }
    let sum = tape.weighted_sum(&terms)?;
    Ok(tape.scale(sum, 1.0 / (2.0 * k_max_fwd as f64 * m as f64)))
}

/// Backward mirror of [`loss_fwd_taped`]: the batch samples are the last
/// M window columns, advanced with the backward operator against the
/// earlier snapshots as labels.
pub fn loss_bwd_taped(
    tape: &mut Tape,
    tm: &TapedModel,
    batch: &Batch,
    k_max_fwd: usize,
) -> Result<Var> {
    if k_max_fwd < 1 {
        return Err(Error::InvalidConfig("k_max_fwd must be >= 1".into()));
    }
    let m = batch.m();
    let h = batch.horizon();
    if h < k_max_fwd {
        return Err(Error::WindowTooShort {
            required: m + k_max_fwd,
            actual: batch.window().cols(),
        });
    }
    let x = batch.window().columns_range(h, m)?;
    let xv = tape.leaf(x);
    let mut z = tm.encode(tape, xv)?;
    let mut terms = Vec::with_capacity(k_max_fwd);
    for k in 1..=k_max_fwd {
        z = tape.matmul(tm.k_bwd, z)?;
        let xhat = tm.decode(tape, z)?;
        let labels = batch.window().columns_range(h - k, m)?;
        terms.push((tape.sq_err(xhat, &labels)?, 1.0));
    }
    let sum = tape.weighted_sum(&terms)?;
    Ok(tape.scale(sum, 1.0 / (2.0 * k_max_fwd as f64 * m as f64)))
}

/// Forward/backward operator consistency over truncated products: for
/// each i, the upper i rows of `K_b` times the left i columns of `K` is
/// compared to `I_i`, and the upper i rows of `K` times the left i
/// columns of `K_b` likewise, both with unsquared Frobenius norms and
/// weight `1/(2i)`. Identical operators that are exact inverses of each
/// other give zero.
pub fn loss_con_taped(tape: &mut Tape, k_fwd: Var, k_bwd: Var) -> Result<Var> {
    let n = {
        let kv = tape.value(k_fwd);
        let bv = tape.value(k_bwd);
        if !kv.is_square() {
            return Err(Error::NotSquare {
                op: "loss_con",
                rows: kv.rows(),
                cols: kv.cols(),
            });
        }
        if kv.rows() != bv.rows() || kv.cols() != bv.cols() {
            return Err(Error::DimMismatch {
                op: "loss_con",
                lhs_rows: kv.rows(),
                lhs_cols: kv.cols(),
                rhs_rows: bv.rows(),
                rhs_cols: bv.cols(),
            });
        }
        kv.rows()
    };
    let mut terms = Vec::with_capacity(2 * n);
    for i in 1..=n {
        let kb_top = tape.top_rows(k_bwd, i)?;
        let k_left = tape.left_cols(k_fwd, i)?;
        let bwd_fwd = tape.matmul(kb_top, k_left)?;
        let f1 = tape.fro_dist_identity(bwd_fwd)?;
        let k_top = tape.top_rows(k_fwd, i)?;
        let kb_left = tape.left_cols(k_bwd, i)?;
        let fwd_bwd = tape.matmul(k_top, kb_left)?;
        let f2 = tape.fro_dist_identity(fwd_bwd)?;
        let w = 1.0 / (2.0 * i as f64);
        terms.push((f1, w));
        terms.push((f2, w));
    }
    tape.weighted_sum(&terms)
}

/// Temporal-consistency loss: predictions of the same target time from
/// different start snapshots are compared in latent space,
///
/// `L_tc = (1/2 kappa_m) sum_kappa (1/(M-1)) sum_p (1/p) sum_q
///         || K^kappa z_{n+p} - K^{kappa+q} z_{n+p-q} ||^2`,
///
/// indices fixed by target time = start time + operator power. Only the
/// first M window columns are read; no labels beyond them exist.
pub fn loss_tc_taped(
    tape: &mut Tape,
    tm: &TapedModel,
    batch: &Batch,
    kappa_max_tc: usize,
) -> Result<Var> {
    let m = batch.m();
    if m < 2 {
        return Err(Error::BatchTooSmall { m });
    }
    if kappa_max_tc < 1 {
        return Err(Error::InvalidConfig("kappa_max_tc must be >= 1".into()));
    }
    let x = batch.window().columns_range(0, m)?;
    let xv = tape.leaf(x);
    let z = tm.encode(tape, xv)?;

    // chain[j-1] holds K^j applied to the whole latent batch.
    let max_pow = kappa_max_tc + m - 1;
    let mut chain = Vec::with_capacity(max_pow);
    let mut cur = z;
    for _ in 0..max_pow {
        cur = tape.matmul(tm.k_fwd, cur)?;
        chain.push(cur);
    }

    let mut terms = Vec::new();
    let norm = 2.0 * kappa_max_tc as f64 * (m - 1) as f64;
    for kappa in 1..=kappa_max_tc {
        for p in 1..m {
            let w = 1.0 / (norm * p as f64);
            for q in 1..=p {
                let short = chain[kappa - 1];
                let long = chain[kappa + q - 1];
                terms.push((tape.sq_col_dist(short, p, long, p - q)?, w));
            }
        }
    }
    tape.weighted_sum(&terms)
}

/// Weighted total of the active terms. Terms with zero weight are never
/// computed; the breakdown records each term that was.
pub fn loss_total_taped(
    tape: &mut Tape,
    tm: &TapedModel,
    batch: &Batch,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    w.validate()?;
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut breakdown = LossBreakdown::default();

    if w.gamma_id > 0.0 {
        let l = loss_id_taped(tape, tm, batch)?;
        breakdown.id = Some(tape.scalar(l));
        terms.push((l, w.gamma_id));
    }
    if w.gamma_fwd > 0.0 {
        let l = loss_fwd_taped(tape, tm, batch, w.k_max_fwd)?;
        breakdown.fwd = Some(tape.scalar(l));
        terms.push((l, w.gamma_fwd));
    }
    if w.gamma_bwd > 0.0 {
        let l = loss_bwd_taped(tape, tm, batch, w.k_max_fwd)?;
        breakdown.bwd = Some(tape.scalar(l));
        terms.push((l, w.gamma_bwd));
    }
    if w.gamma_con > 0.0 {
        let l = loss_con_taped(tape, tm.k_fwd, tm.k_bwd)?;
        breakdown.con = Some(tape.scalar(l));
        terms.push((l, w.gamma_con));
    }
    if w.gamma_tc > 0.0 {
        let l = loss_tc_taped(tape, tm, batch, w.kappa_max_tc)?;
        breakdown.tc = Some(tape.scalar(l));
        terms.push((l, w.gamma_tc));
    }

    let total = if terms.is_empty() {
        tape.leaf(Matrix::col_vec(&[0.0]))
    } else {
        tape.weighted_sum(&terms)?
    };
    breakdown.total = tape.scalar(total);
    Ok((total, breakdown))
}

fn with_fresh_tape<T>(
    model: &KoopmanAutoencoder,
    f: impl FnOnce(&mut Tape, &TapedModel) -> Result<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let tm = model.stage(&mut tape);
    f(&mut tape, &tm)
}

/// Value of the reconstruction loss for a model and batch.
pub fn loss_id(model: &KoopmanAutoencoder, batch: &Batch) -> Result<f64> {
    with_fresh_tape(model, |tape, tm| {
        let l = loss_id_taped(tape, tm, batch)?;
        Ok(tape.scalar(l))
    })
}

pub fn loss_fwd(model: &KoopmanAutoencoder, batch: &Batch, k_max_fwd: usize) -> Result<f64> {
    with_fresh_tape(model, |tape, tm| {
        let l = loss_fwd_taped(tape, tm, batch, k_max_fwd)?;
        Ok(tape.scalar(l))
    })
}

pub fn loss_bwd(model: &KoopmanAutoencoder, batch: &Batch, k_max_fwd: usize) -> Result<f64> {
    with_fresh_tape(model, |tape, tm| {
        let l = loss_bwd_taped(tape, tm, batch, k_max_fwd)?;
        Ok(tape.scalar(l))
    })
}

/// Value of the operator-consistency loss for a pair of latent operators.
pub fn loss_con(k_fwd: &Matrix, k_bwd: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let kf = tape.leaf(k_fwd.clone());
    let kb = tape.leaf(k_bwd.clone());
    let l = loss_con_taped(&mut tape, kf, kb)?;
    Ok(tape.scalar(l))
}

pub fn loss_tc(model: &KoopmanAutoencoder, batch: &Batch, kappa_max_tc: usize) -> Result<f64> {
    with_fresh_tape(model, |tape, tm| {
        let l = loss_tc_taped(tape, tm, batch, kappa_max_tc)?;
        Ok(tape.scalar(l))
    })
}

/// Values of the weighted total and every computed term.
pub fn loss_total(
    model: &KoopmanAutoencoder,
    batch: &Batch,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    with_fresh_tape(model, |tape, tm| {
        let (_, breakdown) = loss_total_taped(tape, tm, batch, w)?;
        Ok(breakdown)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::mat_pow_apply;
    use crate::model::{init_model, Activation, Architecture};

    /// Linear-activation model whose encoder and decoder are exact
    /// identities, with the given latent operator.
    fn identity_model(dim: usize, k: Matrix) -> KoopmanAutoencoder {
        let mut model = init_model(Architecture::new(dim, dim, dim).unwrap(), 0);
        model.activation = Activation::Linear;
        for layer in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
            layer.weight = Matrix::identity(dim);
            layer.bias = Matrix::zeros(dim, 1);
        }
        model.k_bwd = Matrix::identity(dim);
        model.k_fwd = k;
        model
    }

    fn zeroed_model(arch: Architecture) -> KoopmanAutoencoder {
        let mut model = init_model(arch, 0);
        for p in model.params_mut() {
            *p = Matrix::zeros(p.rows(), p.cols());
        }
        model
    }

    fn rotation(theta: f64) -> Matrix {
        Matrix::from_rows(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]])
    }

    fn rotation_window(theta: f64, x0: &[f64], cols: usize) -> Matrix {
        let r = rotation(theta);
        let mut window = Matrix::zeros(2, cols);
        let mut cur = Matrix::col_vec(x0);
        for j in 0..cols {
            window.col_mut(j).copy_from_slice(cur.col(0));
            cur = r.mat_mul(&cur).unwrap();
        }
        window
    }

    #[test]
    fn loss_id_zero_for_perfect_reconstruction() {
        let model = identity_model(2, Matrix::identity(2));
        let window = rotation_window(0.3, &[1.0, 0.5], 4);
        let batch = Batch::new(window, 4, 0).unwrap();
        assert_eq!(loss_id(&model, &batch).unwrap(), 0.0);
    }

    #[test]
    fn loss_id_hand_case() {
        // Zero model reconstructs everything to zero: residual (1,0).
        let model = zeroed_model(Architecture::new(2, 2, 2).unwrap());
        let batch = Batch::new(Matrix::col_vec(&[1.0, 0.0]), 1, 0).unwrap();
        assert_eq!(loss_id(&model, &batch).unwrap(), 0.5);
    }

    #[test]
    fn loss_id_quadratic_homogeneity() {
        let model = zeroed_model(Architecture::new(3, 2, 2).unwrap());
        let window = Matrix::from_fn(3, 5, |i, j| 0.1 * (i + 1) as f64 - 0.05 * j as f64);
        let batch = Batch::new(window.clone(), 5, 0).unwrap();
        let base = loss_id(&model, &batch).unwrap();
        let doubled = Batch::new(window.scale(2.0), 5, 0).unwrap();
        let quad = loss_id(&model, &doubled).unwrap();
        assert!((quad - 4.0 * base).abs() < 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn loss_fwd_zero_on_self_generated_data() {
        let r = rotation(0.4);
        let model = identity_model(2, r);
        let window = rotation_window(0.4, &[0.9, -0.2], 8);
        let batch = Batch::new(window, 4, 0).unwrap();
        assert_eq!(loss_fwd(&model, &batch, 4).unwrap(), 0.0);
    }

    #[test]
    fn loss_fwd_hand_case() {
        // Zero model predicts zero; single label of norm 0.2 at k=1.
        let model = zeroed_model(Architecture::new(2, 2, 2).unwrap());
        let mut window = Matrix::zeros(2, 2);
        window.set(0, 1, 0.2);
        let batch = Batch::new(window, 1, 0).unwrap();
        let l = loss_fwd(&model, &batch, 1).unwrap();
        assert!((l - 0.02).abs() < 1e-15);
    }

    #[test]
    fn loss_fwd_window_too_short_reports_required_length() {
        let model = identity_model(2, Matrix::identity(2));
        let batch = Batch::new(Matrix::zeros(2, 5), 4, 0).unwrap();
        match loss_fwd(&model, &batch, 3) {
            Err(Error::WindowTooShort { required, actual }) => {
                assert_eq!(required, 7);
                assert_eq!(actual, 5);
            }
            other => panic!("expected WindowTooShort, got {other:?}"),
        }
    }

    #[test]
    fn loss_bwd_zero_on_self_generated_data() {
        let theta = 0.4;
        let mut model = identity_model(2, rotation(theta));
        model.k_bwd = rotation(-theta);
        let window = rotation_window(theta, &[0.9, -0.2], 8);
        let batch = Batch::new(window, 4, 0).unwrap();
        // Backward rollout from the last columns reproduces earlier
        // snapshots up to the round trip through the rotation.
        let l = loss_bwd(&model, &batch, 4).unwrap();
        assert!(l < 1e-28, "backward loss {l}");
    }

    #[test]
    fn loss_bwd_hand_case() {
        let model = zeroed_model(Architecture::new(2, 2, 2).unwrap());
        let mut window = Matrix::zeros(2, 2);
        window.set(0, 0, 0.2); // label at index h - k = 0
        let batch = Batch::new(window, 1, 0).unwrap();
        let l = loss_bwd(&model, &batch, 1).unwrap();
        assert!((l - 0.02).abs() < 1e-15);
    }

    #[test]
    fn loss_con_identity_pair_is_zero() {
        assert_eq!(loss_con(&Matrix::identity(3), &Matrix::identity(3)).unwrap(), 0.0);
    }

    #[test]
    fn loss_con_exact_inverse_scalars() {
        let l = loss_con(&Matrix::col_vec(&[2.0]), &Matrix::col_vec(&[0.5])).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn loss_con_hand_case() {
        let l = loss_con(&Matrix::col_vec(&[2.0]), &Matrix::col_vec(&[1.0])).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_tc_hand_case_is_exact() {
        // Latent dim 1, K = [2], M = 2, kappa_m = 1, encodings (1, 3):
        // the single (p=1, q=1) term is (2*3 - 4*1)^2 = 4, L_1 = 4, L_tc = 2.
        let model = identity_model(1, Matrix::col_vec(&[2.0]));
        let window = Matrix::from_rows(&[&[1.0, 3.0]]);
        let batch = Batch::new(window, 2, 0).unwrap();
        assert_eq!(loss_tc(&model, &batch, 1).unwrap(), 2.0);
    }

    #[test]
    fn loss_tc_rejects_single_sample_batches() {
        let model = identity_model(1, Matrix::col_vec(&[2.0]));
        let batch = Batch::new(Matrix::from_rows(&[&[1.0]]), 1, 0).unwrap();
        assert!(matches!(
            loss_tc(&model, &batch, 1),
            Err(Error::BatchTooSmall { m: 1 })
        ));
    }

    #[test]
    fn loss_tc_ignores_columns_beyond_the_batch() {
        let model = identity_model(2, rotation(0.7));
        let mut window = rotation_window(0.7, &[0.3, 0.8], 6);
        let batch = Batch::new(window.clone(), 4, 0).unwrap();
        let base = loss_tc(&model, &batch, 3).unwrap();
        // Corrupt the two extra label columns; the value must not move.
        window.set(0, 4, 99.0);
        window.set(1, 5, -99.0);
        let corrupted = Batch::new(window, 4, 0).unwrap();
        assert_eq!(loss_tc(&model, &corrupted, 3).unwrap(), base);
    }

    #[test]
    fn loss_tc_vanishes_for_consistent_linear_system() {
        let theta = 0.25;
        let model = identity_model(2, rotation(theta));
        let window = rotation_window(theta, &[1.0, 0.0], 8);
        let batch = Batch::new(window, 8, 0).unwrap();
        let l = loss_tc(&model, &batch, 5).unwrap();
        assert!(l < 1e-10, "consistent system leaked {l}");
    }

    #[test]
    fn loss_tc_origin_shift_invariance_on_consistent_model() {
        let theta = 0.25;
        let model = identity_model(2, rotation(theta));
        let full = rotation_window(theta, &[1.0, 0.0], 16);
        let a = Batch::new(full.columns_range(0, 6).unwrap(), 6, 0).unwrap();
        let b = Batch::new(full.columns_range(5, 6).unwrap(), 6, 5).unwrap();
        let la = loss_tc(&model, &a, 4).unwrap();
        let lb = loss_tc(&model, &b, 4).unwrap();
        assert!(la < 1e-12 && lb < 1e-12 && (la - lb).abs() < 1e-12);
    }

    #[test]
    fn loss_total_all_zero_weights() {
        let model = identity_model(2, Matrix::identity(2));
        let batch = Batch::new(Matrix::zeros(2, 4), 4, 0).unwrap();
        let w = LossWeights {
            gamma_id: 0.0,
            gamma_fwd: 0.0,
            gamma_bwd: 0.0,
            gamma_con: 0.0,
            gamma_tc: 0.0,
            k_max_fwd: 1,
            kappa_max_tc: 1,
        };
        let bd = loss_total(&model, &batch, &w).unwrap();
        assert_eq!(bd, LossBreakdown::default());
    }

    #[test]
    fn loss_total_identity_only_equals_loss_id() {
        let model = init_model(Architecture::new(3, 4, 2).unwrap(), 9);
        let window = Matrix::from_fn(3, 6, |i, j| ((i * 7 + j) as f64).sin() * 0.5);
        let batch = Batch::new(window, 6, 0).unwrap();
        let w = LossWeights {
            gamma_id: 1.0,
            gamma_fwd: 0.0,
            gamma_bwd: 0.0,
            gamma_con: 0.0,
            gamma_tc: 0.0,
            k_max_fwd: 1,
            kappa_max_tc: 1,
        };
        let bd = loss_total(&model, &batch, &w).unwrap();
        assert_eq!(bd.total, loss_id(&model, &batch).unwrap());
        assert!(bd.fwd.is_none() && bd.bwd.is_none() && bd.con.is_none() && bd.tc.is_none());
    }

    #[test]
    fn loss_total_matches_independent_terms() {
        // The published pendulum weight row: the weighted sum must equal
        // an independent evaluation of every term.
        let model = init_model(Architecture::new(4, 6, 3).unwrap(), 33);
        let window = Matrix::from_fn(4, 10, |i, j| ((i + 2 * j) as f64 * 0.37).cos() * 0.6);
        let batch = Batch::new(window, 6, 0).unwrap();
        let w = LossWeights {
            gamma_id: 1.0,
            gamma_fwd: 0.5,
            gamma_bwd: 1e-2,
            gamma_con: 1e-1,
            gamma_tc: 1e-1,
            k_max_fwd: 4,
            kappa_max_tc: 3,
        };
        let bd = loss_total(&model, &batch, &w).unwrap();
        let expected = 1.0 * loss_id(&model, &batch).unwrap()
            + 0.5 * loss_fwd(&model, &batch, 4).unwrap()
            + 1e-2 * loss_bwd(&model, &batch, 4).unwrap()
            + 1e-1 * loss_con(&model.k_fwd, &model.k_bwd).unwrap()
            + 1e-1 * loss_tc(&model, &batch, 3).unwrap();
        assert!((bd.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert_eq!(bd.id.unwrap(), loss_id(&model, &batch).unwrap());
    }

    #[test]
    fn losses_are_nonnegative_and_zero_only_without_residuals() {
        let model = init_model(Architecture::new(3, 5, 2).unwrap(), 4);
        let window = Matrix::from_fn(3, 8, |i, j| ((i * 3 + j) as f64 * 0.21).sin());
        let batch = Batch::new(window, 5, 0).unwrap();
        assert!(loss_id(&model, &batch).unwrap() > 0.0);
        assert!(loss_fwd(&model, &batch, 3).unwrap() > 0.0);
        assert!(loss_bwd(&model, &batch, 3).unwrap() > 0.0);
        assert!(loss_tc(&model, &batch, 3).unwrap() > 0.0);
        assert!(loss_con(&model.k_fwd, &model.k_bwd).unwrap() > 0.0);
    }

    #[test]
    fn backward_rollout_follows_inverse_dynamics() {
        // Sanity on the index mirror: with K_b the exact inverse step,
        // backward predictions from the window tail hit earlier columns.
        let theta = 0.3;
        let mut model = identity_model(2, rotation(theta));
        model.k_bwd = rotation(-theta);
        let window = rotation_window(theta, &[0.5, 0.1], 6);
        let batch = Batch::new(window.clone(), 2, 0).unwrap();
        let h = batch.horizon();
        let tail = window.column(h).unwrap();
        let back = mat_pow_apply(&model.k_bwd, &tail, 2).unwrap();
        let expected = window.column(h - 2).unwrap();
        assert!(back.sub(&expected).unwrap().max_abs() < 1e-12);
        assert!(loss_bwd(&model, &batch, h).unwrap() < 1e-24);
    }
}
