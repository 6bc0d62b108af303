//! Brute-force reference implementations of the loss terms.
//!
//! These recompute every quantity independently: snapshots are encoded one
//! column at a time, operator powers are rebuilt from scratch for every
//! term, and sums follow the defining formulas literally. They share no
//! code path with the taped losses and exist so the verification suites
//! can cross-check the production implementations against something slow
//! and obviously correct.

use crate::error::{Error, Result};
use crate::losses::Batch;
use crate::matrix::{mat_pow_apply, Matrix};
use crate::model::{Direction, KoopmanAutoencoder};

/// Direct summation of the reconstruction loss.
pub fn loss_id_direct(model: &KoopmanAutoencoder, batch: &Batch) -> Result<f64> {
    let m = batch.m();
    let mut acc = 0.0;
    for n in 0..m {
        let x = batch.window().column(n)?;
        let xhat = model.decode(&model.encode(&x)?)?;
        acc += xhat.sub(&x)?.sq_frobenius_norm();
    }
    Ok(acc / (2.0 * m as f64))
}

/// Direct summation of the forward loss, one prediction per (k, n) pair.
pub fn loss_fwd_direct(model: &KoopmanAutoencoder, batch: &Batch, k_max_fwd: usize) -> Result<f64> {
    let m = batch.m();
    if batch.horizon() < k_max_fwd {
        return Err(Error::WindowTooShort {
            required: m + k_max_fwd,
            actual: batch.window().cols(),
        });
    }
    let mut acc = 0.0;
    for k in 1..=k_max_fwd {
        for n in 0..m {
            let x = batch.window().column(n)?;
            let pred = model.predict(&x, k, Direction::Forward)?;
            let label = batch.window().column(n + k)?;
            acc += pred.sub(&label)?.sq_frobenius_norm();
        }
    }
    Ok(acc / (2.0 * k_max_fwd as f64 * m as f64))
}

/// Direct summation of the backward loss from the window tail.
pub fn loss_bwd_direct(model: &KoopmanAutoencoder, batch: &Batch, k_max_fwd: usize) -> Result<f64> {
    let m = batch.m();
    let h = batch.horizon();
    if h < k_max_fwd {
        return Err(Error::WindowTooShort {
            required: m + k_max_fwd,
            actual: batch.window().cols(),
        });
    }
    let mut acc = 0.0;
    for k in 1..=k_max_fwd {
        for n in 0..m {
            let x = batch.window().column(h + n)?;
            let pred = model.predict(&x, k, Direction::Backward)?;
            let label = batch.window().column(h + n - k)?;
            acc += pred.sub(&label)?.sq_frobenius_norm();
        }
    }
    Ok(acc / (2.0 * k_max_fwd as f64 * m as f64))
}

fn fro_dist_identity(m: &Matrix) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            let d = m.get(i, j) - if i == j { 1.0 } else { 0.0 };
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Direct evaluation of the operator-consistency loss from explicitly
/// copied submatrices.
pub fn loss_con_direct(k_fwd: &Matrix, k_bwd: &Matrix) -> Result<f64> {
    if !k_fwd.is_square() || k_fwd.rows() != k_bwd.rows() || k_fwd.cols() != k_bwd.cols() {
        return Err(Error::DimMismatch {
            op: "loss_con_direct",
            lhs_rows: k_fwd.rows(),
            lhs_cols: k_fwd.cols(),
            rhs_rows: k_bwd.rows(),
            rhs_cols: k_bwd.cols(),
        });
    }
    let n = k_fwd.rows();
    let mut acc = 0.0;
    for i in 1..=n {
        let kb_top = Matrix::from_fn(i, n, |r, c| k_bwd.get(r, c));
        let k_left = Matrix::from_fn(n, i, |r, c| k_fwd.get(r, c));
        let k_top = Matrix::from_fn(i, n, |r, c| k_fwd.get(r, c));
        let kb_left = Matrix::from_fn(n, i, |r, c| k_bwd.get(r, c));
        let bwd_fwd = kb_top.mat_mul(&k_left)?;
        let fwd_bwd = k_top.mat_mul(&kb_left)?;
        acc += (fro_dist_identity(&bwd_fwd) + fro_dist_identity(&fwd_bwd)) / (2.0 * i as f64);
    }
    Ok(acc)
}

/// Direct summation of the temporal-consistency loss. Every operator
/// power is applied from scratch per term; nothing is shared with the
/// incremental chain the production loss records.
pub fn loss_tc_direct(model: &KoopmanAutoencoder, batch: &Batch, kappa_max_tc: usize) -> Result<f64> {
    let m = batch.m();
    if m < 2 {
        return Err(Error::BatchTooSmall { m });
    }
    let mut encodings = Vec::with_capacity(m);
    for i in 0..m {
        encodings.push(model.encode(&batch.window().column(i)?)?);
    }
    let mut acc = 0.0;
    for kappa in 1..=kappa_max_tc {
        let mut l_kappa = 0.0;
        for p in 1..m {
            let mut inner = 0.0;
            for q in 1..=p {
                let a = mat_pow_apply(&model.k_fwd, &encodings[p], kappa)?;
                let b = mat_pow_apply(&model.k_fwd, &encodings[p - q], kappa + q)?;
                inner += a.sub(&b)?.sq_frobenius_norm();
            }
            l_kappa += inner / p as f64;
        }
        acc += l_kappa / (m - 1) as f64;
    }
    Ok(acc / (2.0 * kappa_max_tc as f64))
}
