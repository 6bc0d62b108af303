//! Koopman-invariance properties of the latent space on exactly linear
//! systems, checked with the linear-activation diagnostic mode.
//!
//! Forward direction: an encoder whose span is invariant under the
//! dynamics admits an operator K with encode(x_{n+kappa}) =
//! K^kappa encode(x_n) for every horizon. Reverse direction: if the
//! one-step relation holds on a spanning set, the multi-step relations
//! follow. The temporal-consistency loss vanishes exactly in both setups
//! and becomes positive as soon as K is perturbed.

use nalgebra::DMatrix;
use tckae::losses::{loss_tc, Batch};
use tckae::matrix::{mat_pow_apply, Matrix};
use tckae::model::{init_model, Activation, Architecture, KoopmanAutoencoder};

fn rotation(theta: f64) -> Matrix {
    Matrix::from_rows(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]])
}

/// Linear-activation model whose encoder is the single linear map `e`
/// (remaining layers identity) and whose latent operator is `k`.
fn linear_encoder_model(e: Matrix, k: Matrix) -> KoopmanAutoencoder {
    let dim = e.rows();
    let mut model = init_model(Architecture::new(dim, dim, dim).unwrap(), 0);
    model.activation = Activation::Linear;
    for layer in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
        layer.weight = Matrix::identity(dim);
        layer.bias = Matrix::zeros(dim, 1);
    }
    model.encoder[0].weight = e;
    model.k_fwd = k;
    model
}

fn trajectory(step: &Matrix, x0: &[f64], cols: usize) -> Matrix {
    let mut out = Matrix::zeros(step.rows(), cols);
    let mut cur = Matrix::col_vec(x0);
    for j in 0..cols {
        out.col_mut(j).copy_from_slice(cur.col(0));
        cur = step.mat_mul(&cur).unwrap();
    }
    out
}

#[test]
fn invariant_encoder_satisfies_multi_step_relation() {
    // Identity encoder, latent dynamics equal to the data dynamics: the
    // encoded trajectory advances exactly by powers of K.
    let theta = 0.37;
    let k = rotation(theta);
    let model = linear_encoder_model(Matrix::identity(2), k.clone());
    let traj = trajectory(&k, &[0.9, -0.3], 40);

    for n in [0usize, 5, 11] {
        let zn = model.encode(&traj.column(n).unwrap()).unwrap();
        for kappa in 1..=20usize {
            let lhs = model.encode(&traj.column(n + kappa).unwrap()).unwrap();
            let rhs = mat_pow_apply(&k, &zn, kappa).unwrap();
            let err = lhs.sub(&rhs).unwrap().max_abs();
            assert!(err < 1e-10, "kappa={kappa}: residual {err}");
        }
    }
}

#[test]
fn one_step_relation_on_spanning_set_implies_all_horizons() {
    // Dynamics A with a non-trivial linear encoder E. Requiring
    // E A x = K E x on a spanning set forces K = E A E^{-1}; the
    // multi-step relations then hold for every tested horizon.
    let a = rotation(0.29);
    let e = Matrix::from_rows(&[&[1.1, 0.2], &[-0.15, 0.95]]);
    let e_na = DMatrix::from_column_slice(2, 2, e.data());
    let e_inv_na = e_na.clone().try_inverse().expect("well-conditioned");
    let e_inv = Matrix::from_col_major(2, 2, e_inv_na.as_slice().to_vec()).unwrap();
    let k = e.mat_mul(&a).unwrap().mat_mul(&e_inv).unwrap();

    // One-step residuals vanish on the standard basis (a spanning set).
    for basis in [[1.0, 0.0], [0.0, 1.0]] {
        let x = Matrix::col_vec(&basis);
        let lhs = e.mat_mul(&a.mat_mul(&x).unwrap()).unwrap();
        let rhs = k.mat_mul(&e.mat_mul(&x).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-13);
    }

    let model = linear_encoder_model(e.clone(), k.clone());
    let traj = trajectory(&a, &[0.6, 0.8], 40);
    for kappa in 1..=20usize {
        let lhs = model.encode(&traj.column(kappa).unwrap()).unwrap();
        let z0 = model.encode(&traj.column(0).unwrap()).unwrap();
        let rhs = mat_pow_apply(&k, &z0, kappa).unwrap();
        let err = lhs.sub(&rhs).unwrap().max_abs();
        assert!(err < 1e-10, "kappa={kappa}: residual {err}");
    }
}

#[test]
fn consistency_loss_vanishes_exactly_on_invariant_latents() {
    let theta = 2.0 * std::f64::consts::PI / 20.0;
    let k = rotation(theta);
    let model = linear_encoder_model(Matrix::identity(2), k.clone());
    let traj = trajectory(&k, &[1.0, 0.0], 32);

    for m in [2usize, 5, 16] {
        for kappa_m in [1usize, 4, 10] {
            let batch = Batch::new(traj.columns_range(0, m).unwrap(), m, 0).unwrap();
            let l = loss_tc(&model, &batch, kappa_m).unwrap();
            assert!(l < 1e-10, "M={m}, kappa_m={kappa_m}: L_tc = {l}");
        }
    }
}

#[test]
fn perturbing_the_operator_breaks_consistency() {
    let theta = 2.0 * std::f64::consts::PI / 20.0;
    let k = rotation(theta);
    let traj = trajectory(&k, &[1.0, 0.0], 32);

    let mut k_perturbed = k.clone();
    k_perturbed.set(0, 0, k.get(0, 0) + 1e-3);
    let model = linear_encoder_model(Matrix::identity(2), k_perturbed);

    let batch = Batch::new(traj.columns_range(0, 16).unwrap(), 16, 0).unwrap();
    let l = loss_tc(&model, &batch, 10).unwrap();
    assert!(l > 0.0, "perturbed operator must leak consistency error");
    assert!(l > 1e-9, "leak unexpectedly small: {l}");
}

#[test]
fn nonlinear_encoder_on_nonlinear_data_is_not_consistent() {
    // Sanity check in the opposite direction: a random tanh model on a
    // generic trajectory violates the one-step relation.
    let model = init_model(Architecture::new(2, 6, 2).unwrap(), 13);
    let traj = trajectory(&rotation(0.41), &[0.9, 0.1], 16);
    let batch = Batch::new(traj.columns_range(0, 8).unwrap(), 8, 0).unwrap();
    let l = loss_tc(&model, &batch, 4).unwrap();
    assert!(l > 1e-8);
}
