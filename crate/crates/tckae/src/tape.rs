//! Wengert tape: reverse-mode differentiation over matrix primitives.
//!
//! The network architecture is fixed, so the tape records coarse matrix
//! operations (affine maps, tanh, products, squared norms) rather than
//! scalar arithmetic. A forward pass appends nodes in topological order;
//! the reverse sweep walks the node list backwards and accumulates
//! adjoints additively, so a value used in k places receives the sum of
//! k contributions.
//!
//! A tape is single-owner: one training step builds one tape, reads the
//! gradients, and clears it. `grad` takes `&self` and may be called any
//! number of times with identical results.

use crate::error::{Error, Result};
use crate::matrix::{affine, Matrix};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Input matrix; parameters and constants both enter as leaves.
    Leaf,
    /// `A * B`
    MatMul { a: usize, b: usize },
    /// `A + B`
    Add { a: usize, b: usize },
    /// `A - B`
    Sub { a: usize, b: usize },
    /// `c * A`
    Scale { a: usize, c: f64 },
    /// Elementwise tanh; derivative `1 - tanh^2` from the saved output.
    Tanh { a: usize },
    /// `W * X + b * 1^T`
    Affine { w: usize, b: usize, x: usize },
    /// Scalar `sum((A - T)^2)` against a constant target.
    SqErr { a: usize, target: Matrix },
    /// Scalar `sum(A^2)`.
    SqNorm { a: usize },
    /// Scalar `||A[:,ca] - B[:,cb]||^2`.
    SqColDist {
        a: usize,
        ca: usize,
        b: usize,
        cb: usize,
    },
    /// Scalar `||A - I||_F` (unsquared); subgradient 0 at A == I.
    FroDistIdentity { a: usize },
    /// First `k` rows of A.
    TopRows { a: usize, k: usize },
    /// First `k` columns of A.
    LeftCols { a: usize, k: usize },
    /// Scalar `sum_i w_i * s_i` over scalar nodes.
    WeightedSum { terms: Vec<(usize, f64)> },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records primitive applications for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Drops all nodes but keeps the allocation, for reuse across steps.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// The value computed at node `v`.
    pub fn value(&self, v: Var) -> &Matrix {
        self.val(v)
    }

    /// The value of a 1x1 node as a plain scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.val(v);
        debug_assert_eq!((m.rows(), m.cols()), (1, 1));
        m.data()[0]
    }

    /// Enters a matrix on the tape. Gradients can be requested for any
    /// leaf; leaves never requested simply keep their adjoints private.
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a).mat_mul(self.val(b))?;
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a).add(self.val(b))?;
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a).sub(self.val(b))?;
        Ok(self.push(value, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a).scale(c);
        self.push(value, Op::Scale { a: a.0, c })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.val(a).map(f64::tanh);
        self.push(value, Op::Tanh { a: a.0 })
    }

    /// `W * X + b * 1^T` as one node.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let value = affine(self.val(w), self.val(b), self.val(x))?;
        Ok(self.push(
            value,
            Op::Affine {
                w: w.0,
                b: b.0,
                x: x.0,
            },
        ))
    }

    /// Squared Frobenius distance to a constant target, as a scalar node.
    pub fn sq_err(&mut self, a: Var, target: &Matrix) -> Result<Var> {
        let av = self.val(a);
        if av.rows() != target.rows() || av.cols() != target.cols() {
            return Err(Error::DimMismatch {
                op: "sq_err",
                lhs_rows: av.rows(),
                lhs_cols: av.cols(),
                rhs_rows: target.rows(),
                rhs_cols: target.cols(),
            });
        }
        let mut acc = 0.0;
        for (&x, &t) in av.data().iter().zip(target.data()) {
            let d = x - t;
            acc += d * d;
        }
        Ok(self.push(
            Matrix::col_vec(&[acc]),
            Op::SqErr {
                a: a.0,
                target: target.clone(),
            },
        ))
    }

    /// Sum of squared entries as a scalar node.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let acc = self.val(a).sq_frobenius_norm();
        self.push(Matrix::col_vec(&[acc]), Op::SqNorm { a: a.0 })
    }

    /// Squared 2-norm of the difference between column `ca` of `a` and
    /// column `cb` of `b`.
    pub fn sq_col_dist(&mut self, a: Var, ca: usize, b: Var, cb: usize) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.rows() != bv.rows() {
            return Err(Error::DimMismatch {
                op: "sq_col_dist",
                lhs_rows: av.rows(),
                lhs_cols: av.cols(),
                rhs_rows: bv.rows(),
                rhs_cols: bv.cols(),
            });
        }
        if ca >= av.cols() {
            return Err(Error::IndexOutOfBounds {
                op: "sq_col_dist",
                index: ca,
                size: av.cols(),
            });
        }
        if cb >= bv.cols() {
            return Err(Error::IndexOutOfBounds {
                op: "sq_col_dist",
                index: cb,
                size: bv.cols(),
            });
        }
        let mut acc = 0.0;
        for (&x, &y) in av.col(ca).iter().zip(bv.col(cb)) {
            let d = x - y;
            acc += d * d;
        }
        Ok(self.push(
            Matrix::col_vec(&[acc]),
            Op::SqColDist {
                a: a.0,
                ca,
                b: b.0,
                cb,
            },
        ))
    }

    /// Unsquared Frobenius norm of `A - I` for square `A`.
    pub fn fro_dist_identity(&mut self, a: Var) -> Result<Var> {
        let av = self.val(a);
        if !av.is_square() {
            return Err(Error::NotSquare {
                op: "fro_dist_identity",
                rows: av.rows(),
                cols: av.cols(),
            });
        }
        let n = av.rows();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let d = av.get(i, j) - if i == j { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        Ok(self.push(Matrix::col_vec(&[acc.sqrt()]), Op::FroDistIdentity { a: a.0 }))
    }

    pub fn top_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        let av = self.val(a);
        if k > av.rows() {
            return Err(Error::IndexOutOfBounds {
                op: "top_rows",
                index: k,
                size: av.rows(),
            });
        }
        let value = Matrix::from_fn(k, av.cols(), |i, j| av.get(i, j));
        Ok(self.push(value, Op::TopRows { a: a.0, k }))
    }

    pub fn left_cols(&mut self, a: Var, k: usize) -> Result<Var> {
        let av = self.val(a);
        if k > av.cols() {
            return Err(Error::IndexOutOfBounds {
                op: "left_cols",
                index: k,
                size: av.cols(),
            });
        }
        let value = av.columns_range(0, k)?;
        Ok(self.push(value, Op::LeftCols { a: a.0, k }))
    }

    /// Weighted sum of scalar nodes, as one scalar node.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(v, w) in terms {
            let m = self.val(v);
            if m.rows() != 1 || m.cols() != 1 {
                return Err(Error::NonScalarOutput {
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
            acc += w * m.data()[0];
        }
        let terms = terms.iter().map(|&(v, w)| (v.0, w)).collect();
        Ok(self.push(Matrix::col_vec(&[acc]), Op::WeightedSum { terms }))
    }

    /// `K^kappa * z` by `kappa` recorded multiplications, so gradients
    /// flow through every application. `kappa = 0` returns `z` itself.
    pub fn mat_pow_apply(&mut self, k: Var, z: Var, kappa: usize) -> Result<Var> {
        let kv = self.val(k);
        if !kv.is_square() {
            return Err(Error::NotSquare {
                op: "mat_pow_apply",
                rows: kv.rows(),
                cols: kv.cols(),
            });
        }
        let mut cur = z;
        for _ in 0..kappa {
            cur = self.matmul(k, cur)?;
        }
        Ok(cur)
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Returns one gradient matrix per requested variable, in order. A
    /// variable that never fed into `output` gets a zero gradient of its
    /// own shape. Calling this repeatedly on the same tape is idempotent.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Matrix>> {
        let out_val = self.val(output);
        if out_val.rows() != 1 || out_val.cols() != 1 {
            return Err(Error::NonScalarOutput {
                rows: out_val.rows(),
                cols: out_val.cols(),
            });
        }

        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(Matrix::col_vec(&[1.0]));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut adj);
            adj[idx] = Some(g);
        }

        Ok(wrt
            .iter()
            .map(|v| match &adj[v.0] {
                Some(m) => m.clone(),
                None => {
                    let shape = self.val(*v);
                    Matrix::zeros(shape.rows(), shape.cols())
                }
            })
            .collect())
    }

    fn backprop_node(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                // dA += G * B^T, dB += A^T * G
                let bt = self.nodes[*b].value.transpose();
                let da = g.mat_mul(&bt).expect("shapes fixed at forward time");
                accumulate(adj, *a, &da, &self.nodes[*a].value);
                let at = self.nodes[*a].value.transpose();
                let db = at.mat_mul(g).expect("shapes fixed at forward time");
                accumulate(adj, *b, &db, &self.nodes[*b].value);
            }
            Op::Add { a, b } => {
                accumulate(adj, *a, g, &self.nodes[*a].value);
                accumulate(adj, *b, g, &self.nodes[*b].value);
            }
            Op::Sub { a, b } => {
                accumulate(adj, *a, g, &self.nodes[*a].value);
                let neg = g.scale(-1.0);
                accumulate(adj, *b, &neg, &self.nodes[*b].value);
            }
            Op::Scale { a, c } => {
                let da = g.scale(*c);
                accumulate(adj, *a, &da, &self.nodes[*a].value);
            }
            Op::Tanh { a } => {
                let y = &node.value;
                let da = Matrix::from_col_major(
                    y.rows(),
                    y.cols(),
                    y.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&t, &gi)| gi * (1.0 - t * t))
                        .collect(),
                )
                .expect("same shape");
                accumulate(adj, *a, &da, &self.nodes[*a].value);
            }
            Op::Affine { w, b, x } => {
                // dW += G * X^T, db += row sums of G, dX += W^T * G
                let xt = self.nodes[*x].value.transpose();
                let dw = g.mat_mul(&xt).expect("shapes fixed at forward time");
                accumulate(adj, *w, &dw, &self.nodes[*w].value);

                let mut db = Matrix::zeros(g.rows(), 1);
                for j in 0..g.cols() {
                    for (i, &v) in g.col(j).iter().enumerate() {
                        db.data_mut()[i] += v;
                    }
                }
                accumulate(adj, *b, &db, &self.nodes[*b].value);

                let wt = self.nodes[*w].value.transpose();
                let dx = wt.mat_mul(g).expect("shapes fixed at forward time");
                accumulate(adj, *x, &dx, &self.nodes[*x].value);
            }
            Op::SqErr { a, target } => {
                let gi = g.data()[0];
                let av = &self.nodes[*a].value;
                let da = Matrix::from_col_major(
                    av.rows(),
                    av.cols(),
                    av.data()
                        .iter()
                        .zip(target.data())
                        .map(|(&x, &t)| 2.0 * gi * (x - t))
                        .collect(),
                )
                .expect("same shape");
                accumulate(adj, *a, &da, av);
            }
            Op::SqNorm { a } => {
                let gi = g.data()[0];
                let da = self.nodes[*a].value.scale(2.0 * gi);
                accumulate(adj, *a, &da, &self.nodes[*a].value);
            }
            Op::SqColDist { a, ca, b, cb } => {
                let gi = g.data()[0];
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let entry = adj[*a].get_or_insert_with(|| Matrix::zeros(av.rows(), av.cols()));
                {
                    let col = entry.col_mut(*ca);
                    for (i, (&x, &y)) in av.col(*ca).iter().zip(bv.col(*cb)).enumerate() {
                        col[i] += 2.0 * gi * (x - y);
                    }
                }
                let entry = adj[*b].get_or_insert_with(|| Matrix::zeros(bv.rows(), bv.cols()));
                let col = entry.col_mut(*cb);
                for (i, (&x, &y)) in av.col(*ca).iter().zip(bv.col(*cb)).enumerate() {
                    col[i] -= 2.0 * gi * (x - y);
                }
            }
            Op::FroDistIdentity { a } => {
                let gi = g.data()[0];
                let y = node.value.data()[0];
                if y > 0.0 {
                    let av = &self.nodes[*a].value;
                    let n = av.rows();
                    let da = Matrix::from_fn(n, n, |i, j| {
                        let d = av.get(i, j) - if i == j { 1.0 } else { 0.0 };
                        gi * d / y
                    });
                    accumulate(adj, *a, &da, av);
                }
            }
            Op::TopRows { a, k } => {
                let av = &self.nodes[*a].value;
                let entry = adj[*a].get_or_insert_with(|| Matrix::zeros(av.rows(), av.cols()));
                for j in 0..g.cols() {
                    for i in 0..*k {
                        let v = entry.get(i, j) + g.get(i, j);
                        entry.set(i, j, v);
                    }
                }
            }
            Op::LeftCols { a, k } => {
                let av = &self.nodes[*a].value;
                let entry = adj[*a].get_or_insert_with(|| Matrix::zeros(av.rows(), av.cols()));
                for j in 0..*k {
                    let src = g.col(j);
                    let dst = entry.col_mut(j);
                    for i in 0..src.len() {
                        dst[i] += src[i];
                    }
                }
            }
            Op::WeightedSum { terms } => {
                let gi = g.data()[0];
                for &(t, w) in terms {
                    let da = Matrix::col_vec(&[gi * w]);
                    accumulate(adj, t, &da, &self.nodes[t].value);
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], idx: usize, delta: &Matrix, shape_like: &Matrix) {
    let entry =
        adj[idx].get_or_insert_with(|| Matrix::zeros(shape_like.rows(), shape_like.cols()));
    debug_assert_eq!((entry.rows(), entry.cols()), (delta.rows(), delta.cols()));
    for (dst, &src) in entry.data_mut().iter_mut().zip(delta.data()) {
        *dst += src;
    }
}

/// Central-difference gradient oracle: `(f(p+h) - f(p-h)) / 2h` per
/// coordinate. Slow and implementation-independent; used to check the
/// tape, never the other way around.
pub fn finite_diff_gradient(
    mut loss_fn: impl FnMut(&[Matrix]) -> f64,
    params: &[Matrix],
    h: f64,
) -> Vec<Matrix> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work: Vec<Matrix> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Matrix::zeros(params[p].rows(), params[p].cols());
        for idx in 0..params[p].data().len() {
            let orig = work[p].data()[idx];
            work[p].data_mut()[idx] = orig + h;
            let plus = loss_fn(&work);
            work[p].data_mut()[idx] = orig - h;
            let minus = loss_fn(&work);
            work[p].data_mut()[idx] = orig;
            grad.data_mut()[idx] = (plus - minus) / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Max entry error relative to the finite-difference gradient scale.
    fn rel_error(analytic: &Matrix, fd: &Matrix) -> f64 {
        let scale = fd.max_abs().max(1e-12);
        analytic.sub(fd).unwrap().max_abs() / scale
    }

    #[test]
    fn tanh_basics() {
        let mut tape = Tape::new();
        let zero = tape.leaf(Matrix::col_vec(&[0.0]));
        let y = tape.tanh(zero);
        assert_eq!(tape.scalar(y), 0.0);

        let big = tape.leaf(Matrix::col_vec(&[30.0, -30.0]));
        let sat = tape.tanh(big);
        assert!((tape.value(sat).get(0, 0) - 1.0).abs() < 1e-12);
        assert!((tape.value(sat).get(1, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_derivative_matches_finite_difference() {
        let point = Matrix::col_vec(&[0.5]);
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone());
        let y = tape.tanh(x);
        let s = tape.sq_norm(y); // s = tanh(x)^2, ds/dx = 2 tanh tanh'
        let g = tape.grad(s, &[x]).unwrap();

        let fd = finite_diff_gradient(
            |p| p[0].data()[0].tanh().powi(2),
            std::slice::from_ref(&point),
            1e-6,
        );
        assert!((g[0].data()[0] - fd[0].data()[0]).abs() < 1e-7);
    }

    #[test]
    fn grad_of_half_norm_squared_is_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w_val = random_matrix(4, 1, &mut rng);
        let mut tape = Tape::new();
        let w = tape.leaf(w_val.clone());
        let n = tape.sq_norm(w);
        let half = tape.scale(n, 0.5);
        let g = tape.grad(half, &[w]).unwrap();
        assert!(g[0].sub(&w_val).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn grad_of_residual_norm_matches_symbolic() {
        // f(K) = ||K z - y||^2, grad_K = 2 (K z - y) z^T on a 2x2 case.
        let k_val = Matrix::from_rows(&[&[1.0, 2.0], &[-0.5, 0.25]]);
        let z_val = Matrix::col_vec(&[0.3, -0.7]);
        let y_val = Matrix::col_vec(&[1.0, 1.0]);

        let mut tape = Tape::new();
        let k = tape.leaf(k_val.clone());
        let z = tape.leaf(z_val.clone());
        let kz = tape.matmul(k, z).unwrap();
        let loss = tape.sq_err(kz, &y_val).unwrap();
        let g = tape.grad(loss, &[k]).unwrap();

        let residual = k_val.mat_mul(&z_val).unwrap().sub(&y_val).unwrap();
        let symbolic = residual.scale(2.0).mat_mul(&z_val.transpose()).unwrap();
        assert!(g[0].sub(&symbolic).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn grad_is_idempotent_and_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::identity(2));
        let b = tape.leaf(Matrix::identity(2));
        let c = tape.matmul(a, b).unwrap();
        assert!(matches!(
            tape.grad(c, &[a]),
            Err(Error::NonScalarOutput { .. })
        ));

        let s = tape.sq_norm(c);
        let g1 = tape.grad(s, &[a]).unwrap();
        let g2 = tape.grad(s, &[a]).unwrap();
        assert_eq!(g1[0], g2[0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::col_vec(&[1.0, 2.0]));
        let unused = tape.leaf(Matrix::zeros(3, 2));
        let s = tape.sq_norm(a);
        let g = tape.grad(s, &[unused]).unwrap();
        assert_eq!(g[0], Matrix::zeros(3, 2));
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        // One composite expression exercising each differentiable primitive,
        // checked against central differences at h = 1e-6.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a_val = random_matrix(3, 3, &mut rng);
        let b_val = random_matrix(3, 2, &mut rng);
        let w_val = random_matrix(2, 3, &mut rng);
        let bias_val = random_matrix(2, 1, &mut rng);
        let target = random_matrix(2, 2, &mut rng);
        let params = [a_val, b_val, w_val, bias_val];

        let eval = |p: &[Matrix]| -> f64 {
            let mut tape = Tape::new();
            let a = tape.leaf(p[0].clone());
            let b = tape.leaf(p[1].clone());
            let w = tape.leaf(p[2].clone());
            let bias = tape.leaf(p[3].clone());

            let ab = tape.matmul(a, b).unwrap();
            let t = tape.tanh(ab);
            let aff = tape.affine(w, bias, t).unwrap();
            let e1 = tape.sq_err(aff, &target).unwrap();

            let sum = tape.add(ab, b).unwrap();
            let diff = tape.sub(sum, b).unwrap();
            let sc = tape.scale(diff, 0.7);
            let e2 = tape.sq_norm(sc);

            let top = tape.top_rows(a, 2).unwrap();
            let left = tape.left_cols(a, 2).unwrap();
            let prod = tape.matmul(top, left).unwrap();
            let e3 = tape.fro_dist_identity(prod).unwrap();

            let e4 = tape.sq_col_dist(ab, 0, sc, 1).unwrap();

            let pow = tape.mat_pow_apply(a, b, 3).unwrap();
            let e5 = tape.sq_norm(pow);

            let total = tape
                .weighted_sum(&[(e1, 1.0), (e2, 0.5), (e3, 2.0), (e4, 0.25), (e5, 0.1)])
                .unwrap();
            tape.scalar(total)
        };

        let analytic = {
            let mut tape = Tape::new();
            let a = tape.leaf(params[0].clone());
            let b = tape.leaf(params[1].clone());
            let w = tape.leaf(params[2].clone());
            let bias = tape.leaf(params[3].clone());
            let ab = tape.matmul(a, b).unwrap();
            let t = tape.tanh(ab);
            let aff = tape.affine(w, bias, t).unwrap();
            let e1 = tape.sq_err(aff, &target).unwrap();
            let sum = tape.add(ab, b).unwrap();
            let diff = tape.sub(sum, b).unwrap();
            let sc = tape.scale(diff, 0.7);
            let e2 = tape.sq_norm(sc);
            let top = tape.top_rows(a, 2).unwrap();
            let left = tape.left_cols(a, 2).unwrap();
            let prod = tape.matmul(top, left).unwrap();
            let e3 = tape.fro_dist_identity(prod).unwrap();
            let e4 = tape.sq_col_dist(ab, 0, sc, 1).unwrap();
            let pow = tape.mat_pow_apply(a, b, 3).unwrap();
            let e5 = tape.sq_norm(pow);
            let total = tape
                .weighted_sum(&[(e1, 1.0), (e2, 0.5), (e3, 2.0), (e4, 0.25), (e5, 0.1)])
                .unwrap();
            tape.grad(total, &[a, b, w, bias]).unwrap()
        };

        let fd = finite_diff_gradient(eval, &params, 1e-6);
        for (an, num) in analytic.iter().zip(&fd) {
            assert!(
                rel_error(an, num) < 1e-5,
                "primitive gradient disagrees with finite differences: {}",
                rel_error(an, num)
            );
        }
    }

    #[test]
    fn finite_diff_is_exact_on_linear_functions() {
        let p = Matrix::col_vec(&[1.0, -2.0, 3.0]);
        let g = finite_diff_gradient(
            |m| 2.0 * m[0].data()[0] - 3.0 * m[0].data()[1] + 0.5 * m[0].data()[2],
            std::slice::from_ref(&p),
            1e-6,
        );
        let expected = Matrix::col_vec(&[2.0, -3.0, 0.5]);
        assert!(g[0].sub(&expected).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn finite_diff_cube_at_two() {
        let p = Matrix::col_vec(&[2.0]);
        let g = finite_diff_gradient(|m| m[0].data()[0].powi(3), std::slice::from_ref(&p), 1e-6);
        assert!((g[0].data()[0] - 12.0).abs() < 1e-6);
    }

    #[test]
    fn taped_pow_zero_returns_input_var() {
        let mut tape = Tape::new();
        let k = tape.leaf(Matrix::identity(2));
        let z = tape.leaf(Matrix::col_vec(&[1.0, 2.0]));
        let out = tape.mat_pow_apply(k, z, 0).unwrap();
        assert_eq!(out, z);
    }
}
