//! The test protocol: long-horizon rollouts from multiple initial
//! conditions, per-step relative 2-norm errors against the noise-free
//! ground truth, and aggregation into a mean plus a 90% interval width.

use std::path::Path;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::KoopmanAutoencoder;

/// Pooled evaluation statistics. The mean and the percentile width are
/// computed over the identical pooled population of per-(initial
/// condition, step) errors.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Mean relative error over the pooled population, in percent.
    pub mean_error_pct: f64,
    /// 95th minus 5th percentile of the pooled errors, in percent.
    pub ci90_width_pct: f64,
    /// Mean error per initial condition, in percent.
    pub per_init: Vec<f64>,
    /// Mean error by prediction horizon, in percent.
    pub per_step: Vec<f64>,
    pub n_inits: usize,
    pub n_steps: usize,
    /// Reference states with zero norm are excluded from pooling and
    /// counted here instead.
    pub n_zero_norm_skipped: usize,
}

/// Rolls a model out for `steps` predictions: one encode, an incremental
/// latent advance per step (never re-encoded), one decode per step.
/// Column `j` holds the `j+1`-step prediction.
pub fn rollout(model: &KoopmanAutoencoder, x_init: &Matrix, steps: usize) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::InvalidConfig("rollout needs steps >= 1".into()));
    }
    let mut z = model.encode(x_init)?;
    let mut out = Matrix::zeros(model.arch.n_in, steps);
    for j in 0..steps {
        z = model.k_fwd.mat_mul(&z)?;
        let x = model.decode(&z)?;
        out.col_mut(j).copy_from_slice(x.col(0));
    }
    Ok(out)
}

/// Relative 2-norm error `||x_hat - x||_2 / ||x||_2` between two state
/// vectors. Callers must ensure the truth has nonzero norm; the pooled
/// evaluation skips and counts zero-norm references instead of dividing.
pub fn relative_error(x_hat: &Matrix, x_true: &Matrix) -> Result<f64> {
    if x_hat.rows() != x_true.rows() || x_hat.cols() != x_true.cols() {
        return Err(Error::DimMismatch {
            op: "relative_error",
            lhs_rows: x_hat.rows(),
            lhs_cols: x_hat.cols(),
            rhs_rows: x_true.rows(),
            rhs_cols: x_true.cols(),
        });
    }
    let diff = x_hat.sub(x_true)?;
    Ok(diff.frobenius_norm() / x_true.frobenius_norm())
}

fn column_norm(m: &Matrix, j: usize) -> f64 {
    m.col(j).iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn column_dist(a: &Matrix, ja: usize, b: &Matrix, jb: usize) -> f64 {
    a.col(ja)
        .iter()
        .zip(b.col(jb))
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Percentile by linear interpolation between closest ranks of the
/// sorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Runs the full protocol: each of the first `n_inits` test columns is
/// fed to the model and rolled out to the end of the test window, and
/// every prediction is compared against the noise-free reference (the
/// clean reference for noisy datasets, the test data itself otherwise).
pub fn evaluate(
    model: &KoopmanAutoencoder,
    split: &SplitDataset,
    n_inits: usize,
) -> Result<EvalReport> {
    let n_test = split.n_test();
    if n_inits == 0 || n_inits >= n_test {
        return Err(Error::InvalidConfig(format!(
            "n_inits must lie in [1, {}) for a test set of {} columns, got {n_inits}",
            n_test, n_test
        )));
    }
    let reference: &Matrix = match (&split.clean_test, split.noise_snr_db) {
        (Some(clean), _) => clean,
        (None, Some(snr_db)) => return Err(Error::MissingCleanReference { snr_db }),
        (None, None) => &split.test,
    };

    let n_steps = n_test - 1;
    let mut pooled: Vec<f64> = Vec::new();
    let mut per_init = Vec::with_capacity(n_inits);
    let mut per_step_sum = vec![0.0f64; n_steps];
    let mut per_step_count = vec![0usize; n_steps];
    let mut skipped = 0usize;

    for init in 0..n_inits {
        let x0 = split.test.column(init)?;
        let steps = n_test - 1 - init;
        let pred = rollout(model, &x0, steps)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..steps {
            let truth_col = init + 1 + j;
            let denom = column_norm(reference, truth_col);
            if denom == 0.0 {
                skipped += 1;
                continue;
            }
            let delta = column_dist(&pred, j, reference, truth_col) / denom;
            pooled.push(delta);
            sum += delta;
            count += 1;
            per_step_sum[j] += delta;
            per_step_count[j] += 1;
        }
        per_init.push(if count > 0 { 100.0 * sum / count as f64 } else { 0.0 });
    }

    let mean = if pooled.is_empty() {
        0.0
    } else {
        pooled.iter().sum::<f64>() / pooled.len() as f64
    };
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let width = percentile(&sorted, 0.95) - percentile(&sorted, 0.05);

    let per_step = per_step_sum
        .iter()
        .zip(&per_step_count)
        .map(|(&s, &c)| if c > 0 { 100.0 * s / c as f64 } else { 0.0 })
        .collect();

    Ok(EvalReport {
        mean_error_pct: 100.0 * mean,
        ci90_width_pct: 100.0 * width,
        per_init,
        per_step,
        n_inits,
        n_steps,
        n_zero_norm_skipped: skipped,
    })
}

/// Writes the report as CSV: a summary row, then per-step and per-init
/// sections. Floats are serialized with full round-trip precision.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("summary,mean_error_pct,ci90_width_pct,n_inits,n_steps\n");
    out.push_str(&format!(
        "summary,{},{},{},{}\n",
        report.mean_error_pct, report.ci90_width_pct, report.n_inits, report.n_steps
    ));
    out.push_str(&format!("meta,zero_norm_skipped,{}\n", report.n_zero_norm_skipped));
    out.push_str("per_step,step,mean_error_pct\n");
    for (j, v) in report.per_step.iter().enumerate() {
        out.push_str(&format!("per_step,{},{}\n", j + 1, v));
    }
    out.push_str("per_init,init,mean_error_pct\n");
    for (i, v) in report.per_init.iter().enumerate() {
        out.push_str(&format!("per_init,{},{}\n", i, v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads back a CSV written by [`write_report`].
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let parse_err = |msg: String| Error::Parse {
        path: p.clone(),
        msg,
    };
    let mut report = EvalReport {
        mean_error_pct: 0.0,
        ci90_width_pct: 0.0,
        per_init: Vec::new(),
        per_step: Vec::new(),
        n_inits: 0,
        n_steps: 0,
        n_zero_norm_skipped: 0,
    };
    let mut saw_summary = false;
    for line in text.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        match fields.as_slice() {
            ["summary", "mean_error_pct", ..] | ["per_step", "step", ..]
            | ["per_init", "init", ..] => {}
            ["summary", mean, width, n_inits, n_steps] => {
                report.mean_error_pct = mean
                    .parse()
                    .map_err(|_| parse_err(format!("bad mean '{mean}'")))?;
                report.ci90_width_pct = width
                    .parse()
                    .map_err(|_| parse_err(format!("bad width '{width}'")))?;
                report.n_inits = n_inits
                    .parse()
                    .map_err(|_| parse_err(format!("bad n_inits '{n_inits}'")))?;
                report.n_steps = n_steps
                    .parse()
                    .map_err(|_| parse_err(format!("bad n_steps '{n_steps}'")))?;
                saw_summary = true;
            }
            ["meta", "zero_norm_skipped", n] => {
                report.n_zero_norm_skipped = n
                    .parse()
                    .map_err(|_| parse_err(format!("bad skip count '{n}'")))?;
            }
            ["per_step", _, v] => report
                .per_step
                .push(v.parse().map_err(|_| parse_err(format!("bad value '{v}'")))?),
            ["per_init", _, v] => report
                .per_init
                .push(v.parse().map_err(|_| parse_err(format!("bad value '{v}'")))?),
            _ => return Err(parse_err(format!("unrecognized line '{line}'"))),
        }
    }
    if !saw_summary {
        return Err(parse_err("missing summary row".into()));
    }
    Ok(report)
}
