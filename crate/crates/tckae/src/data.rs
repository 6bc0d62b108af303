//! Dataset generation, noise injection, splitting, and the on-disk
//! dataset format. Externally produced state-snapshot matrices enter the
//! pipeline through the same binary format or through plain CSV.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A state-snapshot matrix: one column per time sample, uniformly spaced
/// at `dt` seconds. When noise has been injected, the pre-noise matrix is
/// kept as the clean reference for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub x: Matrix,
    pub dt: f64,
    pub name: String,
    pub noise_snr_db: Option<f64>,
    pub clean_reference: Option<Matrix>,
}

impl TimeSeriesDataset {
    pub fn n_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn n_tot(&self) -> usize {
        self.x.cols()
    }
}

/// Contiguous prefix/suffix split of a dataset; never shuffled, so the
/// sequential integrity of the samples is preserved.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Matrix,
    pub test: Matrix,
    pub clean_train: Option<Matrix>,
    pub clean_test: Option<Matrix>,
    pub noise_snr_db: Option<f64>,
    pub dt: f64,
}

impl SplitDataset {
    pub fn n_train(&self) -> usize {
        self.train.cols()
    }

    pub fn n_test(&self) -> usize {
        self.test.cols()
    }
}

fn pendulum_rhs(g_over_l: f64, theta: f64, omega: f64) -> (f64, f64) {
    (omega, -g_over_l * theta.sin())
}

fn rk4_substep(g_over_l: f64, state: (f64, f64), h: f64) -> (f64, f64) {
    let (th, om) = state;
    let (k1t, k1o) = pendulum_rhs(g_over_l, th, om);
    let (k2t, k2o) = pendulum_rhs(g_over_l, th + 0.5 * h * k1t, om + 0.5 * h * k1o);
    let (k3t, k3o) = pendulum_rhs(g_over_l, th + 0.5 * h * k2t, om + 0.5 * h * k2o);
    let (k4t, k4o) = pendulum_rhs(g_over_l, th + h * k3t, om + h * k3o);
    (
        th + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        om + h / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o),
    )
}

/// Integrates the undamped pendulum `theta'' + (g/l) sin(theta) = 0` with
/// classical fourth-order Runge-Kutta using `substeps` internal steps per
/// sample. Row 0 is the angle, row 1 the angular velocity.
pub fn simulate_pendulum_with_substeps(
    theta0: f64,
    omega0: f64,
    g: f64,
    l: f64,
    dt: f64,
    n: usize,
    substeps: usize,
) -> Result<TimeSeriesDataset> {
    if dt <= 0.0 || n == 0 || substeps == 0 {
        return Err(Error::InvalidConfig(format!(
            "pendulum simulation needs dt > 0, n >= 1 and substeps >= 1 (got dt={dt}, n={n}, substeps={substeps})"
        )));
    }
    let g_over_l = g / l;
    let h = dt / substeps as f64;
    let mut x = Matrix::zeros(2, n);
    let mut state = (theta0, omega0);
    x.set(0, 0, state.0);
    x.set(1, 0, state.1);
    for j in 1..n {
        for _ in 0..substeps {
            state = rk4_substep(g_over_l, state, h);
        }
        x.set(0, j, state.0);
        x.set(1, j, state.1);
    }
    Ok(TimeSeriesDataset {
        x,
        dt,
        name: "pendulum".into(),
        noise_snr_db: None,
        clean_reference: None,
    })
}

/// Pendulum trajectory at the standard internal resolution of `dt / 100`.
pub fn simulate_pendulum(
    theta0: f64,
    omega0: f64,
    g: f64,
    l: f64,
    dt: f64,
    n: usize,
) -> Result<TimeSeriesDataset> {
    simulate_pendulum_with_substeps(theta0, omega0, g, l, dt, n, 100)
}

/// Conserved energy of the undamped pendulum, `omega^2/2 - (g/l) cos theta`.
pub fn pendulum_energy(g: f64, l: f64, theta: f64, omega: f64) -> f64 {
    0.5 * omega * omega - (g / l) * theta.cos()
}

/// Embeds a low-dimensional trajectory into `target_dim` dimensions via a
/// seeded random matrix with orthonormal columns: `X = P * Theta`, with
/// `P` obtained by Gram-Schmidt on a Gaussian draw. Column norms are
/// preserved and `P^T X` recovers the input.
pub fn orthogonal_lift(
    ds: &TimeSeriesDataset,
    target_dim: usize,
    seed: u64,
) -> Result<(TimeSeriesDataset, Matrix)> {
    let d = ds.x.rows();
    if target_dim < d || target_dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "lift target dimension must be >= max(2, {d}), got {target_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Matrix::from_fn(target_dim, d, |_, _| rng.sample(StandardNormal));
    // Modified Gram-Schmidt over the (few) columns.
    for j in 0..d {
        for prev in 0..j {
            let dot: f64 = p
                .col(prev)
                .iter()
                .zip(p.col(j))
                .map(|(&a, &b)| a * b)
                .sum();
            let prev_col = p.col(prev).to_vec();
            let col = p.col_mut(j);
            for (v, pv) in col.iter_mut().zip(prev_col) {
                *v -= dot * pv;
            }
        }
        let norm: f64 = p.col(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in p.col_mut(j) {
            *v /= norm;
        }
    }
    let lifted = p.mat_mul(&ds.x)?;
    Ok((
        TimeSeriesDataset {
            x: lifted,
            dt: ds.dt,
            name: ds.name.clone(),
            noise_snr_db: None,
            clean_reference: None,
        },
        p,
    ))
}

/// Adds i.i.d. zero-mean Gaussian noise at the requested SNR. Signal
/// power is the mean squared entry over the whole dataset; an infinite
/// `snr_db` is the no-noise sentinel and returns the input unchanged.
pub fn add_noise(ds: &TimeSeriesDataset, snr_db: f64, seed: u64) -> Result<TimeSeriesDataset> {
    if snr_db.is_nan() {
        return Err(Error::InvalidConfig("snr_db must not be NaN".into()));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(ds.clone());
    }
    let n = ds.x.data().len() as f64;
    let signal_power = ds.x.data().iter().map(|v| v * v).sum::<f64>() / n;
    let sigma = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = ds.x.clone();
    for v in noisy.data_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v += sigma * g;
    }
    Ok(TimeSeriesDataset {
        x: noisy,
        dt: ds.dt,
        name: ds.name.clone(),
        noise_snr_db: Some(snr_db),
        clean_reference: Some(ds.x.clone()),
    })
}

/// Splits into the first `n_train` columns and the rest, carrying the
/// clean reference along when present.
pub fn split(ds: &TimeSeriesDataset, n_train: usize) -> Result<SplitDataset> {
    let n_tot = ds.n_tot();
    if n_train == 0 || n_train >= n_tot {
        return Err(Error::InvalidConfig(format!(
            "n_train must lie strictly between 0 and {n_tot}, got {n_train}"
        )));
    }
    let n_test = n_tot - n_train;
    let (clean_train, clean_test) = match &ds.clean_reference {
        Some(clean) => (
            Some(clean.columns_range(0, n_train)?),
            Some(clean.columns_range(n_train, n_test)?),
        ),
        None => (None, None),
    };
    Ok(SplitDataset {
        train: ds.x.columns_range(0, n_train)?,
        test: ds.x.columns_range(n_train, n_test)?,
        clean_train,
        clean_test,
        noise_snr_db: ds.noise_snr_db,
        dt: ds.dt,
    })
}

/// Parameters of a global min-max rescale to `[0, 1]`, kept so that
/// downstream evaluation can map predictions back to original units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxScale {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScale {
    /// `(x - min) / (max - min)` elementwise.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        let span = self.max - self.min;
        m.map(|v| (v - self.min) / span)
    }

    /// Exact inverse of [`MinMaxScale::apply`] up to rounding.
    pub fn invert(&self, m: &Matrix) -> Matrix {
        let span = self.max - self.min;
        m.map(|v| v * span + self.min)
    }
}

/// Rescales every entry (data and clean reference alike) into `[0, 1]`
/// by the dataset's global minimum and maximum. Intended for
/// user-supplied high-dimensional data; the pendulum pipeline does not
/// normalize.
pub fn min_max_scale(ds: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, MinMaxScale)> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in ds.x.data() {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return Err(Error::InvalidConfig(format!(
            "min-max scaling needs a value spread, dataset range is [{min}, {max}]"
        )));
    }
    let scale = MinMaxScale { min, max };
    Ok((
        TimeSeriesDataset {
            x: scale.apply(&ds.x),
            dt: ds.dt,
            name: ds.name.clone(),
            noise_snr_db: ds.noise_snr_db,
            clean_reference: ds.clean_reference.as_ref().map(|c| scale.apply(c)),
        },
        scale,
    ))
}

const DATASET_MAGIC: [u8; 4] = *b"TCKD";
const DATASET_VERSION: u32 = 1;

/// Writes the dataset format: magic `TCKD`, version u32, rows u32,
/// cols u32, dt f64, flags u8 (bit 0: clean reference present), the SNR
/// in dB as f64 when bit 0 is set, then the float64 column-major
/// little-endian payload(s): the data matrix, followed by the clean
/// reference when present.
pub fn save_dataset(ds: &TimeSeriesDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(ds.x.rows() as u32).to_le_bytes())?;
    out.write_all(&(ds.x.cols() as u32).to_le_bytes())?;
    out.write_all(&ds.dt.to_le_bytes())?;
    let has_clean = ds.clean_reference.is_some();
    out.write_all(&[u8::from(has_clean)])?;
    if let Some(snr) = ds.noise_snr_db {
        out.write_all(&snr.to_le_bytes())?;
    }
    for v in ds.x.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    if let Some(clean) = &ds.clean_reference {
        for v in clean.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. Bad magic, version
/// mismatch and truncation are reported distinctly, including expected
/// versus actual byte counts for truncated files.
pub fn load_dataset(path: &Path) -> Result<TimeSeriesDataset> {
    let bytes = std::fs::read(path)?;
    let p = path.display().to_string();
    let need = |offset: usize, len: usize, expected: usize| -> Result<()> {
        if offset + len > bytes.len() {
            Err(Error::Truncated {
                path: p.clone(),
                expected,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };

    need(0, 4, 21)?;
    if bytes[0..4] != DATASET_MAGIC {
        return Err(Error::BadMagic {
            path: p,
            expected: DATASET_MAGIC,
        });
    }
    need(4, 4, 21)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::BadVersion {
            path: p,
            found: version,
            supported: DATASET_VERSION,
        });
    }
    need(8, 13, 21)?;
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let flags = bytes[24];
    let has_clean = flags & 1 != 0;

    let mut offset = 25;
    let payload = rows * cols * 8;
    let expected_total = offset + if has_clean { 8 + 2 * payload } else { payload };
    let snr = if has_clean {
        need(offset, 8, expected_total)?;
        let snr = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        offset += 8;
        Some(snr)
    } else {
        None
    };

    let read_matrix = |offset: &mut usize| -> Result<Matrix> {
        need(*offset, payload, expected_total)?;
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in bytes[*offset..*offset + payload].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        *offset += payload;
        Matrix::from_col_major(rows, cols, data)
    };
    let x = read_matrix(&mut offset)?;
    let clean_reference = if has_clean {
        Some(read_matrix(&mut offset)?)
    } else {
        None
    };

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(TimeSeriesDataset {
        x,
        dt,
        name,
        noise_snr_db: snr,
        clean_reference,
    })
}

/// Imports a plain-text CSV matrix: rows are features, columns are time
/// samples, no header. The sampling interval is supplied by the caller.
pub fn load_csv(path: &Path, dt: f64) -> Result<TimeSeriesDataset> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: p.clone(),
                msg: format!("line {}: cannot parse '{}' as float", lineno + 1, field.trim()),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: p.clone(),
                    msg: format!(
                        "line {}: {} fields, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: p,
            msg: "no data rows".into(),
        });
    }
    let x = Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(TimeSeriesDataset {
        x,
        dt,
        name,
        noise_snr_db: None,
        clean_reference: None,
    })
}
