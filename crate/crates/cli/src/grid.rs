//! Ablation grids: a Cartesian product of config overrides, one
//! train + eval per point, aggregated into a single CSV.
//!
//! A grid spec uses the same flat `key = value` format as configs. Each
//! line is one axis; joint axes tie several keys together with `&`:
//!
//! ```text
//! train.gamma_bwd & train.gamma_con = 0 & 0, 1e-2 & 1e-1
//! train.gamma_tc = 0, 1e-1
//! seeds = 1, 2, 3
//! ```
//!
//! This grid has four points (the bwd/con pair moves jointly against
//! gamma_tc), each run with three seeds. The special `seeds` axis maps to
//! `train.seed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};

use crate::config::{parse_flat, ExperimentConfig};
use crate::pipeline::run_experiment;

#[derive(Clone, Debug)]
pub struct GridSpec {
    /// Each axis: the keys it sets and the value tuples it ranges over.
    axes: Vec<(Vec<String>, Vec<Vec<String>>)>,
    pub seeds: Vec<u64>,
}

impl GridSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read grid spec {}", path.display()))?;
        let map = parse_flat(&text, path)?;
        let mut axes = Vec::new();
        let mut seeds = vec![];
        for (key, value) in map {
            if key == "seeds" {
                seeds = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u64>()
                            .with_context(|| format!("bad seed '{}'", s.trim()))
                    })
                    .collect::<Result<_>>()?;
                continue;
            }
            let keys: Vec<String> = key.split('&').map(|k| k.trim().to_string()).collect();
            let tuples: Vec<Vec<String>> = value
                .split(',')
                .map(|t| t.split('&').map(|v| v.trim().to_string()).collect())
                .collect();
            for t in &tuples {
                if t.len() != keys.len() {
                    bail!(
                        "{}: axis '{}' expects {} values per tuple, got {:?}",
                        path.display(),
                        keys.join(" & "),
                        keys.len(),
                        t
                    );
                }
            }
            axes.push((keys, tuples));
        }
        if axes.is_empty() {
            bail!("{}: grid spec defines no axes", path.display());
        }
        // An empty seeds list means "use the base config seed".
        Ok(GridSpec { axes, seeds })
    }

    /// All grid points as key -> value override maps, in axis order.
    pub fn points(&self) -> Vec<BTreeMap<String, String>> {
        let mut points: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
        for (keys, tuples) in &self.axes {
            let mut next = Vec::with_capacity(points.len() * tuples.len());
            for base in &points {
                for tuple in tuples {
                    let mut p = base.clone();
                    for (k, v) in keys.iter().zip(tuple) {
                        p.insert(k.clone(), v.clone());
                    }
                    next.push(p);
                }
            }
            points = next;
        }
        points
    }
}

#[derive(Clone, Debug)]
pub struct GridRow {
    pub point: usize,
    pub gammas: [f64; 5],
    pub seed: u64,
    pub mean_error_pct: Option<f64>,
    pub ci90_width_pct: Option<f64>,
    pub status: String,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs every (point, seed) job with a worker pool of `jobs` threads and
/// writes `ablation.csv` under `out_dir`. Failures are recorded per row
/// and do not stop the grid.
pub fn run_grid(
    base_config_path: &Path,
    grid_path: &Path,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<GridRow>> {
    let spec = GridSpec::from_file(grid_path)?;
    let base_text = std::fs::read_to_string(base_config_path)
        .with_context(|| format!("cannot read config {}", base_config_path.display()))?;
    let base_map = parse_flat(&base_text, base_config_path)?;

    // Expand into concrete configs up front so config errors surface
    // deterministically and per-row.
    struct Job {
        index: usize,
        point: usize,
        seed: u64,
        cfg: Result<ExperimentConfig>,
        dir: PathBuf,
    }
    let mut jobs_list = Vec::new();
    for (pi, overrides) in spec.points().iter().enumerate() {
        let seeds: Vec<Option<u64>> = if spec.seeds.is_empty() {
            vec![None]
        } else {
            spec.seeds.iter().copied().map(Some).collect()
        };
        for seed in seeds {
            let mut map = base_map.clone();
            for (k, v) in overrides {
                map.insert(k.clone(), v.clone());
            }
            if let Some(s) = seed {
                map.insert("train.seed".into(), s.to_string());
            }
            let cfg = ExperimentConfig::from_map_for_grid(map, base_config_path);
            let seed_val = match (&cfg, seed) {
                (_, Some(s)) => s,
                (Ok(c), None) => c.train.seed,
                (Err(_), None) => 0,
            };
            let dir = out_dir.join(format!("point-{:02}-seed-{}", pi, seed_val));
            jobs_list.push(Job {
                index: jobs_list.len(),
                point: pi,
                seed: seed_val,
                cfg,
                dir,
            });
        }
    }

    let n_jobs = jobs_list.len();
    let results: Mutex<Vec<Option<GridRow>>> = Mutex::new(vec![None; n_jobs]);
    let cursor = AtomicUsize::new(0);
    let workers = jobs.clamp(1, n_jobs);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= n_jobs {
                    break;
                }
                let job = &jobs_list[i];
                let row = match &job.cfg {
                    Ok(cfg) => {
                        let gammas = [
                            cfg.train.weights.gamma_id,
                            cfg.train.weights.gamma_fwd,
                            cfg.train.weights.gamma_bwd,
                            cfg.train.weights.gamma_con,
                            cfg.train.weights.gamma_tc,
                        ];
                        match run_experiment(cfg, &job.dir) {
                            Ok(report) => GridRow {
                                point: job.point,
                                gammas,
                                seed: job.seed,
                                mean_error_pct: Some(report.mean_error_pct),
                                ci90_width_pct: Some(report.ci90_width_pct),
                                status: "ok".into(),
                            },
                            Err(e) => GridRow {
                                point: job.point,
                                gammas,
                                seed: job.seed,
                                mean_error_pct: None,
                                ci90_width_pct: None,
                                status: format!("error: {e}"),
                            },
                        }
                    }
                    Err(e) => GridRow {
                        point: job.point,
                        gammas: [f64::NAN; 5],
                        seed: job.seed,
                        mean_error_pct: None,
                        ci90_width_pct: None,
                        status: format!("config error: {e}"),
                    },
                };
                results.lock().unwrap()[job.index] = Some(row);
            });
        }
    });

    let rows: Vec<GridRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job produces a row"))
        .collect();
    write_grid_csv(&rows, &out_dir.join("ablation.csv"))?;
    Ok(rows)
}

/// One row per (point, seed), plus a median row per point over its
/// successful seed runs.
pub fn write_grid_csv(rows: &[GridRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from(
        "point,gamma_id,gamma_fwd,gamma_bwd,gamma_con,gamma_tc,seed,mean_error_pct,ci90_width_pct,status\n",
    );
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let max_point = rows.iter().map(|r| r.point).max().unwrap_or(0);
    for point in 0..=max_point {
        let point_rows: Vec<&GridRow> = rows.iter().filter(|r| r.point == point).collect();
        for r in &point_rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.point,
                r.gammas[0],
                r.gammas[1],
                r.gammas[2],
                r.gammas[3],
                r.gammas[4],
                r.seed,
                fmt_opt(r.mean_error_pct),
                fmt_opt(r.ci90_width_pct),
                r.status
            ));
        }
        let mut means: Vec<f64> = point_rows.iter().filter_map(|r| r.mean_error_pct).collect();
        let mut widths: Vec<f64> = point_rows.iter().filter_map(|r| r.ci90_width_pct).collect();
        if point_rows.len() > 1 && !means.is_empty() {
            let g = point_rows[0].gammas;
            out.push_str(&format!(
                "{},{},{},{},{},{},median,{},{},ok\n",
                point,
                g[0],
                g[1],
                g[2],
                g[3],
                g[4],
                median(&mut means),
                median(&mut widths)
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
