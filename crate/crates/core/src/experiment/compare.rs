use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{train, ExperimentConfig, ExperimentError};

/// Environment variable overriding the number of worker threads of
/// [`compare`].
pub const THREADS_ENV: &str = "LDADAM_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub optimizer: &'static str,
    /// Final loss per seed, in the order of the requested seeds. Diverged
    /// runs count as `+inf`.
    pub final_losses: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
    pub diverged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

/// Linear-interpolation quantile of an unsorted sample (`+inf` sorts last).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi || v[lo] == v[hi] {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

fn pool() -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value.parse().map_err(|_| {
            ExperimentError::Invalid(format!(
                "{THREADS_ENV} must be a thread count, got {value:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| ExperimentError::Invalid(format!("thread pool: {e}")))
}

/// Runs every config under every seed, in parallel, and summarizes the final
/// losses per config. All configs must describe the same problem; the seed
/// replaces each config's own seed.
pub fn compare(configs: &[ExperimentConfig], seeds: &[u64]) -> Result<Comparison, ExperimentError> {
    let Some(first) = configs.first() else {
        return Err(ExperimentError::Invalid("nothing to compare".into()));
    };
    if seeds.is_empty() {
        return Err(ExperimentError::Invalid("no seeds given".into()));
    }
    if let Some(c) = configs.iter().find(|c| c.problem != first.problem) {
        return Err(ExperimentError::Invalid(format!(
            "configs {} and {} describe different problems",
            first.experiment.id, c.experiment.id
        )));
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Result<f64, ExperimentError>> = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let config = configs[i].with_seed(seed);
                let spec = config.optimizer.to_spec()?;
                let problem = config.problem.build(seed)?;
                let out = train(
                    problem.as_ref(),
                    &spec,
                    &config.schedule()?,
                    &config.settings(),
                )?;
                Ok(out.final_loss)
            })
            .collect()
    });
    let mut losses = results.into_iter();
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let final_losses = losses
            .by_ref()
            .take(seeds.len())
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(CompareRow {
            label: c.experiment.id.clone(),
            optimizer: c.optimizer.to_spec()?.label(),
            median: quantile(&final_losses, 0.5),
            iqr: quantile(&final_losses, 0.75) - quantile(&final_losses, 0.25),
            diverged: final_losses.iter().filter(|l| !l.is_finite()).count(),
            final_losses,
        });
    }
    Ok(Comparison {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    label: &'a str,
    optimizer: &'a str,
    seed: u64,
    final_loss: f64,
}

impl Comparison {
    /// One CSV row per (config, seed).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            for (seed, loss) in self.seeds.iter().zip(&row.final_losses) {
                w.serialize(CsvRow {
                    label: &row.label,
                    optimizer: row.optimizer,
                    seed: *seed,
                    final_loss: *loss,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:<8}  {:>12}  {:>12}  {:>8}",
            "config", "optim", "median", "iqr", "diverged"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<8}  {:>12.5e}  {:>12.5e}  {:>8}",
                r.label, r.optimizer, r.median, r.iqr, r.diverged
            );
        }
        s
    }
}
