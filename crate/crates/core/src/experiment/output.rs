use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::problems::Problem;
use crate::rng::{self, Stream};
use crate::theory::{compute_constants, TheoryConstants, TrajectoryRecord};

use super::{
    estimate_noise_variance, train, ExperimentConfig, ExperimentError, OptimizerSpec, RunOutcome,
};

pub const CSV_HEADER: &str = "step,loss,grad_norm,b_norm,e_norm,q_r,vhat_max,lr";

#[derive(Serialize)]
struct CsvRow {
    step: u64,
    loss: f64,
    grad_norm: f64,
    b_norm: f64,
    e_norm: f64,
    q_r: f64,
    vhat_max: f64,
    lr: f64,
}

pub fn write_records_csv<W: io::Write>(
    records: &[TrajectoryRecord],
    out: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(CsvRow {
            step: r.t,
            loss: r.loss,
            grad_norm: r.grad_norm,
            b_norm: r.b_norm,
            e_norm: r.e_norm,
            q_r: r.q,
            vhat_max: r.vhat_max,
            lr: r.lr,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MonitorRow<'a> {
    experiment: &'a str,
    monitor: &'static str,
    layer: usize,
    passed: bool,
    binding: bool,
    detail: &'a str,
}

/// Paths written by [`run_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub monitors: PathBuf,
}

impl RunFiles {
    pub fn beside(trajectory: &Path) -> Self {
        Self {
            trajectory: trajectory.to_path_buf(),
            summary: trajectory.with_extension("summary.txt"),
            monitors: trajectory.with_extension("monitors.csv"),
        }
    }
}

/// Theory constants for a finished LDAdam run: `G` and `q̄` are the maxima
/// over the recorded steps, `σ²` is the problem's declared noise or an
/// estimate from 256 draws at the initial point.
fn run_constants(
    config: &ExperimentConfig,
    spec: &OptimizerSpec,
    problem: &dyn Problem,
    outcome: &RunOutcome,
) -> Option<TheoryConstants> {
    let OptimizerSpec::LdAdam(c) = spec else {
        return None;
    };
    let g = outcome
        .records
        .iter()
        .map(|r| r.grad_norm)
        .fold(0.0, f64::max);
    let q = outcome.records.iter().map(|r| r.q).fold(0.0, f64::max);
    let mut k = compute_constants(g, q, c.beta1, c.beta2, c.epsilon).ok()?;
    k.sigma2 = Some(match problem.noise_variance() {
        Some(s) => s,
        None if config.experiment.deterministic => 0.0,
        None => {
            let seed = config.experiment.seed;
            let theta = problem.initial_params(&mut rng::stream(seed, Stream::Init));
            estimate_noise_variance(problem, &theta, 256, seed)
        }
    });
    Some(k)
}

fn summary_text(
    config: &ExperimentConfig,
    spec: &OptimizerSpec,
    outcome: &RunOutcome,
    k: Option<TheoryConstants>,
) -> String {
    let mut s = String::new();
    let e = &config.experiment;
    let _ = writeln!(s, "experiment: {}", e.id);
    let _ = writeln!(s, "optimizer: {}", spec.label());
    let _ = writeln!(s, "seed: {}", e.seed);
    let _ = writeln!(
        s,
        "steps_completed: {} of {}",
        outcome.steps_completed, e.steps
    );
    let _ = writeln!(s, "final_loss: {:e}", outcome.final_loss);
    match outcome.gap {
        Some(g) => {
            let _ = writeln!(s, "gap: {g:e}");
        }
        None => {
            let _ = writeln!(s, "gap: unknown");
        }
    }
    if let Some(d) = &outcome.divergence {
        let _ = writeln!(s, "diverged: step {} ({})", d.step, d.reason);
    }
    let t = &outcome.tally;
    let _ = writeln!(
        s,
        "invariants: max_orthonormality_error {:e}, min_second_moment {:e}, vhat_decreases {}",
        t.max_orthonormality_error, t.min_second_moment, t.vhat_decreases
    );
    if let Some(k) = k {
        let _ = writeln!(
            s,
            "constants: G {:e}, q_bar {:e}, C0 {:e}, C1 {:e}, C2 {:e}, sigma2 {:e}",
            k.g,
            k.q_bar,
            k.c0,
            k.c1,
            k.c2,
            k.sigma2.unwrap_or(f64::NAN)
        );
    }
    for v in &outcome.verdicts {
        let note = if v.binding {
            ""
        } else {
            " [informational: practical mode]"
        };
        let _ = writeln!(s, "monitor layer {}: {}{}", v.layer, v.detail, note);
    }
    let _ = writeln!(s, "wall_seconds: {:.3}", outcome.wall_seconds);
    s
}

/// Runs one configured experiment. With an output path, writes the
/// trajectory CSV (partial on divergence), a summary and the monitor CSV
/// next to it. Returns the outcome and the summary text.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunOutcome, String), ExperimentError> {
    let spec = config.optimizer.to_spec()?;
    let problem = config.problem.build(config.experiment.seed)?;
    let outcome = train(
        problem.as_ref(),
        &spec,
        &config.schedule()?,
        &config.settings(),
    )?;
    let k = run_constants(config, &spec, problem.as_ref(), &outcome);
    let summary = summary_text(config, &spec, &outcome, k);
    if let Some(path) = &config.experiment.output {
        let files = RunFiles::beside(path);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_records_csv(&outcome.records, fs::File::create(&files.trajectory)?)?;
        fs::write(&files.summary, &summary)?;
        let mut w = csv::Writer::from_path(&files.monitors)?;
        if outcome.verdicts.is_empty() {
            w.write_record([
                "experiment",
                "monitor",
                "layer",
                "passed",
                "binding",
                "detail",
            ])?;
        }
        for v in &outcome.verdicts {
            w.serialize(MonitorRow {
                experiment: &config.experiment.id,
                monitor: v.monitor.as_str(),
                layer: v.layer,
                passed: v.passed,
                binding: v.binding,
                detail: &v.detail,
            })?;
        }
        w.flush()?;
    }
    Ok((outcome, summary))
}
