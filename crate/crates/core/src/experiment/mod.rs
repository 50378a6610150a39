//! Training loop, run records and the file-based experiment runner.

mod compare;
mod config;
mod output;

pub use compare::{compare, quantile, CompareRow, Comparison, THREADS_ENV};
pub use config::{DecayKind, ModeKind, NegativityKind, ProviderKind, VariantKind};
pub use config::{
    ExperimentConfig, ExperimentSection, OptimizerSection, ProblemSpec, ScheduleSection,
};
pub use output::{run_experiment, write_records_csv, RunFiles, CSV_HEADER};

use std::time::Instant;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::optim::{
    AdamConfig, AmsGradVariant, LayerOptimizer, Mode, OptimError, OptimizerConfig, Schedule,
};
use crate::problems::{Problem, ProblemError};
use crate::rng::{self, Stream};
use crate::theory::{
    gamma_delta_monitor, lemma1_monitor, lemma4_monitor, GammaSnapshot, TrajectoryRecord,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Which optimizer drives a run; one state is built per parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerSpec {
    LdAdam(OptimizerConfig),
    Adam(AdamConfig),
    AmsGrad(AdamConfig, AmsGradVariant),
    GaLore {
        adam: AdamConfig,
        rank: usize,
        frequency: u64,
    },
}

impl OptimizerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::LdAdam(_) => "ldadam",
            Self::Adam(_) => "adam",
            Self::AmsGrad(..) => "amsgrad",
            Self::GaLore { .. } => "galore",
        }
    }

    pub fn build(&self, shapes: &[(usize, usize)]) -> Result<Vec<LayerOptimizer>, OptimError> {
        shapes
            .iter()
            .enumerate()
            .map(|(layer, &shape)| match self {
                Self::LdAdam(c) => LayerOptimizer::ldadam(shape, c.clone(), layer),
                Self::Adam(c) => LayerOptimizer::adam(shape, *c),
                Self::AmsGrad(c, variant) => LayerOptimizer::amsgrad(shape, *c, *variant),
                Self::GaLore {
                    adam,
                    rank,
                    frequency,
                } => LayerOptimizer::galore(shape, *adam, *rank, *frequency),
            })
            .collect()
    }

    fn ldadam_config(&self) -> Option<&OptimizerConfig> {
        match self {
            Self::LdAdam(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Fit-target and error-buffer norm bounds.
    Lemma1,
    /// Second-moment growth bound.
    Lemma4,
    /// Total variation of the preconditioner (column layers only).
    GammaDelta,
}

impl Monitor {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lemma1 => "lemma1",
            Self::Lemma4 => "lemma4",
            Self::GammaDelta => "gamma_delta",
        }
    }
}

/// `record_every` default: every step up to 10⁴ steps, else every tenth.
pub fn default_record_every(steps: u64) -> u64 {
    if steps <= 10_000 {
        1
    } else {
        10
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub steps: u64,
    pub micro_batches: u32,
    pub record_every: u64,
    pub seed: u64,
    pub monitors: Vec<Monitor>,
    /// Exact gradients instead of stochastic ones.
    pub deterministic: bool,
}

impl RunSettings {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            micro_batches: 1,
            record_every: default_record_every(steps),
            seed,
            monitors: Vec::new(),
            deterministic: false,
        }
    }
}

/// Worst values of the optimizer invariants seen during a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantTally {
    pub steps: u64,
    pub max_orthonormality_error: f64,
    pub min_second_moment: f64,
    /// Steps at which an analytical-mode `vhat_max` decreased.
    pub vhat_decreases: u64,
}

impl Default for InvariantTally {
    fn default() -> Self {
        Self {
            steps: 0,
            max_orthonormality_error: 0.0,
            min_second_moment: f64::INFINITY,
            vhat_decreases: 0,
        }
    }
}

impl InvariantTally {
    pub fn merge(&mut self, other: &Self) {
        self.steps += other.steps;
        self.max_orthonormality_error = self
            .max_orthonormality_error
            .max(other.max_orthonormality_error);
        self.min_second_moment = self.min_second_moment.min(other.min_second_moment);
        self.vhat_decreases += other.vhat_decreases;
    }

    pub fn clean(&self) -> bool {
        self.max_orthonormality_error <= 1e-10
            && !(self.min_second_moment < 0.0)
            && self.vhat_decreases == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorVerdict {
    pub monitor: Monitor,
    pub layer: usize,
    pub passed: bool,
    /// False when the bound does not apply to the run (practical mode), in
    /// which case the verdict is informational.
    pub binding: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub step: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Whole-model records at the recorded steps (and always the last
    /// completed step).
    pub records: Vec<TrajectoryRecord>,
    /// Every-step records per layer, kept when monitors are requested.
    pub layer_records: Vec<Vec<TrajectoryRecord>>,
    pub gamma_snapshots: Vec<Vec<GammaSnapshot>>,
    pub params: Vec<Matrix>,
    pub tally: InvariantTally,
    pub steps_completed: u64,
    pub final_loss: f64,
    pub gap: Option<f64>,
    pub divergence: Option<Divergence>,
    pub verdicts: Vec<MonitorVerdict>,
    pub wall_seconds: f64,
}

impl RunOutcome {
    pub fn monitors_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed || !v.binding)
    }
}

fn total_norm(ms: &[Matrix]) -> f64 {
    ms.iter().map(Matrix::frobenius_norm_sq).sum::<f64>().sqrt()
}

/// Trains `problem` from its seeded initial point.
///
/// Each step draws `micro_batches` stochastic gradients, scales each by
/// `1/micro_batches` and accumulates them before one optimizer step per
/// layer. Initial parameters come from the seed's init stream, gradient
/// noise from its gradient stream. A non-finite loss or optimizer state ends
/// the run early with [`RunOutcome::divergence`] set; records never contain
/// non-finite values.
pub fn train(
    problem: &dyn Problem,
    optimizer: &OptimizerSpec,
    schedule: &Schedule,
    settings: &RunSettings,
) -> Result<RunOutcome, ExperimentError> {
    let started = Instant::now();
    if settings.steps == 0 || settings.micro_batches == 0 || settings.record_every == 0 {
        return Err(ExperimentError::Invalid(
            "steps, micro_batches and record_every must be positive".into(),
        ));
    }
    if schedule.total_steps < settings.steps {
        return Err(ExperimentError::Invalid(format!(
            "schedule covers {} steps, run needs {}",
            schedule.total_steps, settings.steps
        )));
    }
    schedule.validate()?;
    let ld_config = optimizer.ldadam_config();
    if !settings.monitors.is_empty() && ld_config.is_none() {
        return Err(ExperimentError::Invalid(format!(
            "monitors need an ldadam run, got {}",
            optimizer.label()
        )));
    }
    let analytical = ld_config.is_some_and(|c| c.mode == Mode::Analytical);
    let shapes = problem.param_shapes();
    let want_gamma = settings.monitors.contains(&Monitor::GammaDelta);
    if want_gamma && shapes.iter().any(|&(_, m)| m != 1) {
        return Err(ExperimentError::Invalid(
            "the gamma_delta monitor needs vector (d x 1) parameters".into(),
        ));
    }
    let keep_layers = !settings.monitors.is_empty();

    let mut layers = optimizer.build(&shapes)?;
    let mut params = problem.initial_params(&mut rng::stream(settings.seed, Stream::Init));
    let mut grad_rng = rng::stream(settings.seed, Stream::Gradient);
    let scale = 1.0 / settings.micro_batches as f64;

    let mut out = RunOutcome {
        records: Vec::new(),
        layer_records: vec![Vec::new(); if keep_layers { shapes.len() } else { 0 }],
        gamma_snapshots: vec![Vec::new(); if want_gamma { shapes.len() } else { 0 }],
        params: Vec::new(),
        tally: InvariantTally::default(),
        steps_completed: 0,
        final_loss: problem.loss(&params),
        gap: None,
        divergence: None,
        verdicts: Vec::new(),
        wall_seconds: 0.0,
    };
    let mut prev_vhat = vec![0.0f64; shapes.len()];

    'steps: for t in 1..=settings.steps {
        let lr = schedule.lr(t)?;
        let mut step_grad: Vec<Matrix> = shapes.iter().map(|&(n, m)| Matrix::zeros(n, m)).collect();
        for _ in 0..settings.micro_batches {
            let g = if settings.deterministic {
                problem.gradient(&params)
            } else {
                problem.stochastic_gradient(&params, &mut grad_rng)
            };
            for ((layer, acc), gi) in layers.iter_mut().zip(&mut step_grad).zip(g) {
                let gi = if settings.micro_batches == 1 {
                    gi
                } else {
                    gi.scale(scale)
                };
                if let Err(e) = layer.accumulate(&gi) {
                    if let OptimError::NonFinite { .. } = e {
                        out.divergence = Some(Divergence {
                            step: t,
                            reason: e.to_string(),
                        });
                        break 'steps;
                    }
                    return Err(e.into());
                }
                acc.axpy(1.0, &gi);
            }
        }

        let mut rec = TrajectoryRecord {
            t,
            lr,
            grad_norm: total_norm(&step_grad),
            ..Default::default()
        };
        let (mut b_sq, mut e_sq) = (0.0, 0.0);
        for (i, layer) in layers.iter_mut().enumerate() {
            let stats = match layer.step(&mut params[i], lr) {
                Ok(s) => s,
                Err(e @ OptimError::NonFinite { .. }) => {
                    out.divergence = Some(Divergence {
                        step: t,
                        reason: e.to_string(),
                    });
                    break 'steps;
                }
                Err(e) => return Err(e.into()),
            };
            b_sq += stats.fit_norm * stats.fit_norm;
            e_sq += stats.error_norm * stats.error_norm;
            rec.q = rec.q.max(stats.q);
            rec.vhat_max = rec.vhat_max.max(stats.vhat_max);

            let tally = &mut out.tally;
            tally.max_orthonormality_error = tally
                .max_orthonormality_error
                .max(stats.orthonormality_error);
            tally.min_second_moment = tally.min_second_moment.min(stats.min_second_moment);
            if analytical {
                if stats.vhat_max < prev_vhat[i] {
                    tally.vhat_decreases += 1;
                }
                prev_vhat[i] = stats.vhat_max;
            }
            if keep_layers {
                out.layer_records[i].push(TrajectoryRecord {
                    t,
                    // the loss is a whole-model quantity
                    loss: 0.0,
                    grad_norm: step_grad[i].frobenius_norm(),
                    b_norm: stats.fit_norm,
                    e_norm: stats.error_norm,
                    q: stats.q,
                    vhat_max: stats.vhat_max,
                    lr,
                });
            }
            if want_gamma {
                let state = layer.as_ldadam().expect("checked above");
                out.gamma_snapshots[i].push(GammaSnapshot {
                    basis: state.basis().expect("set by the first step").clone(),
                    vhat: state.preconditioner().into_vec(),
                });
            }
        }
        out.tally.steps += 1;
        rec.b_norm = b_sq.sqrt();
        rec.e_norm = e_sq.sqrt();

        let record_now = t % settings.record_every == 0 || t == settings.steps;
        if record_now {
            rec.loss = problem.loss(&params);
            let finite = [
                rec.loss,
                rec.grad_norm,
                rec.b_norm,
                rec.e_norm,
                rec.q,
                rec.vhat_max,
            ]
            .iter()
            .all(|x| x.is_finite());
            if !finite {
                out.divergence = Some(Divergence {
                    step: t,
                    reason: format!("non-finite loss or diagnostics at step {t}"),
                });
                break;
            }
            out.records.push(rec);
        } else if !rec.grad_norm.is_finite() {
            out.divergence = Some(Divergence {
                step: t,
                reason: format!("non-finite gradient at step {t}"),
            });
            break;
        }
        out.steps_completed = t;
    }

    out.final_loss = if out.divergence.is_none() {
        problem.loss(&params)
    } else {
        f64::INFINITY
    };
    out.gap = problem
        .optimum()
        .filter(|_| out.final_loss.is_finite())
        .map(|f| out.final_loss - f);
    out.params = params;
    if let Some(c) = ld_config {
        out.verdicts = evaluate_monitors(&settings.monitors, &out, c);
    }
    out.wall_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

fn evaluate_monitors(
    monitors: &[Monitor],
    out: &RunOutcome,
    c: &OptimizerConfig,
) -> Vec<MonitorVerdict> {
    let binding = c.mode == Mode::Analytical;
    let mut verdicts = Vec::new();
    for &monitor in monitors {
        for (layer, traj) in out.layer_records.iter().enumerate() {
            let (passed, detail) = match monitor {
                Monitor::Lemma1 => {
                    let r = lemma1_monitor(traj, c.beta1);
                    (r.passed(), r.verdict())
                }
                Monitor::Lemma4 => {
                    let r = lemma4_monitor(traj, c.beta1, c.beta2);
                    (r.passed(), r.verdict())
                }
                Monitor::GammaDelta => {
                    match gamma_delta_monitor(&out.gamma_snapshots[layer], c.epsilon) {
                        Ok(r) => (r.passed(), r.verdict()),
                        Err(e) => (false, format!("gamma_delta: refused ({e})")),
                    }
                }
            };
            verdicts.push(MonitorVerdict {
                monitor,
                layer,
                passed,
                binding,
                detail,
            });
        }
    }
    verdicts
}

/// Mean squared deviation `E‖g − ∇f‖²` over `draws` stochastic gradients at
/// `params`, using the seed's auxiliary stream.
pub fn estimate_noise_variance(
    problem: &dyn Problem,
    params: &[Matrix],
    draws: usize,
    seed: u64,
) -> f64 {
    let exact = problem.gradient(params);
    let mut rng = rng::stream(seed, Stream::Aux);
    let total: f64 = (0..draws)
        .map(|_| {
            let g = problem.stochastic_gradient(params, &mut rng);
            g.iter()
                .zip(&exact)
                .map(|(a, b)| a.sub(b).frobenius_norm_sq())
                .sum::<f64>()
        })
        .sum();
    total / draws as f64
}
