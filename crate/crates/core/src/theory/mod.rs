//! Runtime checks of the analytical bounds on recorded trajectories.
//!
//! The bounds are stated with uniform constants `G ≥ ‖g_t‖` and `q ≥ q_t`.
//! The monitors substitute the running maxima `G_t = max_{τ≤t} ‖g_τ‖` and
//! `q̄_t = max_{τ≤t} q_τ`: the inductions behind the bounds only ever use the
//! constants on a prefix of the run, so the prefix maxima are valid. All
//! monitors are pure functions of their input.

mod gamma;
mod rate;

pub use gamma::{gamma_delta_monitor, GammaReport, GammaSnapshot, GAMMA_MAX_DIM};
pub use rate::{
    fit_log_log_slope, rate_probe, small_step_threshold, RatePoint, RateProbe, RateProbeReport,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("contraction factor must be below 1, got {0}")]
    ContractionTooLarge(f64),
    #[error("Γ monitor is limited to vectors of dimension <= {max}, got {dim}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("Γ monitor needs one column vector state per step: {0}")]
    BadSnapshot(String),
}

/// Per-step diagnostics of one run (or of one layer of a run).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub t: u64,
    /// Deterministic loss after the step.
    pub loss: f64,
    /// Norm of the stochastic gradient used at step `t` (all micro-batches).
    pub grad_norm: f64,
    /// Norm of the matrix the projection was fitted to.
    pub b_norm: f64,
    /// Norm of the error buffer written at step `t` for step `t + 1`.
    pub e_norm: f64,
    pub q: f64,
    pub vhat_max: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryConstants {
    pub g: f64,
    pub q_bar: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Gradient noise variance, when declared or estimated.
    pub sigma2: Option<f64>,
}

/// The constants of the convergence theorems for gradient bound `G` and
/// contraction factor `q_bar`.
pub fn compute_constants(
    g: f64,
    q_bar: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<TheoryConstants, TheoryError> {
    if !(0.0..1.0).contains(&q_bar) {
        return Err(TheoryError::ContractionTooLarge(q_bar));
    }
    let keep = (1.0 - beta1) * (1.0 - q_bar);
    let c = (1.0 - beta1 * (1.0 - q_bar)) / keep;
    let c0 = ((1.0 + beta2) / (1.0 - beta2) * c * c * g * g + epsilon).sqrt();
    let c1 = (beta1 + (1.0 - beta1) * q_bar) / keep;
    let c2 = (beta1 + (1.0 - beta1) * q_bar * q_bar) / (keep * keep);
    Ok(TheoryConstants {
        g,
        q_bar,
        c0,
        c1,
        c2,
        sigma2: None,
    })
}

/// Relative slack granted to every bound check.
pub const MONITOR_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub t: u64,
    pub quantity: &'static str,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorReport {
    pub monitor: &'static str,
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn verdict(&self) -> String {
        if self.passed() {
            format!("{}: pass ({} steps)", self.monitor, self.checked)
        } else {
            let v = &self.violations[0];
            format!(
                "{}: FAIL ({} of {} steps; first at t={}: {} = {:e} > {:e})",
                self.monitor,
                self.violations.len(),
                self.checked,
                v.t,
                v.quantity,
                v.value,
                v.bound
            )
        }
    }
}

/// Running maxima `(G_t, q̄_t)` along a trajectory.
fn running_maxima(
    trajectory: &[TrajectoryRecord],
) -> impl Iterator<Item = (&TrajectoryRecord, f64, f64)> {
    trajectory.iter().scan((0.0f64, 0.0f64), |(g, q), rec| {
        *g = g.max(rec.grad_norm);
        *q = q.max(rec.q);
        Some((rec, *g, *q))
    })
}

/// Checks `‖b_t‖ ≤ G_t/(1 − q̄_t)` and
/// `‖e_{t+1}‖ ≤ q̄_t G_t / ((1 − β₁)(1 − q̄_t))` at every step.
///
/// Both checks allow `1e-9 · G_t/((1 − β₁)(1 − q̄_t))` of slack, which covers
/// rounding when `q̄_t` is at machine precision and the error bound itself
/// collapses to zero. Valid for analytical-mode trajectories.
pub fn lemma1_monitor(trajectory: &[TrajectoryRecord], beta1: f64) -> MonitorReport {
    let mut violations = Vec::new();
    for (rec, g, q) in running_maxima(trajectory) {
        if q >= 1.0 {
            violations.push(Violation {
                t: rec.t,
                quantity: "q",
                value: q,
                bound: 1.0,
            });
            continue;
        }
        let slack = MONITOR_SLACK * g / ((1.0 - beta1) * (1.0 - q));
        let b_bound = g / (1.0 - q);
        if rec.b_norm > b_bound + slack {
            violations.push(Violation {
                t: rec.t,
                quantity: "b_norm",
                value: rec.b_norm,
                bound: b_bound,
            });
        }
        let e_bound = q * g / ((1.0 - beta1) * (1.0 - q));
        if rec.e_norm > e_bound + slack {
            violations.push(Violation {
                t: rec.t,
                quantity: "e_norm",
                value: rec.e_norm,
                bound: e_bound,
            });
        }
    }
    MonitorReport {
        monitor: "lemma1",
        checked: trajectory.len(),
        violations,
    }
}

/// The second-moment bound `(1 + β₂)/(1 − β₂) · C² G²` with
/// `C = (1 − (1 − q)β₁)/((1 − β₁)(1 − q))`.
pub fn second_moment_bound(g: f64, q: f64, beta1: f64, beta2: f64) -> f64 {
    let c = (1.0 - (1.0 - q) * beta1) / ((1.0 - beta1) * (1.0 - q));
    (1.0 + beta2) / (1.0 - beta2) * c * c * g * g
}

/// Checks `vhat_max(t) ≤ (1 + β₂)/(1 − β₂) · C_t² G_t²` with `1e-9` relative
/// slack. Valid for analytical-mode trajectories.
pub fn lemma4_monitor(trajectory: &[TrajectoryRecord], beta1: f64, beta2: f64) -> MonitorReport {
    let mut violations = Vec::new();
    for (rec, g, q) in running_maxima(trajectory) {
        let bound = if q < 1.0 {
            second_moment_bound(g, q, beta1, beta2)
        } else {
            f64::INFINITY
        };
        if rec.vhat_max > bound * (1.0 + MONITOR_SLACK) {
            violations.push(Violation {
                t: rec.t,
                quantity: "vhat_max",
                value: rec.vhat_max,
                bound,
            });
        }
    }
    MonitorReport {
        monitor: "lemma4",
        checked: trajectory.len(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_at_zero_contraction() {
        let c = compute_constants(1.0, 0.0, 0.9, 0.99, 1e-8).unwrap();
        assert!((c.c2 - 90.0).abs() < 1e-12);
        assert!((c.c1 - 9.0).abs() < 1e-12);
        // C = 1 at q = 0
        assert!((c.c0 - (199.0f64 + 1e-8).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_bound_gives_sqrt_epsilon() {
        for q in [0.0, 0.3, 0.9] {
            let c = compute_constants(0.0, q, 0.9, 0.99, 1e-8).unwrap();
            assert_eq!(c.c0, 1e-8f64.sqrt());
        }
    }

    #[test]
    fn contraction_of_one_is_rejected() {
        assert!(compute_constants(1.0, 1.0, 0.9, 0.99, 1e-8).is_err());
    }

    #[test]
    fn empty_and_zero_trajectories_pass() {
        assert!(lemma1_monitor(&[], 0.9).passed());
        let zeros: Vec<TrajectoryRecord> = (1..=10)
            .map(|t| TrajectoryRecord {
                t,
                ..Default::default()
            })
            .collect();
        assert!(lemma1_monitor(&zeros, 0.9).passed());
        assert!(lemma4_monitor(&zeros, 0.9, 0.99).passed());
    }

    #[test]
    fn full_capture_forces_zero_error() {
        let rec = |e_norm| TrajectoryRecord {
            t: 1,
            grad_norm: 1.0,
            b_norm: 0.1,
            e_norm,
            ..Default::default()
        };
        assert!(lemma1_monitor(&[rec(0.0)], 0.9).passed());
        assert!(!lemma1_monitor(&[rec(1e-3)], 0.9).passed());
    }

    #[test]
    fn constant_unit_gradient_second_moment_bound() {
        assert!((second_moment_bound(1.0, 0.0, 0.9, 0.99) - 199.0).abs() < 1e-9);
        // v_t = 1 − 0.99ᵗ for a constant unit gradient never reaches the bound
        let traj: Vec<TrajectoryRecord> = (1..=500)
            .map(|t| TrajectoryRecord {
                t,
                grad_norm: 1.0,
                vhat_max: 1.0 - 0.99f64.powi(t as i32),
                ..Default::default()
            })
            .collect();
        assert!(lemma4_monitor(&traj, 0.9, 0.99).passed());
    }

    #[test]
    fn violations_are_reported_with_their_step() {
        let traj = [
            TrajectoryRecord {
                t: 1,
                grad_norm: 1.0,
                b_norm: 1.0,
                ..Default::default()
            },
            TrajectoryRecord {
                t: 2,
                grad_norm: 0.5,
                b_norm: 1.5,
                ..Default::default()
            },
        ];
        let report = lemma1_monitor(&traj, 0.9);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].t, 2);
        assert!(report.verdict().starts_with("lemma1: FAIL"));
    }
}
