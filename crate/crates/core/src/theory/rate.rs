use crate::experiment::{train, ExperimentError, OptimizerSpec, RunSettings};
use crate::optim::{Mode, OptimizerConfig, Schedule};
use crate::problems::{Problem, QuadraticProblem};

use super::TheoryConstants;

/// Step-size family for the convergence-rate probe:
/// `lr(T) = min(cap, scale · ln T / (μ T))`, a constant step over a run of
/// length `T`. `cap` plays the role of the small-step threshold and `scale`
/// that of `2 C₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateProbe {
    pub horizons: Vec<u64>,
    pub scale: f64,
    pub cap: f64,
    pub seed: u64,
}

impl Default for RateProbe {
    fn default() -> Self {
        Self {
            horizons: (8..=13).map(|k| 1u64 << k).collect(),
            scale: 1.0,
            cap: 1e-2,
            seed: 1,
        }
    }
}

impl RateProbe {
    pub fn lr(&self, horizon: u64, mu: f64) -> f64 {
        let t = horizon as f64;
        self.cap.min(self.scale * t.ln() / (mu * t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatePoint {
    pub horizon: u64,
    pub lr: f64,
    /// `f(θ_T) − f*`, or `+inf` when the run diverged.
    pub gap: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateProbeReport {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `ln gap` against `ln T`, over the horizons where
    /// the decaying branch of the step size is active (all finite points if
    /// fewer than two qualify).
    pub slope: Option<f64>,
}

/// The small-step threshold
/// `min(ε/(16 L C₀), C₀(1 − β₁)(1 − q)/(2μ), ε^{3/4}/(6 L √(C₀ C₂)))`.
pub fn small_step_threshold(k: &TheoryConstants, l: f64, mu: f64, beta1: f64, epsilon: f64) -> f64 {
    let a = epsilon / (16.0 * l * k.c0);
    let b = k.c0 * (1.0 - beta1) * (1.0 - k.q_bar) / (2.0 * mu);
    let c = epsilon.powf(0.75) / (6.0 * l * (k.c0 * k.c2).sqrt());
    a.min(b).min(c)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs analytical-mode LDAdam once per horizon `T` with the probe's step
/// size and records the final optimality gap. Divergence is reported per
/// point.
pub fn rate_probe(
    problem: &QuadraticProblem,
    config: &OptimizerConfig,
    probe: &RateProbe,
) -> Result<RateProbeReport, ExperimentError> {
    let mu = problem
        .pl_constant()
        .ok_or_else(|| ExperimentError::Invalid("rate probe needs a PL constant".into()))?;
    let f_star = problem.optimum().unwrap_or(0.0);
    let mut ld = config.clone();
    ld.mode = Mode::Analytical;
    let spec = OptimizerSpec::LdAdam(ld);
    let mut points = Vec::with_capacity(probe.horizons.len());
    for &horizon in &probe.horizons {
        let lr = probe.lr(horizon, mu);
        let mut settings = RunSettings::new(horizon, probe.seed);
        settings.record_every = horizon;
        let out = train(problem, &spec, &Schedule::constant(lr, horizon), &settings)?;
        let diverged = out.divergence.is_some();
        points.push(RatePoint {
            horizon,
            lr,
            gap: if diverged {
                f64::INFINITY
            } else {
                out.final_loss - f_star
            },
            diverged,
        });
    }
    let decaying: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.lr < probe.cap && !p.diverged)
        .map(|p| (p.horizon as f64, p.gap))
        .collect();
    let slope = if decaying.len() >= 2 {
        fit_log_log_slope(&decaying)
    } else {
        let all: Vec<(f64, f64)> = points.iter().map(|p| (p.horizon as f64, p.gap)).collect();
        fit_log_log_slope(&all)
    };
    Ok(RateProbeReport { points, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use crate::theory::compute_constants;

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = [256.0f64, 512.0, 1024.0]
            .iter()
            .map(|&t| (t, 3.0 / t))
            .collect();
        assert!((fit_log_log_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(fit_log_log_slope(&pts[..1]), None);
    }

    #[test]
    fn step_family_is_capped() {
        let probe = RateProbe::default();
        assert_eq!(probe.lr(256, 1e-6), probe.cap);
        let t = 8192.0f64;
        assert!((probe.lr(8192, 1.0) - t.ln() / t).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_positive_and_tiny() {
        let k = compute_constants(1.0, 0.5, 0.9, 0.99, 1e-8).unwrap();
        let eta = small_step_threshold(&k, 10.0, 1.0, 0.9, 1e-8);
        assert!(eta > 0.0 && eta < 1e-9);
    }

    #[test]
    fn larger_curvature_floor_gives_smaller_gap_at_equal_step() {
        // a large scale keeps the cap active, so both runs use the same step
        let run = |mu: f64| {
            let p = QuadraticProblem::random(
                vec![(8, 1)],
                mu,
                40.0,
                false,
                0.3,
                &mut rng::stream(2, Stream::Data),
            )
            .unwrap();
            let probe = RateProbe {
                horizons: vec![1024],
                scale: 1e3,
                cap: 1e-2,
                seed: 4,
            };
            rate_probe(&p, &OptimizerConfig::with_rank(2), &probe)
                .unwrap()
                .points[0]
                .gap
        };
        assert!(run(4.0) < run(1.0));
    }
}
