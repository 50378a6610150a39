//! Self-test suite behind the `check` subcommand: gradient checks,
//! optimizer equivalences, invariants and monitors on small problems.

use crate::accounting::{builtin_model, memory_bytes, optimizer_state_tokens, OptimizerKind};
use crate::experiment::{train, Monitor, OptimizerSpec, RunSettings};
use crate::linalg::{block_power_iteration_step, residual_ratio, truncated_svd, Matrix};
use crate::optim::{
    AdamConfig, AdamState, FixedBasis, LdAdamState, Mode, OptimizerConfig, ProjectionProvider,
    Schedule,
};
use crate::problems::{
    finite_diff_check, LogisticConfig, LogisticProblem, MlpConfig, MlpProblem, Problem,
    QuadraticProblem, RosenbrockProblem,
};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

fn verdict(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradients() -> Result<String, String> {
    let quadratic = QuadraticProblem::random(
        vec![(5, 4), (3, 1)],
        0.5,
        20.0,
        true,
        0.0,
        &mut rng::stream(1, Stream::Data),
    )
    .map_err(err)?;
    let logistic = LogisticProblem::new(
        LogisticConfig {
            n_samples: 32,
            n_features: 6,
            classes: 3,
            batch_size: 8,
            ..Default::default()
        },
        &mut rng::stream(2, Stream::Data),
    )
    .map_err(err)?;
    let rosenbrock = RosenbrockProblem::new(vec![(2, 2)], 0.0).map_err(err)?;
    let mlp = MlpProblem::new(
        MlpConfig {
            widths: vec![4, 6, 3],
            n_samples: 16,
            batch_size: 4,
            ..Default::default()
        },
        &mut rng::stream(3, Stream::Data),
    )
    .map_err(err)?;
    let cases: [(&dyn Problem, f64, f64); 4] = [
        (&quadratic, 1e-5, 1e-6),
        (&logistic, 1e-5, 1e-5),
        (&rosenbrock, 1e-6, 1e-5),
        (&mlp, 1e-5, 1e-4),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, h, tol) in cases {
        let worst = (0..3u64)
            .map(|k| finite_diff_check(p, &p.initial_params(&mut rng::stream(k, Stream::Aux)), h))
            .fold(0.0, f64::max);
        ok &= worst <= tol;
        parts.push(format!("{} {worst:.1e}", p.name()));
    }
    verdict(ok, parts.join(", "))
}

fn scalar_layer_is_adam() -> Result<String, String> {
    let config = OptimizerConfig {
        rho: 0.0,
        ..OptimizerConfig::with_rank(1)
    };
    let adam = AdamConfig {
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    let mut ld = LdAdamState::new((1, 16), config, 0).map_err(err)?;
    let mut reference = AdamState::new((1, 16), adam).map_err(err)?;
    let mut g = rng::stream(4, Stream::Gradient);
    let mut a = rng::gaussian_matrix(&mut g, 1, 16);
    let mut b = a.clone();
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let grad = rng::gaussian_matrix(&mut g, 1, 16).add(&a);
        ld.accumulate(&grad).map_err(err)?;
        ld.step(&mut a, 0.01).map_err(err)?;
        reference.step(&mut b, &grad, 0.01).map_err(err)?;
        worst = worst.max(rel(&a, &b));
        if worst > 1e-12 {
            break;
        }
    }
    verdict(
        worst <= 1e-12,
        format!("max relative deviation {worst:.1e}"),
    )
}

fn fixed_rows_are_adam() -> Result<String, String> {
    let (d, r) = (12, 3);
    let config = OptimizerConfig {
        error_feedback: false,
        projection_provider: ProjectionProvider::Fixed(FixedBasis::LeadingCoordinates),
        ..OptimizerConfig::with_rank(r)
    };
    let adam = AdamConfig {
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    let mut ld = LdAdamState::new((d, 1), config, 0).map_err(err)?;
    let mut reference = AdamState::new((r, 1), adam).map_err(err)?;
    let mut g = rng::stream(5, Stream::Gradient);
    let mut theta = rng::gaussian_matrix(&mut g, d, 1);
    let tail = theta.block(r, 0, d - r, 1);
    let mut head = theta.block(0, 0, r, 1);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let grad = rng::gaussian_matrix(&mut g, d, 1);
        ld.accumulate(&grad).map_err(err)?;
        ld.step(&mut theta, 0.01).map_err(err)?;
        reference
            .step(&mut head, &grad.block(0, 0, r, 1), 0.01)
            .map_err(err)?;
        worst = worst.max(rel(&theta.block(0, 0, r, 1), &head));
    }
    let untouched = theta.block(r, 0, d - r, 1) == tail;
    verdict(
        worst <= 1e-12 && untouched,
        format!("leading rows {worst:.1e}, trailing rows untouched: {untouched}"),
    )
}

fn error_feedback_identity() -> Result<String, String> {
    let config = OptimizerConfig::with_rank(3);
    let beta1 = config.beta1;
    let mut state = LdAdamState::new((10, 14), config, 0).map_err(err)?;
    let mut g = rng::stream(6, Stream::Gradient);
    let mut theta = Matrix::zeros(10, 14);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        state
            .accumulate(&rng::gaussian_matrix(&mut g, 10, 14))
            .map_err(err)?;
        let carried = match state.basis() {
            Some(p) => p.matrix().matmul(state.first_moment()),
            None => Matrix::zeros(10, 14),
        };
        let b = carried
            .scale(beta1)
            .add(&state.accumulator().scale(1.0 - beta1));
        state.step(&mut theta, 0.01).map_err(err)?;
        let kept = state
            .basis()
            .expect("set by step")
            .matrix()
            .matmul(state.first_moment());
        let lhs = state.accumulator().scale(1.0 - beta1);
        worst = worst.max(lhs.sub(&b.sub(&kept)).frobenius_norm() / b.frobenius_norm());
    }
    verdict(worst <= 1e-12, format!("max relative residual {worst:.1e}"))
}

fn split_accumulation() -> Result<String, String> {
    let config = OptimizerConfig {
        error_feedback: false,
        ..OptimizerConfig::with_rank(2)
    };
    let mut split = LdAdamState::new((6, 9), config.clone(), 0).map_err(err)?;
    let mut summed = LdAdamState::new((6, 9), config, 0).map_err(err)?;
    let mut g = rng::stream(7, Stream::Gradient);
    let mut a = rng::gaussian_matrix(&mut g, 6, 9);
    let mut b = a.clone();
    for _ in 0..200 {
        let g1 = rng::gaussian_matrix(&mut g, 6, 9);
        let g2 = rng::gaussian_matrix(&mut g, 6, 9);
        split.accumulate(&g1).map_err(err)?;
        split.accumulate(&g2).map_err(err)?;
        split.step(&mut a, 0.01).map_err(err)?;
        summed.accumulate(&g1.add(&g2)).map_err(err)?;
        summed.step(&mut b, 0.01).map_err(err)?;
    }
    verdict(a == b, format!("bit-identical after 200 steps: {}", a == b))
}

fn subspace_fitting() -> Result<String, String> {
    let mut g = rng::stream(8, Stream::Aux);
    let (n, m, r) = (16, 24, 3);
    let u = rng::random_orthonormal(&mut g, n, n);
    let v = rng::random_orthonormal(&mut g, m, n);
    let s: Vec<f64> = (0..n).map(|i| 0.7f64.powi(i as i32)).collect();
    let b = u.matrix().matmul(&Matrix::diag(&s)).matmul_t(v.matrix());
    let optimal = residual_ratio(&b, &truncated_svd(&b, r).map_err(err)?).map_err(err)?;
    let mut p = rng::random_orthonormal(&mut g, n, r);
    let mut last = residual_ratio(&b, &p).map_err(err)?;
    let mut monotone = true;
    for _ in 0..50 {
        p = block_power_iteration_step(&b, &p).map_err(err)?;
        let now = residual_ratio(&b, &p).map_err(err)?;
        monotone &= now <= last + 1e-12;
        last = now;
    }
    let gap = (last - optimal).abs();
    verdict(
        monotone && gap <= 1e-6 && p.orthonormality_error() <= 1e-10,
        format!("gap to svd residual {gap:.1e}, monotone: {monotone}"),
    )
}

fn monitors() -> Result<String, String> {
    let config = OptimizerConfig {
        mode: Mode::Analytical,
        ..OptimizerConfig::with_rank(4)
    };
    let spec = OptimizerSpec::LdAdam(config);
    let p = QuadraticProblem::random(
        vec![(32, 1)],
        1.0,
        30.0,
        false,
        0.5,
        &mut rng::stream(9, Stream::Data),
    )
    .map_err(err)?;
    let mut settings = RunSettings::new(500, 9);
    settings.monitors = vec![Monitor::Lemma1, Monitor::Lemma4, Monitor::GammaDelta];
    let out = train(&p, &spec, &Schedule::constant(0.05, 500), &settings).map_err(err)?;
    let ok = out.monitors_passed() && out.tally.clean() && out.divergence.is_none();
    let details: Vec<&str> = out.verdicts.iter().map(|v| v.detail.as_str()).collect();
    verdict(ok, details.join("; "))
}

fn accounting() -> Result<String, String> {
    let model = builtin_model("llama2-7b").map_err(err)?;
    let ld = optimizer_state_tokens(&model, OptimizerKind::LdAdam { rank: 32 }).map_err(err)?;
    let gl = optimizer_state_tokens(&model, OptimizerKind::GaLore { rank: 32 }).map_err(err)?;
    let gb = memory_bytes(ld, 2).gb;
    verdict(
        ld == gl && gb == 1.22,
        format!("llama2-7b r=32: {gb:.2} GB"),
    )
}

const CHECKS: [(&str, Check); 8] = [
    ("gradients", gradients),
    ("scalar_layer_is_adam", scalar_layer_is_adam),
    ("fixed_rows_are_adam", fixed_rows_are_adam),
    ("error_feedback_identity", error_feedback_identity),
    ("split_accumulation", split_accumulation),
    ("subspace_fitting", subspace_fitting),
    ("monitors", monitors),
    ("accounting", accounting),
];

/// Runs every check in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
            }
        })
        .collect()
}
