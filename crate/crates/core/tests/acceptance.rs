//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ldadam::accounting::{builtin_model, memory_bytes, optimizer_state_tokens, OptimizerKind};
use ldadam::experiment::{
    compare, run_experiment, train, ExperimentConfig, Monitor, OptimizerSpec, RunSettings,
};
use ldadam::linalg::{block_power_iteration_step, residual_ratio, Matrix, OrthonormalBasis};
use ldadam::optim::{
    FixedBasis, LdAdamState, Mode, OptimizerConfig, ProjectionProvider, Schedule, StepStats,
};
use ldadam::problems::{
    finite_diff_check, LogisticConfig, LogisticProblem, MlpConfig, MlpProblem, Problem,
    QuadraticProblem, RosenbrockProblem,
};
use ldadam::rng::{self, Stream};
use ldadam::theory::{rate_probe, RateProbe};

/// Worst invariant values over every optimizer step taken by the suite.
#[derive(Debug)]
struct Tally {
    steps: u64,
    orthonormality: f64,
    min_v: f64,
    vhat_decreases: u64,
}

impl Tally {
    fn observe(&mut self, stats: &StepStats) {
        self.steps += 1;
        self.orthonormality = self.orthonormality.max(stats.orthonormality_error);
        self.min_v = self.min_v.min(stats.min_second_moment);
    }

    fn observe_run(&mut self, t: &ldadam::experiment::InvariantTally) {
        self.steps += t.steps;
        self.orthonormality = self.orthonormality.max(t.max_orthonormality_error);
        self.min_v = self.min_v.min(t.min_second_moment);
        self.vhat_decreases += t.vhat_decreases;
    }
}

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

/// Textbook Adam on a flat slice, the reference for the equivalence checks.
struct ReferenceAdam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ReferenceAdam {
    fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / (1.0 - self.beta1.powi(self.t));
            let vhat = self.v[i] / (1.0 - self.beta2.powi(self.t));
            theta[i] -= lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

fn memory_parity(_: &mut Tally) -> Outcome {
    // reference figures and the architecture-row sums they come from
    let roberta_r8 = 2 * (12 * 4 * 3 * 768 * 8 + 12 * 3 * (2 * 3072 * 8 + 768 * 8)) / 2
        + 2 * ((50265 * 768 + 768)
            + 564 * 768
            + (2 * 768 + 12 * (9 * 768 + 3072))
            + (768 * 768 + 768)
            + (768 * 2 + 2));
    let llama350_r256 = 24 * 4 * 3 * 1024 * 256
        + 24 * 3 * (2 * 2736 * 256 + 1024 * 256)
        + 2 * 2 * 32000 * 1024
        + 2 * 49 * 1024;
    let llama7_r32: u64 = 655_368_192;
    let llama7_r512 = 32 * 4 * 3 * 4096 * 512
        + 32 * 3 * (2 * 11008 * 512 + 4096 * 512)
        + 2 * 2 * 32000 * 4096
        + 2 * 65 * 4096;
    let llama7_adam =
        2 * (2 * 32000 * 4096 + 32 * 4 * 4096 * 4096 + 32 * 3 * 4096 * 11008 + 65 * 4096);
    let cases: [(&str, OptimizerKind, u64, f64); 5] = [
        (
            "roberta-base",
            OptimizerKind::LdAdam { rank: 8 },
            roberta_r8,
            0.15,
        ),
        (
            "llama-350m",
            OptimizerKind::LdAdam { rank: 256 },
            llama350_r256,
            0.95,
        ),
        (
            "llama2-7b",
            OptimizerKind::LdAdam { rank: 32 },
            llama7_r32,
            1.22,
        ),
        (
            "llama2-7b",
            OptimizerKind::LdAdam { rank: 512 },
            llama7_r512,
            4.87,
        ),
        ("llama2-7b", OptimizerKind::Adam, llama7_adam, 25.1),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (model, opt, rows_sum, reported) in cases {
        let tokens = optimizer_state_tokens(&builtin_model(model).unwrap(), opt).unwrap();
        let gb = memory_bytes(tokens, 2).bytes as f64 / 1024f64.powi(3);
        let good = tokens == rows_sum && (gb - reported).abs() <= 0.01;
        ok &= good;
        parts.push(format!(
            "{model} {}: {gb:.3} GB vs {reported}{}",
            opt.label(),
            if good { "" } else { " MISMATCH" }
        ));
    }
    ensure(ok, parts.join("; "))
}

fn scalar_layer_adam(tally: &mut Tally) -> Outcome {
    let p = QuadraticProblem::random(
        vec![(1, 64)],
        1.0,
        10.0,
        false,
        0.5,
        &mut rng::stream(11, Stream::Data),
    )
    .unwrap();
    let mut config = OptimizerConfig::with_rank(1);
    config.rho = 0.0;
    let (lr, steps) = (0.01, 1000);
    let mut state = LdAdamState::new((1, 64), config.clone(), 0).unwrap();
    let mut theta = p.initial_params(&mut rng::stream(11, Stream::Init));
    let mut reference = theta[0].clone();
    let mut adam = ReferenceAdam::new(64, config.beta1, config.beta2, config.epsilon);
    let mut rng_a = rng::stream(11, Stream::Gradient);
    let mut rng_b = rng::stream(11, Stream::Gradient);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let g = p.stochastic_gradient(&theta, &mut rng_a);
        state.accumulate(&g[0]).map_err(|e| e.to_string())?;
        tally.observe(&state.step(&mut theta[0], lr).map_err(|e| e.to_string())?);
        let g_ref = p.stochastic_gradient(std::slice::from_ref(&reference), &mut rng_b);
        adam.step(reference.as_mut_slice(), g_ref[0].as_slice(), lr);
        worst = worst.max(rel(&theta[0], &reference));
    }
    ensure(
        worst <= 1e-12,
        format!("max relative deviation {worst:.2e} over {steps} steps"),
    )
}

fn fixed_projection_rows(tally: &mut Tally) -> Outcome {
    let (d, r, steps, lr) = (32, 4, 1000, 0.01);
    let p = QuadraticProblem::random(
        vec![(d, 1)],
        1.0,
        10.0,
        true,
        0.5,
        &mut rng::stream(12, Stream::Data),
    )
    .unwrap();
    let config = OptimizerConfig {
        error_feedback: false,
        projection_provider: ProjectionProvider::Fixed(FixedBasis::LeadingCoordinates),
        ..OptimizerConfig::with_rank(r)
    };
    let mut state = LdAdamState::new((d, 1), config.clone(), 0).unwrap();
    let mut theta = p.initial_params(&mut rng::stream(12, Stream::Init));
    let initial = theta[0].clone();
    let mut reference = theta[0].clone();
    let mut adam = ReferenceAdam::new(r, config.beta1, config.beta2, config.epsilon);
    let mut rng_a = rng::stream(12, Stream::Gradient);
    let mut rng_b = rng::stream(12, Stream::Gradient);
    let (mut worst, mut tail_changed) = (0.0f64, false);
    for _ in 0..steps {
        let g = p.stochastic_gradient(&theta, &mut rng_a);
        state.accumulate(&g[0]).map_err(|e| e.to_string())?;
        tally.observe(&state.step(&mut theta[0], lr).map_err(|e| e.to_string())?);
        let g_ref = p.stochastic_gradient(std::slice::from_ref(&reference), &mut rng_b);
        adam.step(
            &mut reference.as_mut_slice()[..r],
            &g_ref[0].as_slice()[..r],
            lr,
        );
        let head = Matrix::column_vector(&theta[0].as_slice()[..r]);
        let head_ref = Matrix::column_vector(&reference.as_slice()[..r]);
        worst = worst.max(rel(&head, &head_ref));
        tail_changed |= theta[0].as_slice()[r..]
            .iter()
            .zip(&initial.as_slice()[r..])
            .any(|(a, b)| a.to_bits() != b.to_bits());
    }
    ensure(
        worst <= 1e-12 && !tail_changed,
        format!("leading rows max relative deviation {worst:.2e}, trailing rows changed: {tail_changed}"),
    )
}

fn error_feedback_identity(tally: &mut Tally) -> Outcome {
    let (d, r, steps, lr) = (64, 8, 2000, 0.01);
    let p = QuadraticProblem::random(
        vec![(d, 1)],
        1.0,
        50.0,
        true,
        1.0,
        &mut rng::stream(13, Stream::Data),
    )
    .unwrap();
    let config = OptimizerConfig::with_rank(r);
    let beta1 = config.beta1;
    let mut state = LdAdamState::new((d, 1), config, 0).unwrap();
    let mut theta = p.initial_params(&mut rng::stream(13, Stream::Init));
    let mut g_rng = rng::stream(13, Stream::Gradient);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let g = p.stochastic_gradient(&theta, &mut g_rng);
        state.accumulate(&g[0]).map_err(|e| e.to_string())?;
        let acc = state.accumulator().clone();
        let carried = match state.basis() {
            Some(basis) => basis.matrix().matmul(state.first_moment()),
            None => Matrix::zeros(d, 1),
        };
        let b = carried.scale(beta1).add(&acc.scale(1.0 - beta1));
        tally.observe(&state.step(&mut theta[0], lr).map_err(|e| e.to_string())?);
        let captured = state.basis().unwrap().matrix().matmul(state.first_moment());
        let lhs = state.accumulator().scale(1.0 - beta1);
        let rhs = b.sub(&captured);
        let err = lhs.sub(&rhs).frobenius_norm() / b.frobenius_norm();
        worst = worst.max(err);
    }
    ensure(
        worst <= 1e-12,
        format!("max relative residual {worst:.2e} over {steps} steps"),
    )
}

fn analytical(rank: usize, provider: ProjectionProvider) -> OptimizerConfig {
    OptimizerConfig {
        mode: Mode::Analytical,
        projection_provider: provider,
        ..OptimizerConfig::with_rank(rank)
    }
}

fn lemma_monitors(tally: &mut Tally) -> Outcome {
    let mut runs = 0;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let provider = if seed % 3 == 0 {
            ProjectionProvider::Svd
        } else {
            ProjectionProvider::PowerIteration
        };
        let (problem, rank): (Box<dyn Problem>, usize) = if seed % 2 == 0 {
            let shapes = match seed % 6 {
                0 => vec![(32, 1)],
                2 => vec![(16, 24)],
                _ => vec![(24, 10), (8, 1)],
            };
            let p = QuadraticProblem::random(
                shapes,
                1.0,
                30.0,
                seed % 4 == 0,
                0.5,
                &mut rng::stream(seed, Stream::Data),
            );
            (Box::new(p.unwrap()), 4)
        } else {
            let config = LogisticConfig {
                n_samples: 256,
                n_features: 16,
                classes: 5,
                batch_size: 16,
                ..Default::default()
            };
            (
                Box::new(
                    LogisticProblem::new(config, &mut rng::stream(seed, Stream::Data)).unwrap(),
                ),
                2,
            )
        };
        let mut settings = RunSettings::new(500, seed);
        settings.monitors = vec![Monitor::Lemma1, Monitor::Lemma4];
        let spec = OptimizerSpec::LdAdam(analytical(rank, provider));
        let out = train(
            problem.as_ref(),
            &spec,
            &Schedule::constant(0.05, 500),
            &settings,
        )
        .map_err(|e| e.to_string())?;
        tally.observe_run(&out.tally);
        runs += 1;
        for v in out.verdicts.iter().filter(|v| !v.passed) {
            failures.push(format!("seed {seed} layer {}: {}", v.layer, v.detail));
        }
        if out.divergence.is_some() {
            failures.push(format!("seed {seed} diverged"));
        }
    }
    let mut worst_sum = 0.0f64;
    for seed in 0..5u64 {
        let p = QuadraticProblem::random(
            vec![(16, 1)],
            1.0,
            20.0,
            seed % 2 == 0,
            0.5,
            &mut rng::stream(100 + seed, Stream::Data),
        )
        .unwrap();
        let mut settings = RunSettings::new(200, seed);
        settings.monitors = vec![Monitor::GammaDelta];
        let spec = OptimizerSpec::LdAdam(analytical(2, ProjectionProvider::PowerIteration));
        let out = train(&p, &spec, &Schedule::constant(0.05, 200), &settings)
            .map_err(|e| e.to_string())?;
        tally.observe_run(&out.tally);
        for v in &out.verdicts {
            if !v.passed {
                failures.push(format!("gamma seed {seed}: {}", v.detail));
            }
        }
        let ldadam::experiment::RunOutcome {
            gamma_snapshots, ..
        } = &out;
        let report = ldadam::theory::gamma_delta_monitor(
            &gamma_snapshots[0],
            OptimizerConfig::default().epsilon,
        )
        .unwrap();
        worst_sum = worst_sum.max(report.sum_norm / report.bound_norm);
    }
    ensure(
        failures.is_empty(),
        format!(
            "{runs} lemma runs, 5 gamma runs, largest gamma variation / bound {worst_sum:.6}; {}",
            if failures.is_empty() {
                "no violations".to_string()
            } else {
                failures.join(" | ")
            }
        ),
    )
}

fn invariants(tally: &mut Tally) -> Outcome {
    let ok = tally.orthonormality <= 1e-10
        && tally.min_v >= 0.0
        && tally.vhat_decreases == 0
        && tally.steps > 0;
    ensure(
        ok,
        format!(
            "{} steps: max |PᵀP − I| {:.2e}, min v {:.2e}, vhat_max decreases {}",
            tally.steps, tally.orthonormality, tally.min_v, tally.vhat_decreases
        ),
    )
}

fn gradient_oracles(_: &mut Tally) -> Outcome {
    let quadratic = QuadraticProblem::random(
        vec![(6, 5), (4, 1)],
        0.5,
        20.0,
        true,
        0.0,
        &mut rng::stream(1, Stream::Data),
    )
    .unwrap();
    let logistic = LogisticProblem::new(
        LogisticConfig {
            n_samples: 64,
            n_features: 8,
            classes: 3,
            batch_size: 8,
            ..Default::default()
        },
        &mut rng::stream(2, Stream::Data),
    )
    .unwrap();
    let rosenbrock = RosenbrockProblem::new(vec![(2, 3), (2, 1)], 0.0).unwrap();
    let mlp = MlpProblem::new(
        MlpConfig {
            widths: vec![6, 10, 4],
            n_samples: 40,
            batch_size: 8,
            ..Default::default()
        },
        &mut rng::stream(3, Stream::Data),
    )
    .unwrap();
    let cases: [(&dyn Problem, f64, f64); 4] = [
        (&quadratic, 1e-5, 1e-6),
        (&logistic, 1e-5, 1e-5),
        (&rosenbrock, 1e-6, 1e-5),
        (&mlp, 1e-5, 1e-4),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (problem, h, tol) in cases {
        let worst = (0..10u64)
            .map(|k| {
                let theta = problem.initial_params(&mut rng::stream(k, Stream::Aux));
                finite_diff_check(problem, &theta, h)
            })
            .fold(0.0f64, f64::max);
        ok &= worst <= tol;
        parts.push(format!("{} {worst:.1e} (<= {tol:.0e})", problem.name()));
    }
    ensure(ok, parts.join(", "))
}

fn pl_convergence(tally: &mut Tally) -> Outcome {
    let p = QuadraticProblem::random(
        vec![(64, 1)],
        1.0,
        100.0,
        false,
        0.0,
        &mut rng::stream(1, Stream::Data),
    )
    .unwrap();
    let spec = OptimizerSpec::LdAdam(analytical(8, ProjectionProvider::PowerIteration));
    let mut settings = RunSettings::new(5000, 1);
    settings.deterministic = true;
    let out =
        train(&p, &spec, &Schedule::constant(1.0, 5000), &settings).map_err(|e| e.to_string())?;
    tally.observe_run(&out.tally);
    let reached = out.records.iter().find(|r| r.loss <= 1e-8).map(|r| r.t);

    let mut improved = 0;
    let mut slopes = Vec::new();
    for seed in 1..=5u64 {
        let p = QuadraticProblem::random(
            vec![(64, 1)],
            1.0,
            100.0,
            false,
            1.0,
            &mut rng::stream(seed, Stream::Data),
        )
        .unwrap();
        let probe = RateProbe {
            horizons: vec![512, 8192],
            scale: 200.0,
            cap: 1.0,
            seed,
        };
        let report =
            rate_probe(&p, &OptimizerConfig::with_rank(8), &probe).map_err(|e| e.to_string())?;
        if report.points[1].gap < report.points[0].gap {
            improved += 1;
        }
        slopes.push(format!("{:.2}", report.slope.unwrap_or(f64::NAN)));
    }
    ensure(
        reached.is_some() && improved >= 4,
        format!(
            "deterministic gap <= 1e-8 at step {:?}; noisy gap(8192) < gap(512) in {improved}/5 seeds (log-log slopes {})",
            reached,
            slopes.join(", ")
        ),
    )
}

fn mlp_config(id: &str, optimizer: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        r#"
[experiment]
id = "{id}"
seed = 0
steps = 2000
record_every = 2000

[problem]
kind = "mlp"
widths = [32, 64, 32]

[optimizer]
{optimizer}

[schedule]
base_lr = 0.003
"#
    ))
    .unwrap()
}

fn directional_ordering(_: &mut Tally) -> Outcome {
    let seeds = [1, 2, 3, 4, 5];
    let family = |rank: usize| {
        vec![
            mlp_config("ldadam", &format!("kind = \"ldadam\"\nrank = {rank}")),
            mlp_config(
                "no-ef",
                &format!("kind = \"ldadam\"\nrank = {rank}\nerror_feedback = false"),
            ),
            mlp_config(
                "galore",
                &format!("kind = \"galore\"\nrank = {rank}\nfrequency = 200"),
            ),
            mlp_config("adam", "kind = \"adam\""),
        ]
    };
    let low = compare(&family(4), &seeds).map_err(|e| e.to_string())?;
    let full = compare(&family(32), &seeds).map_err(|e| e.to_string())?;
    let med = |c: &ldadam::experiment::Comparison, i: usize| c.rows[i].median;
    let ordered = med(&low, 0) <= med(&low, 1) && med(&low, 0) <= med(&low, 2);
    let adam = med(&full, 3);
    let ratios: Vec<f64> = (0..3).map(|i| med(&full, i) / adam).collect();
    let close = ratios.iter().all(|&q| q <= 2.0);
    ensure(
        ordered && close,
        format!(
            "r=4 medians ldadam {:.3e}, no-EF {:.3e}, galore {:.3e}; full rank / adam: {:.2}, {:.2}, {:.2}",
            med(&low, 0),
            med(&low, 1),
            med(&low, 2),
            ratios[0],
            ratios[1],
            ratios[2]
        ),
    )
}

fn power_iteration_quality(_: &mut Tally) -> Outcome {
    let (n, m, r) = (64, 96, 8);
    let mut g = rng::stream(21, Stream::Aux);
    let u = rng::random_orthonormal(&mut g, n, n);
    let v = rng::random_orthonormal(&mut g, m, n);
    let s: Vec<f64> = (0..n).map(|i| 0.8f64.powi(i as i32)).collect();
    let b = u.matrix().matmul(&Matrix::diag(&s)).matmul_t(v.matrix());
    let total: f64 = s.iter().map(|x| x * x).sum();
    let optimal = (s[r..].iter().map(|x| x * x).sum::<f64>() / total).sqrt();
    let mut p: OrthonormalBasis = rng::random_orthonormal(&mut g, n, r);
    for _ in 0..50 {
        p = block_power_iteration_step(&b, &p).map_err(|e| e.to_string())?;
    }
    let got = residual_ratio(&b, &p).map_err(|e| e.to_string())?;
    let gap = (got - optimal).abs();
    ensure(
        gap <= 1e-6,
        format!("residual {got:.12} vs optimal {optimal:.12} (gap {gap:.1e})"),
    )
}

fn micro_batch_determinism(tally: &mut Tally) -> Outcome {
    let p = QuadraticProblem::random(
        vec![(12, 20), (9, 4)],
        1.0,
        20.0,
        true,
        1.0,
        &mut rng::stream(31, Stream::Data),
    )
    .unwrap();
    let spec = OptimizerSpec::LdAdam(OptimizerConfig::with_rank(3));
    let mut layers = spec.build(&p.param_shapes()).unwrap();
    let mut theta = p.initial_params(&mut rng::stream(31, Stream::Init));
    let mut g_rng = rng::stream(31, Stream::Gradient);
    let (mut worst, mut over) = (0.0f64, 0);
    for _ in 0..500 {
        let draws: Vec<Vec<Matrix>> = (0..3)
            .map(|_| p.stochastic_gradient(&theta, &mut g_rng))
            .collect();
        for (i, layer) in layers.iter_mut().enumerate() {
            let mut summed = layer.clone();
            let mut theta_sum = theta[i].clone();
            let mut total = draws[0][i].clone();
            total.axpy(1.0, &draws[1][i]);
            total.axpy(1.0, &draws[2][i]);
            summed.accumulate(&total).map_err(|e| e.to_string())?;
            summed
                .step(&mut theta_sum, 0.01)
                .map_err(|e| e.to_string())?;
            for d in &draws {
                layer.accumulate(&d[i]).map_err(|e| e.to_string())?;
            }
            tally.observe(&layer.step(&mut theta[i], 0.01).map_err(|e| e.to_string())?);
            let dev = rel(&theta[i], &theta_sum);
            worst = worst.max(dev);
            over += usize::from(dev > 1e-15);
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = |name: &str| {
        format!(
            r#"
[experiment]
id = "det"
seed = 5
steps = 500
micro_batches = 3
output = "{}"

[problem]
kind = "logistic"

[optimizer]
kind = "ldadam"
rank = 2

[schedule]
base_lr = 0.01
warmup_steps = 50
decay = "linear_to_zero"
"#,
            dir.path().join(name).display()
        )
    };
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let config = ExperimentConfig::parse(&text(name)).map_err(|e| e.to_string())?;
        let (out, _) = run_experiment(&config).map_err(|e| e.to_string())?;
        tally.observe_run(&out.tally);
        csvs.push(std::fs::read(dir.path().join(name)).map_err(|e| e.to_string())?);
    }
    let identical = csvs[0] == csvs[1] && !csvs[0].is_empty();
    ensure(
        worst <= 1e-15 && identical,
        format!(
            "split vs summed accumulation: max relative deviation {worst:.1e}, {over} of 1000 layer-steps above 1e-15; CSVs bit-identical: {identical}"
        ),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn(&mut Tally) -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "memory parity",
            limit: Duration::from_secs(1),
            run: memory_parity,
        },
        Criterion {
            id: 2,
            name: "scalar-layer Adam equivalence",
            limit: Duration::from_secs(5),
            run: scalar_layer_adam,
        },
        Criterion {
            id: 3,
            name: "fixed-projection row split",
            limit: Duration::from_secs(5),
            run: fixed_projection_rows,
        },
        Criterion {
            id: 4,
            name: "error-feedback identity",
            limit: Duration::from_secs(10),
            run: error_feedback_identity,
        },
        Criterion {
            id: 5,
            name: "lemma monitors clean",
            limit: Duration::from_secs(120),
            run: lemma_monitors,
        },
        Criterion {
            id: 7,
            name: "gradient oracles",
            limit: Duration::from_secs(30),
            run: gradient_oracles,
        },
        Criterion {
            id: 8,
            name: "PL convergence",
            limit: Duration::from_secs(120),
            run: pl_convergence,
        },
        Criterion {
            id: 9,
            name: "directional ordering",
            limit: Duration::from_secs(300),
            run: directional_ordering,
        },
        Criterion {
            id: 10,
            name: "power-iteration quality",
            limit: Duration::from_secs(1),
            run: power_iteration_quality,
        },
        Criterion {
            id: 11,
            name: "micro-batch associativity and determinism",
            limit: Duration::from_secs(10),
            run: micro_batch_determinism,
        },
        // last: aggregates every step taken above
        Criterion {
            id: 6,
            name: "orthonormality and nonnegativity",
            limit: Duration::from_secs(1),
            run: invariants,
        },
    ];
    let mut tally = Tally {
        steps: 0,
        orthonormality: 0.0,
        min_v: f64::INFINITY,
        vhat_decreases: 0,
    };
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)(&mut tally);
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if elapsed > c.limit {
            pass = false;
            detail.push_str(&format!("; over the {:?} budget", c.limit));
        }
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {} [{:.2}s]: {}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            detail
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
