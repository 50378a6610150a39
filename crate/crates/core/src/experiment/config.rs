use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::optim::{
    AdamConfig, AmsGradVariant, Decay, FixedBasis, Mode, Negativity, OptimizerConfig,
    ProjectionProvider, Schedule,
};
use crate::problems::{
    LogisticConfig, LogisticProblem, MlpConfig, MlpProblem, Problem, QuadraticProblem,
    RosenbrockProblem,
};
use crate::rng::{self, Stream};

use super::{default_record_every, ExperimentError, Monitor, OptimizerSpec, RunSettings};

/// A complete experiment, as read from a TOML file. Unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSection,
    pub schedule: ScheduleSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "one")]
    pub micro_batches: u32,
    pub record_every: Option<u64>,
    #[serde(default)]
    pub monitors: Vec<Monitor>,
    #[serde(default)]
    pub deterministic: bool,
    /// Trajectory CSV; the summary and monitor files are written next to it.
    pub output: Option<PathBuf>,
}

fn one() -> u32 {
    1
}

fn default_shapes() -> Vec<[usize; 2]> {
    vec![[16, 1]]
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        #[serde(default = "default_shapes")]
        shapes: Vec<[usize; 2]>,
        #[serde(default = "quad_mu")]
        mu: f64,
        #[serde(default = "quad_l")]
        l: f64,
        #[serde(default)]
        dense: bool,
        #[serde(default)]
        sigma: f64,
    },
    Rosenbrock {
        #[serde(default = "default_shapes")]
        shapes: Vec<[usize; 2]>,
        #[serde(default)]
        sigma: f64,
    },
    Logistic {
        n_samples: Option<usize>,
        n_features: Option<usize>,
        classes: Option<usize>,
        batch_size: Option<usize>,
        l2: Option<f64>,
        separation: Option<f64>,
    },
    Mlp {
        widths: Option<Vec<usize>>,
        n_samples: Option<usize>,
        batch_size: Option<usize>,
        teacher_decay: Option<f64>,
        target_noise: Option<f64>,
    },
}

fn quad_mu() -> f64 {
    1.0
}

fn quad_l() -> f64 {
    100.0
}

impl ProblemSpec {
    /// Builds the problem; random data comes from the seed's data stream.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Problem>, ExperimentError> {
        let mut rng = rng::stream(seed, Stream::Data);
        let shapes = |s: &[[usize; 2]]| s.iter().map(|&[n, m]| (n, m)).collect::<Vec<_>>();
        Ok(match self {
            Self::Quadratic {
                shapes: s,
                mu,
                l,
                dense,
                sigma,
            } => Box::new(QuadraticProblem::random(
                shapes(s),
                *mu,
                *l,
                *dense,
                *sigma,
                &mut rng,
            )?),
            Self::Rosenbrock { shapes: s, sigma } => {
                Box::new(RosenbrockProblem::new(shapes(s), *sigma)?)
            }
            Self::Logistic {
                n_samples,
                n_features,
                classes,
                batch_size,
                l2,
                separation,
            } => {
                let d = LogisticConfig::default();
                let config = LogisticConfig {
                    n_samples: n_samples.unwrap_or(d.n_samples),
                    n_features: n_features.unwrap_or(d.n_features),
                    classes: classes.unwrap_or(d.classes),
                    batch_size: batch_size.unwrap_or(d.batch_size),
                    l2: l2.unwrap_or(d.l2),
                    separation: separation.unwrap_or(d.separation),
                };
                Box::new(LogisticProblem::new(config, &mut rng)?)
            }
            Self::Mlp {
                widths,
                n_samples,
                batch_size,
                teacher_decay,
                target_noise,
            } => {
                let d = MlpConfig::default();
                let config = MlpConfig {
                    widths: widths.clone().unwrap_or(d.widths),
                    n_samples: n_samples.unwrap_or(d.n_samples),
                    batch_size: batch_size.unwrap_or(d.batch_size),
                    teacher_decay: teacher_decay.unwrap_or(d.teacher_decay),
                    target_noise: target_noise.unwrap_or(d.target_noise),
                };
                Box::new(MlpProblem::new(config, &mut rng)?)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    PowerIteration,
    Svd,
    /// Leading coordinate axes, never refreshed.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Practical,
    Analytical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativityKind {
    Abs,
    ClipZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Coordinate,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSection {
    Ldadam {
        rank: usize,
        beta1: Option<f64>,
        beta2: Option<f64>,
        epsilon: Option<f64>,
        /// Defaults to `beta1`.
        rho: Option<f64>,
        mode: Option<ModeKind>,
        error_feedback: Option<bool>,
        provider: Option<ProviderKind>,
        negativity: Option<NegativityKind>,
    },
    Adam {
        beta1: Option<f64>,
        beta2: Option<f64>,
        epsilon: Option<f64>,
    },
    Amsgrad {
        beta1: Option<f64>,
        beta2: Option<f64>,
        epsilon: Option<f64>,
        variant: Option<VariantKind>,
    },
    Galore {
        rank: usize,
        frequency: Option<u64>,
        beta1: Option<f64>,
        beta2: Option<f64>,
        epsilon: Option<f64>,
    },
}

fn adam_config(beta1: &Option<f64>, beta2: &Option<f64>, epsilon: &Option<f64>) -> AdamConfig {
    let d = AdamConfig::default();
    AdamConfig {
        beta1: beta1.unwrap_or(d.beta1),
        beta2: beta2.unwrap_or(d.beta2),
        epsilon: epsilon.unwrap_or(d.epsilon),
    }
}

impl OptimizerSection {
    pub fn to_spec(&self) -> Result<OptimizerSpec, ExperimentError> {
        let spec = match self {
            Self::Ldadam {
                rank,
                beta1,
                beta2,
                epsilon,
                rho,
                mode,
                error_feedback,
                provider,
                negativity,
            } => {
                let d = OptimizerConfig::default();
                let beta1 = beta1.unwrap_or(d.beta1);
                let config = OptimizerConfig {
                    beta1,
                    beta2: beta2.unwrap_or(d.beta2),
                    epsilon: epsilon.unwrap_or(d.epsilon),
                    rank: *rank,
                    rho: rho.unwrap_or(beta1),
                    mode: match mode {
                        Some(ModeKind::Analytical) => Mode::Analytical,
                        Some(ModeKind::Practical) | None => Mode::Practical,
                    },
                    error_feedback: error_feedback.unwrap_or(true),
                    projection_provider: match provider {
                        Some(ProviderKind::PowerIteration) | None => {
                            ProjectionProvider::PowerIteration
                        }
                        Some(ProviderKind::Svd) => ProjectionProvider::Svd,
                        Some(ProviderKind::Fixed) => {
                            ProjectionProvider::Fixed(FixedBasis::LeadingCoordinates)
                        }
                    },
                    negativity: match negativity {
                        Some(NegativityKind::Abs) | None => Negativity::Abs,
                        Some(NegativityKind::ClipZero) => Negativity::ClipZero,
                    },
                };
                config.validate()?;
                OptimizerSpec::LdAdam(config)
            }
            Self::Adam {
                beta1,
                beta2,
                epsilon,
            } => OptimizerSpec::Adam(adam_config(beta1, beta2, epsilon)),
            Self::Amsgrad {
                beta1,
                beta2,
                epsilon,
                variant,
            } => OptimizerSpec::AmsGrad(
                adam_config(beta1, beta2, epsilon),
                match variant {
                    Some(VariantKind::Coordinate) | None => AmsGradVariant::Coordinate,
                    Some(VariantKind::Uniform) => AmsGradVariant::Uniform,
                },
            ),
            Self::Galore {
                rank,
                frequency,
                beta1,
                beta2,
                epsilon,
            } => OptimizerSpec::GaLore {
                adam: adam_config(beta1, beta2, epsilon),
                rank: *rank,
                frequency: frequency.unwrap_or(200),
            },
        };
        if let OptimizerSpec::Adam(c)
        | OptimizerSpec::AmsGrad(c, _)
        | OptimizerSpec::GaLore { adam: c, .. } = &spec
        {
            c.validate()?;
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Constant,
    LinearToZero,
    CosineToFraction,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub base_lr: f64,
    #[serde(default)]
    pub warmup_steps: u64,
    #[serde(default = "constant_decay")]
    pub decay: DecayKind,
    /// Final fraction of `base_lr` for `cosine_to_fraction`.
    pub final_fraction: Option<f64>,
}

fn constant_decay() -> DecayKind {
    DecayKind::Constant
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ExperimentError::Parse { message, .. } => ExperimentError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text).map_err(|e| ExperimentError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.optimizer.to_spec()?;
        self.schedule()?.validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule, ExperimentError> {
        let s = &self.schedule;
        let decay = match s.decay {
            DecayKind::Constant => Decay::Constant,
            DecayKind::LinearToZero => Decay::LinearToZero,
            DecayKind::CosineToFraction => {
                Decay::CosineToFraction(s.final_fraction.ok_or_else(|| {
                    ExperimentError::Invalid("cosine_to_fraction needs final_fraction".into())
                })?)
            }
        };
        if s.final_fraction.is_some() && s.decay != DecayKind::CosineToFraction {
            return Err(ExperimentError::Invalid(
                "final_fraction only applies to cosine_to_fraction".into(),
            ));
        }
        Ok(Schedule {
            base_lr: s.base_lr,
            warmup_steps: s.warmup_steps,
            decay,
            total_steps: self.experiment.steps,
        })
    }

    pub fn settings(&self) -> RunSettings {
        let e = &self.experiment;
        RunSettings {
            steps: e.steps,
            micro_batches: e.micro_batches,
            record_every: e
                .record_every
                .unwrap_or_else(|| default_record_every(e.steps)),
            seed: e.seed,
            monitors: e.monitors.clone(),
            deterministic: e.deterministic,
        }
    }

    /// The same experiment with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.experiment.seed = seed;
        c
    }
}
