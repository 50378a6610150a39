use crate::linalg::Matrix;

use super::{adam_direction, debias, update_moments, AdamConfig, OptimError, StepStats};

/// Textbook Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Matrix,
    pub v: Matrix,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: (usize, usize), config: AdamConfig) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self {
            t: 0,
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
            config,
        })
    }

    /// `θ ← θ − lr · m̂/(√v̂ + ε)`.
    pub fn step(
        &mut self,
        params: &mut Matrix,
        grad: &Matrix,
        lr: f64,
    ) -> Result<StepStats, OptimError> {
        check_inputs(params, grad, &self.m, self.t + 1)?;
        self.t += 1;
        update_moments(
            &mut self.m,
            &mut self.v,
            grad,
            self.config.beta1,
            self.config.beta2,
        );
        let dir = adam_direction(&self.m, &self.v, self.t, &self.config);
        params.axpy(-lr, &dir);
        Ok(StepStats {
            step: self.t,
            fit_norm: grad.frobenius_norm(),
            vhat_max: self.v.max() / debias(self.config.beta2, self.t),
            min_second_moment: self.v.min(),
            ..StepStats::default()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AmsGradVariant {
    /// `v̂ = max(v̂_{t−1}, v_t)` per coordinate.
    #[default]
    Coordinate,
    /// `v̂ = max(v_t, s_{t−1})` with `s` the running maximum over all
    /// coordinates of the layer.
    Uniform,
}

/// Adam with a monotone second-moment estimate.
///
/// The maximum is taken over the raw second moment and the bias correction is
/// applied afterwards, as in the common framework implementations.
#[derive(Clone, Debug, PartialEq)]
pub struct AmsGradState {
    pub t: u64,
    pub m: Matrix,
    pub v: Matrix,
    /// Coordinate variant: per-entry running maximum of `v`.
    pub vmax: Matrix,
    /// Uniform variant: running maximum over all entries of `v`.
    pub vmax_scalar: f64,
    pub variant: AmsGradVariant,
    pub config: AdamConfig,
}

impl AmsGradState {
    pub fn new(
        shape: (usize, usize),
        config: AdamConfig,
        variant: AmsGradVariant,
    ) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self {
            t: 0,
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
            vmax: match variant {
                AmsGradVariant::Coordinate => Matrix::zeros(shape.0, shape.1),
                AmsGradVariant::Uniform => Matrix::zeros(1, 1),
            },
            vmax_scalar: 0.0,
            variant,
            config,
        })
    }

    pub fn step(
        &mut self,
        params: &mut Matrix,
        grad: &Matrix,
        lr: f64,
    ) -> Result<StepStats, OptimError> {
        check_inputs(params, grad, &self.m, self.t + 1)?;
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        update_moments(&mut self.m, &mut self.v, grad, beta1, beta2);
        let floor = match self.variant {
            AmsGradVariant::Coordinate => {
                self.vmax = self.vmax.zip_map(&self.v, f64::max);
                self.vmax.clone()
            }
            AmsGradVariant::Uniform => {
                let s = self.vmax_scalar;
                self.vmax_scalar = s.max(self.v.max());
                self.v.map(|x| x.max(s))
            }
        };
        let c1 = debias(beta1, self.t);
        let c2 = debias(beta2, self.t);
        let dir = self
            .m
            .zip_map(&floor, |mi, vi| (mi / c1) / ((vi / c2).sqrt() + epsilon));
        params.axpy(-lr, &dir);
        Ok(StepStats {
            step: self.t,
            fit_norm: grad.frobenius_norm(),
            vhat_max: floor.max() / c2,
            min_second_moment: self.v.min(),
            ..StepStats::default()
        })
    }
}

fn check_inputs(params: &Matrix, grad: &Matrix, m: &Matrix, step: u64) -> Result<(), OptimError> {
    for x in [params, grad] {
        if x.shape() != m.shape() {
            return Err(OptimError::ShapeMismatch {
                expected: m.shape(),
                got: x.shape(),
            });
        }
    }
    if !grad.is_finite() {
        return Err(OptimError::NonFinite {
            layer: 0,
            step,
            what: "gradient",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_rows(&[&[x]])
    }

    #[test]
    fn first_step_moves_by_lr_over_one_plus_eps() {
        let mut s = AdamState::new((1, 1), AdamConfig::default()).unwrap();
        let mut theta = scalar(0.0);
        s.step(&mut theta, &scalar(1.0), 0.1).unwrap();
        assert_eq!(theta[(0, 0)], -0.1 / (1.0 + 1e-8));
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = AdamState::new((2, 3), AdamConfig::default()).unwrap();
        let mut theta = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let before = theta.clone();
        for _ in 0..10 {
            s.step(&mut theta, &Matrix::zeros(2, 3), 0.1).unwrap();
        }
        assert_eq!(theta, before);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut s = AdamState::new((1, 1), AdamConfig::default()).unwrap();
        let mut theta = scalar(0.0);
        let mut last = 0.0;
        for _ in 0..20_000 {
            let before = theta[(0, 0)];
            s.step(&mut theta, &scalar(3.0), 0.01).unwrap();
            last = before - theta[(0, 0)];
        }
        assert!((last - 0.01).abs() < 1e-10);
    }

    #[test]
    fn amsgrad_keeps_running_max_under_decreasing_gradients() {
        let cfg = AdamConfig::default();
        let mut ams = AmsGradState::new((1, 1), cfg, AmsGradVariant::Coordinate).unwrap();
        let mut adam = AdamState::new((1, 1), cfg).unwrap();
        let (mut a, mut b) = (scalar(0.0), scalar(0.0));
        let mut peak = 0.0f64;
        for k in 0..3000 {
            let g = scalar(10.0 * 0.99f64.powi(k));
            ams.step(&mut a, &g, 0.01).unwrap();
            adam.step(&mut b, &g, 0.01).unwrap();
            peak = peak.max(adam.v[(0, 0)]);
            assert_eq!(ams.vmax[(0, 0)], peak);
        }
        assert!(adam.v[(0, 0)] < 0.5 * peak);
    }

    #[test]
    fn amsgrad_equals_adam_for_constant_gradient() {
        let cfg = AdamConfig::default();
        for variant in [AmsGradVariant::Coordinate, AmsGradVariant::Uniform] {
            let mut ams = AmsGradState::new((1, 2), cfg, variant).unwrap();
            let mut adam = AdamState::new((1, 2), cfg).unwrap();
            let (mut a, mut b) = (Matrix::zeros(1, 2), Matrix::zeros(1, 2));
            let g = Matrix::from_rows(&[&[0.5, 0.5]]);
            for _ in 0..300 {
                ams.step(&mut a, &g, 0.01).unwrap();
                adam.step(&mut b, &g, 0.01).unwrap();
            }
            assert_eq!(a, b, "{variant:?}");
        }
    }

    #[test]
    fn uniform_floor_is_shared_by_all_coordinates() {
        let mut ams =
            AmsGradState::new((1, 2), AdamConfig::default(), AmsGradVariant::Uniform).unwrap();
        let mut theta = Matrix::zeros(1, 2);
        ams.step(&mut theta, &Matrix::from_rows(&[&[4.0, 0.0]]), 0.01)
            .unwrap();
        let s = ams.vmax_scalar;
        assert_eq!(s, ams.v[(0, 0)]);
        let before = theta.clone();
        // second coordinate now sees a floor of s even though its own v is tiny
        ams.step(&mut theta, &Matrix::from_rows(&[&[0.0, 1e-3]]), 0.01)
            .unwrap();
        let c1 = 1.0 - 0.9f64.powi(2);
        let c2 = 1.0 - 0.999f64.powi(2);
        let expected = (ams.m[(0, 1)] / c1) / ((s / c2).sqrt() + 1e-8);
        assert!(((before[(0, 1)] - theta[(0, 1)]) / 0.01 - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = AdamState::new((1, 1), AdamConfig::default()).unwrap();
        let mut theta = scalar(0.0);
        assert!(matches!(
            s.step(&mut theta, &scalar(f64::NAN), 0.1),
            Err(OptimError::NonFinite { .. })
        ));
    }
}
