use crate::linalg::{
    block_power_iteration_step, residual_ratio, truncated_svd, Matrix, OrthonormalBasis,
};

use super::{
    adam_direction, debias, update_moments, AdamConfig, FixedBasis, Mode, Negativity, OptimError,
    OptimizerConfig, ProjectionProvider, StepStats,
};

/// Which dimension of a layer the projection acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Project the rows: `P` is `n × r`, moments are `r × m`.
    Left,
    /// Project the columns by working on the transpose: `P` is `m × r`,
    /// moments are `r × n`.
    Right,
}

impl Side {
    /// Left when `n ≤ m`, right otherwise. Column vectors (`m = 1`) stay on
    /// the left so their `n` coordinates can be compressed to any rank `≤ n`.
    pub fn for_shape(n: usize, m: usize) -> Side {
        if n <= m || m == 1 {
            Side::Left
        } else {
            Side::Right
        }
    }

    fn orient(self, (n, m): (usize, usize)) -> (usize, usize) {
        match self {
            Side::Left => (n, m),
            Side::Right => (m, n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// `P_newᵀ · P_prev`, the `r × r` change of coordinates between subspaces.
pub fn transition(p_new: &OrthonormalBasis, p_prev: &OrthonormalBasis) -> Matrix {
    p_new.matrix().t_matmul(p_prev.matrix())
}

/// First moment carried over to the new subspace: `(P_newᵀ P_prev) · m_prev`.
pub fn intermediate_first_moment(
    m_prev: &Matrix,
    p_prev: &OrthonormalBasis,
    p_new: &OrthonormalBasis,
) -> Matrix {
    transition(p_new, p_prev).matmul(m_prev)
}

/// Second moment carried over to the new subspace.
///
/// Treats each projected coordinate as an independent variable with mean
/// `m̂` and second moment `v̂`, and returns the rescaled second moment of the
/// transported coordinates:
/// `(1 − β₂^{t−1}) · |(T∘T)(v̂ − m̂∘m̂) + (T m̂)∘(T m̂)|` with `T = P_newᵀ P_prev`.
/// At `t = 1` the prefactor vanishes and the result is zero.
#[allow(clippy::too_many_arguments)]
pub fn intermediate_second_moment(
    v_prev: &Matrix,
    m_prev: &Matrix,
    p_prev: &OrthonormalBasis,
    p_new: &OrthonormalBasis,
    t: u64,
    beta1: f64,
    beta2: f64,
    negativity: Negativity,
) -> Matrix {
    let tr = transition(p_new, p_prev);
    transported_second_moment(v_prev, m_prev, &tr, t, beta1, beta2, negativity)
}

fn transported_second_moment(
    v_prev: &Matrix,
    m_prev: &Matrix,
    tr: &Matrix,
    t: u64,
    beta1: f64,
    beta2: f64,
    negativity: Negativity,
) -> Matrix {
    let (r, cols) = v_prev.shape();
    let scale2 = if t <= 1 { 0.0 } else { debias(beta2, t - 1) };
    let scale1 = if t <= 1 { 0.0 } else { debias(beta1, t - 1) };
    if scale2 == 0.0 || scale1 == 0.0 {
        return Matrix::zeros(r, cols);
    }
    let m_hat = m_prev.scale(1.0 / scale1);
    let variance = v_prev.zip_map(&m_hat, |v, m| v / scale2 - m * m);
    let tr_sq = tr.map(|x| x * x);
    let moved_mean = tr.matmul(&m_hat);
    let moved = tr_sq
        .matmul(&variance)
        .zip_map(&moved_mean, |var, mean| var + mean * mean);
    match negativity {
        Negativity::Abs => moved.map(|x| scale2 * x.abs()),
        Negativity::ClipZero => moved.map(|x| scale2 * x.max(0.0)),
    }
}

/// Per-layer LDAdam state.
///
/// Everything except the parameters lives in oriented coordinates: for a
/// right-projected `n × m` layer the accumulator is stored as `m × n`, so the
/// projection always acts on rows. Between steps the accumulator holds the
/// error buffer; gradients for the next step are added on top of it.
#[derive(Clone, Debug)]
pub struct LdAdamState {
    config: OptimizerConfig,
    layer: usize,
    shape: (usize, usize),
    side: Side,
    step: u64,
    basis: Option<OrthonormalBasis>,
    m: Matrix,
    v: Matrix,
    vhat_max: f64,
    prev_vhat_max: f64,
    accumulator: Matrix,
    accumulated: bool,
}

impl LdAdamState {
    /// Fresh state for an `n × m` layer. The first projection is computed
    /// lazily from the first step's accumulator. `layer` only labels
    /// diagnostics.
    pub fn new(
        shape: (usize, usize),
        config: OptimizerConfig,
        layer: usize,
    ) -> Result<Self, OptimError> {
        config.validate()?;
        let (n, m) = shape;
        if n == 0 || m == 0 {
            return Err(OptimError::InvalidConfig(
                "layer dimensions must be positive".into(),
            ));
        }
        let side = Side::for_shape(n, m);
        let (rows, cols) = side.orient(shape);
        if config.rank > rows {
            return Err(OptimError::RankTooLarge {
                rank: config.rank,
                rows: n,
                cols: m,
            });
        }
        if let ProjectionProvider::Fixed(FixedBasis::Given(p)) = &config.projection_provider {
            if p.dim() != rows {
                return Err(OptimError::InvalidConfig(format!(
                    "fixed basis has {} rows, the projected dimension is {rows}",
                    p.dim()
                )));
            }
        }
        let r = config.rank;
        Ok(Self {
            config,
            layer,
            shape,
            side,
            step: 0,
            basis: None,
            m: Matrix::zeros(r, cols),
            v: Matrix::zeros(r, cols),
            vhat_max: 0.0,
            prev_vhat_max: 0.0,
            accumulator: Matrix::zeros(rows, cols),
            accumulated: false,
        })
    }

    /// State whose initial projection is fitted to the first gradient.
    ///
    /// `first_accumulator` is added to the (empty) accumulator, so the next
    /// call may be [`step`](Self::step) directly.
    pub fn init(
        shape: (usize, usize),
        config: OptimizerConfig,
        layer: usize,
        first_accumulator: &Matrix,
    ) -> Result<Self, OptimError> {
        let mut state = Self::new(shape, config, layer)?;
        state.accumulate(first_accumulator)?;
        state.basis = Some(state.initial_basis()?);
        Ok(state)
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Current projection in oriented coordinates; `None` before the first
    /// step (or [`init`](Self::init)).
    pub fn basis(&self) -> Option<&OrthonormalBasis> {
        self.basis.as_ref()
    }

    pub fn first_moment(&self) -> &Matrix {
        &self.m
    }

    pub fn second_moment(&self) -> &Matrix {
        &self.v
    }

    /// The oriented accumulator: the error buffer between steps, plus any
    /// gradients accumulated since.
    pub fn accumulator(&self) -> &Matrix {
        &self.accumulator
    }

    /// Analytical mode: running maximum over all entries of every second
    /// moment so far. Always 0 in practical mode.
    pub fn vhat_max(&self) -> f64 {
        self.vhat_max
    }

    /// The elementwise denominator inside the square root at the last step,
    /// before `ε`: `max(v, previous vhat_max)` in analytical mode and the
    /// bias-corrected `v` in practical mode.
    pub fn preconditioner(&self) -> Matrix {
        match self.config.mode {
            Mode::Analytical => {
                let floor = self.prev_vhat_max;
                self.v.map(|x| x.max(floor))
            }
            Mode::Practical => {
                let c = debias(self.config.beta2, self.step.max(1));
                self.v.map(|x| x / c)
            }
        }
    }

    /// Adds one micro-batch gradient (in the layer's own `n × m` shape).
    pub fn accumulate(&mut self, grad: &Matrix) -> Result<(), OptimError> {
        if grad.shape() != self.shape {
            return Err(OptimError::ShapeMismatch {
                expected: self.shape,
                got: grad.shape(),
            });
        }
        if !grad.is_finite() {
            return Err(OptimError::NonFinite {
                layer: self.layer,
                step: self.step + 1,
                what: "gradient",
            });
        }
        match self.side {
            Side::Left => self.accumulator.axpy(1.0, grad),
            Side::Right => {
                let (n, m) = self.shape;
                let acc = self.accumulator.as_mut_slice();
                let g = grad.as_slice();
                for i in 0..n {
                    for j in 0..m {
                        acc[j * n + i] += g[i * m + j];
                    }
                }
            }
        }
        self.accumulated = true;
        Ok(())
    }

    /// The projection and contraction factor this step would use, without
    /// changing the state.
    pub fn fit_subspace(&self) -> Result<(OrthonormalBasis, f64), OptimError> {
        let prev = match &self.basis {
            Some(p) => p.clone(),
            None => self.initial_basis()?,
        };
        let fit = self.fit(&prev)?;
        Ok((fit.basis, fit.q))
    }

    /// One optimizer step with learning rate `lr` (the schedule value for
    /// this step).
    pub fn step(&mut self, params: &mut Matrix, lr: f64) -> Result<StepStats, OptimError> {
        let t = self.step + 1;
        if !self.accumulated {
            return Err(OptimError::NothingAccumulated {
                layer: self.layer,
                step: t,
            });
        }
        if params.shape() != self.shape {
            return Err(OptimError::ShapeMismatch {
                expected: self.shape,
                got: params.shape(),
            });
        }
        if self.basis.is_none() {
            self.basis = Some(self.initial_basis()?);
        }
        let c = self.config.clone();
        let p_prev = self.basis.as_ref().expect("basis set above");

        let fit = self.fit(p_prev)?;
        let p_new = fit.basis;
        let tr = transition(&p_new, p_prev);
        let m_half = tr.matmul(&self.m);
        let mut v_new =
            transported_second_moment(&self.v, &self.m, &tr, t, c.beta1, c.beta2, c.negativity);
        let mut m_new = m_half.clone();
        let a = p_new.matrix().t_matmul(&self.accumulator);
        update_moments(&mut m_new, &mut v_new, &a, c.beta1, c.beta2);

        let (direction, lr_eff, vhat_max) = match c.mode {
            Mode::Practical => {
                let adam = AdamConfig {
                    beta1: c.beta1,
                    beta2: c.beta2,
                    epsilon: c.epsilon,
                };
                let dir = adam_direction(&m_new, &v_new, t, &adam);
                (dir, lr, self.vhat_max)
            }
            Mode::Analytical => {
                let floor = self.vhat_max;
                let eps = c.epsilon;
                let dir = m_new.zip_map(&v_new, |mi, vi| mi / (vi.max(floor) + eps).sqrt());
                let factor = debias(c.beta2, t).sqrt() / debias(c.beta1, t);
                (dir, lr * factor, floor.max(v_new.max()))
            }
        };
        let delta = p_new.matrix().matmul(&direction);
        if !(delta.is_finite() && lr_eff.is_finite()) {
            return Err(self.non_finite(t, "parameter update"));
        }

        if c.error_feedback {
            // e = (A − P a) + β₁/(1 − β₁) (P_prev m_prev − P m_half)
            let k = c.beta1 / (1.0 - c.beta1);
            let kept = p_new.matrix().matmul(&a);
            let moved = p_new.matrix().matmul(&m_half);
            let acc = self.accumulator.as_mut_slice();
            for (i, x) in acc.iter_mut().enumerate() {
                *x = (*x - kept.as_slice()[i])
                    + k * (fit.prev_momentum.as_slice()[i] - moved.as_slice()[i]);
            }
            if !self.accumulator.is_finite() {
                return Err(self.non_finite(t, "error buffer"));
            }
        } else {
            self.accumulator.fill(0.0);
        }

        match self.side {
            Side::Left => params.axpy(-lr_eff, &delta),
            Side::Right => {
                let (n, m) = self.shape;
                let d = delta.as_slice();
                let p = params.as_mut_slice();
                for i in 0..n {
                    for j in 0..m {
                        p[i * m + j] -= lr_eff * d[j * n + i];
                    }
                }
            }
        }

        let orthonormality_error = p_new.orthonormality_error();
        self.basis = Some(p_new);
        self.m = m_new;
        self.v = v_new;
        self.prev_vhat_max = self.vhat_max;
        self.vhat_max = vhat_max;
        self.step = t;
        self.accumulated = false;

        let reported_vhat = match c.mode {
            Mode::Analytical => self.vhat_max,
            Mode::Practical => self.v.max() / debias(c.beta2, t),
        };
        Ok(StepStats {
            step: t,
            q: fit.q,
            fit_norm: fit.target_norm,
            error_norm: self.accumulator.frobenius_norm(),
            vhat_max: reported_vhat,
            min_second_moment: self.v.min(),
            orthonormality_error,
        })
    }

    fn non_finite(&self, step: u64, what: &'static str) -> OptimError {
        OptimError::NonFinite {
            layer: self.layer,
            step,
            what,
        }
    }

    fn fixed_basis(&self) -> Option<OrthonormalBasis> {
        match &self.config.projection_provider {
            ProjectionProvider::Fixed(FixedBasis::LeadingCoordinates) => Some(
                OrthonormalBasis::leading_coordinates(self.accumulator.rows(), self.config.rank),
            ),
            ProjectionProvider::Fixed(FixedBasis::Given(p)) => Some(p.clone()),
            _ => None,
        }
    }

    /// SVD of the current accumulator, `[I_r; 0]` when it is zero.
    fn initial_basis(&self) -> Result<OrthonormalBasis, OptimError> {
        if let Some(p) = self.fixed_basis() {
            return Ok(p);
        }
        let a = &self.accumulator;
        if a.max_abs() == 0.0 {
            return Ok(OrthonormalBasis::leading_coordinates(
                a.rows(),
                self.config.rank,
            ));
        }
        Ok(truncated_svd(a, self.config.rank)?)
    }

    fn fit(&self, p_prev: &OrthonormalBasis) -> Result<Fit, OptimError> {
        let c = &self.config;
        let t = self.step + 1;
        let prev_momentum = p_prev.matrix().matmul(&self.m);
        let (w_mom, w_acc) = match c.mode {
            Mode::Practical if t == 1 => (0.0, 1.0 - c.rho),
            Mode::Practical => (c.rho / debias(c.beta1, t - 1), 1.0 - c.rho),
            Mode::Analytical => (c.beta1, 1.0 - c.beta1),
        };
        let target = prev_momentum.zip_map(&self.accumulator, |pm, acc| w_mom * pm + w_acc * acc);
        if !target.is_finite() {
            return Err(self.non_finite(t, "fit target"));
        }
        let target_norm = target.frobenius_norm();
        let basis = match &c.projection_provider {
            ProjectionProvider::PowerIteration => block_power_iteration_step(&target, p_prev)?,
            ProjectionProvider::Svd if target_norm == 0.0 => p_prev.clone(),
            ProjectionProvider::Svd => truncated_svd(&target, c.rank)?,
            ProjectionProvider::Fixed(_) => p_prev.clone(),
        };
        let q = if target_norm == 0.0 {
            0.0
        } else {
            residual_ratio(&target, &basis)?
        };
        Ok(Fit {
            basis,
            q,
            target_norm,
            prev_momentum,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore(
        config: OptimizerConfig,
        layer: usize,
        shape: (usize, usize),
        step: u64,
        basis: Option<OrthonormalBasis>,
        moments: (Matrix, Matrix),
        vhat: (f64, f64),
        accumulator: Matrix,
    ) -> Result<Self, OptimError> {
        let mut state = Self::new(shape, config, layer)?;
        let bad = |what: &str| OptimError::Checkpoint(format!("{what} has the wrong shape"));
        if moments.0.shape() != state.m.shape() {
            return Err(bad("first moment"));
        }
        if moments.1.shape() != state.v.shape() {
            return Err(bad("second moment"));
        }
        if accumulator.shape() != state.accumulator.shape() {
            return Err(bad("accumulator"));
        }
        if let Some(p) = &basis {
            if p.matrix().shape() != (state.accumulator.rows(), state.config.rank) {
                return Err(bad("basis"));
            }
        }
        state.step = step;
        state.basis = basis;
        state.m = moments.0;
        state.v = moments.1;
        state.vhat_max = vhat.0;
        state.prev_vhat_max = vhat.1;
        state.accumulator = accumulator;
        Ok(state)
    }

    pub(crate) fn prev_vhat_max(&self) -> f64 {
        self.prev_vhat_max
    }
}

struct Fit {
    basis: OrthonormalBasis,
    q: f64,
    target_norm: f64,
    /// `P_prev · m_prev`, reused by the error buffer update.
    prev_momentum: Matrix,
}
