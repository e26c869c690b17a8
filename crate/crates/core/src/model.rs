//! Domain types for stochastic differential delay equations
//!
//! ```text
//! dx(t) = f(x(t), x(t - tau(t))) dt + g(x(t), x(t - tau(t))) dB(t),   x(s) = xi(s) on [-tau, 0]
//! ```
//!
//! Coefficients are plain callables. Everything the stability machinery
//! needs beyond point evaluation (Lipschitz data, the componentwise bound
//! matrices) is attached as structured metadata rather than derived.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Time-varying delay `tau(t)` with its global upper bound.
#[derive(Clone)]
pub struct DelayFunction {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    tau_max: f64,
}

impl DelayFunction {
    pub fn new(tau_max: f64, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(tau_max.is_finite() && tau_max > 0.0) {
            return Err(Error::input(format!("tau_max must be positive and finite, got {tau_max}")));
        }
        Ok(Self { eval: Arc::new(eval), tau_max })
    }

    pub fn constant(tau: f64) -> Result<Self> {
        Self::new(tau, move |_| tau)
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// Evaluates and checks `0 <= tau(t) <= tau_max`.
    ///
    /// Zero is admitted: the second worked example uses `0.1 |sin t|`, which
    /// vanishes at every multiple of pi (including t = 0). A zero delay reads
    /// the current state.
    pub fn checked(&self, t: f64) -> Result<f64> {
        let tau = self.evaluate(t);
        if tau.is_finite() && (0.0..=self.tau_max).contains(&tau) {
            Ok(tau)
        } else {
            Err(Error::Model(format!(
                "delay tau({t}) = {tau} outside [0, {}]",
                self.tau_max
            )))
        }
    }
}

impl fmt::Debug for DelayFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayFunction").field("tau_max", &self.tau_max).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LipschitzKind {
    /// `L_R = L` for every radius.
    Global(f64),
    /// `L_R = c (1 + R^q)`.
    Polynomial { c: f64, q: f64 },
}

/// Local Lipschitz data for `f` and `g`, plus the optional one-sided constant
/// (well-posedness of the implicit scheme) and linear-growth constant of the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzModel {
    pub kind: LipschitzKind,
    pub one_sided: Option<f64>,
    pub drift_linear_k: Option<f64>,
}

impl LipschitzModel {
    pub fn new(kind: LipschitzKind, one_sided: Option<f64>, drift_linear_k: Option<f64>) -> Result<Self> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let kind_ok = match kind {
            LipschitzKind::Global(l) => nonneg(l),
            LipschitzKind::Polynomial { c, q } => nonneg(c) && nonneg(q),
        };
        if !kind_ok || !one_sided.is_none_or(nonneg) || !drift_linear_k.is_none_or(nonneg) {
            return Err(Error::input("Lipschitz constants must be finite and >= 0"));
        }
        Ok(Self { kind, one_sided, drift_linear_k })
    }

    pub fn global(l: f64) -> Result<Self> {
        Self::new(LipschitzKind::Global(l), None, None)
    }

    pub fn polynomial(c: f64, q: f64) -> Result<Self> {
        Self::new(LipschitzKind::Polynomial { c, q }, None, None)
    }

    pub fn with_one_sided(mut self, l: f64) -> Result<Self> {
        self.one_sided = Some(l);
        Self::new(self.kind, self.one_sided, self.drift_linear_k)
    }

    pub fn with_drift_linear_k(mut self, k: f64) -> Result<Self> {
        self.drift_linear_k = Some(k);
        Self::new(self.kind, self.one_sided, self.drift_linear_k)
    }

    /// `L_R` for the ball of radius `r`.
    pub fn local_constant(&self, r: f64) -> f64 {
        match self.kind {
            LipschitzKind::Global(l) => l,
            LipschitzKind::Polynomial { c, q } => c * (1.0 + r.powf(q)),
        }
    }
}

/// Matrices `A = (a_ij)`, `B = (b_ij)` of the componentwise bound
///
/// ```text
/// 2 x_i f_i(x, y) + sum_l g_il(x, y)^2 <= sum_j a_ij x_j^2 + sum_j b_ij y_j^2
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBounds {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl CoeffBounds {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() || b.shape() != (d, d) {
            return Err(Error::input(format!(
                "A and B must both be square d x d with d >= 1, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("bound matrices must be finite"));
        }
        for i in 0..d {
            for j in 0..d {
                if i != j && a[(i, j)] < 0.0 {
                    return Err(Error::input(format!("a[{i}][{j}] = {} must be >= 0 off the diagonal", a[(i, j)])));
                }
                if b[(i, j)] < 0.0 {
                    return Err(Error::input(format!("b[{i}][{j}] = {} must be >= 0", b[(i, j)])));
                }
            }
        }
        Ok(Self { a, b })
    }

    /// Row-major construction.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(a)?, matrix_from_rows(b)?)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `M = A + B`, always Metzler.
    pub fn combined(&self) -> DMatrix<f64> {
        &self.a + &self.b
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::input("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Initial data `xi` on `[-tau, 0]`.
#[derive(Clone)]
pub struct InitialSegment {
    eval: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    pub norm_bound: Option<f64>,
}

impl InitialSegment {
    pub fn new(eval: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(eval), norm_bound: None }
    }

    pub fn constant(value: Vec<f64>) -> Self {
        let norm = euclidean_norm(&value);
        Self { eval: Arc::new(move |_| value.clone()), norm_bound: Some(norm) }
    }

    pub fn evaluate(&self, s: f64) -> Vec<f64> {
        (self.eval)(s)
    }
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialSegment").field("norm_bound", &self.norm_bound).finish_non_exhaustive()
    }
}

/// Uniform grid with `tau = m_bar * delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub m_bar: usize,
    pub delta: f64,
    pub n_steps: usize,
    pub tau_max: f64,
}

impl GridSpec {
    pub fn new(tau_max: f64, m_bar: usize, n_steps: usize) -> Result<Self> {
        if !(tau_max.is_finite() && tau_max > 0.0) {
            return Err(Error::input(format!("tau_max must be positive, got {tau_max}")));
        }
        if m_bar == 0 {
            return Err(Error::input("m_bar must be a positive integer"));
        }
        Ok(Self { m_bar, delta: tau_max / m_bar as f64, n_steps, tau_max })
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.delta
    }

    /// `t_k = k delta`, with `k` ranging over `-m_bar ..= n_steps`.
    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.delta
    }

    /// Number of stored states, initial segment included.
    pub fn n_states(&self) -> usize {
        self.n_steps + self.m_bar + 1
    }
}

/// The SDDE itself.
#[derive(Clone)]
pub struct SddeSystem {
    d: usize,
    m: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    delay: DelayFunction,
    pub lipschitz: Option<LipschitzModel>,
    pub claimed_bounds: Option<CoeffBounds>,
}

impl SddeSystem {
    /// Builds the system and checks the trivial-solution condition
    /// `f(0,0) = 0`, `g(0,0) = 0` together with the output shapes.
    pub fn new(
        d: usize,
        m: usize,
        drift: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        delay: DelayFunction,
    ) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::input("state and noise dimensions must be >= 1"));
        }
        let system = Self {
            d,
            m,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            delay,
            lipschitz: None,
            claimed_bounds: None,
        };
        let zero = vec![0.0; d];
        let f0 = system.eval_drift(&zero, &zero)?;
        let g0 = system.eval_diffusion(&zero, &zero)?;
        if f0.iter().chain(g0.iter()).any(|&v| v != 0.0) {
            return Err(Error::Model("f(0,0) and g(0,0) must vanish for the trivial solution".into()));
        }
        Ok(system)
    }

    pub fn with_lipschitz(mut self, model: LipschitzModel) -> Self {
        self.lipschitz = Some(model);
        self
    }

    pub fn with_claimed_bounds(mut self, bounds: CoeffBounds) -> Result<Self> {
        if bounds.dim() != self.d {
            return Err(Error::input(format!("bounds are {0}x{0}, system has d = {1}", bounds.dim(), self.d)));
        }
        self.claimed_bounds = Some(bounds);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn delay(&self) -> &DelayFunction {
        &self.delay
    }

    fn check_args(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.d || y.len() != self.d {
            return Err(Error::input(format!(
                "expected x, y of length {}, got {} and {}",
                self.d,
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    pub fn eval_drift(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_args(x, y)?;
        let out = (self.drift)(x, y);
        if out.len() != self.d {
            return Err(Error::Model(format!("drift returned {} components, expected {}", out.len(), self.d)));
        }
        Ok(out)
    }

    pub fn eval_diffusion(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_args(x, y)?;
        let out = (self.diffusion)(x, y);
        if out.shape() != (self.d, self.m) {
            return Err(Error::Model(format!(
                "diffusion returned shape {:?}, expected ({}, {})",
                out.shape(),
                self.d,
                self.m
            )));
        }
        Ok(out)
    }
}

impl fmt::Debug for SddeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SddeSystem")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("delay", &self.delay)
            .field("lipschitz", &self.lipschitz)
            .field("claimed_bounds", &self.claimed_bounds)
            .finish_non_exhaustive()
    }
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
