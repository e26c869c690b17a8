//! One-step maps and the path integrator.
//!
//! All three schemes share the explicit part
//!
//! ```text
//! X_k + w * f(X_k, X_{k - lag_k}) + g(X_k, X_{k - lag_k}) dW_k
//! ```
//!
//! with `w = delta` for EM and MTEM (MTEM using the truncated coefficients)
//! and `w = (1 - theta) delta` for theta-EM, which then solves
//! `z = c + theta delta f(z, X_{k+1 - lag_{k+1}})` for `X_{k+1}`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{euclidean_norm, DelayFunction, GridSpec, InitialSegment, SddeSystem};
use crate::truncation::{h_of_delta, truncated_diffusion, truncated_drift, TruncationConfig};

pub const DEFAULT_IMPLICIT_TOL: f64 = 1e-12;
pub const DEFAULT_IMPLICIT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind {
    Em,
    ThetaEm { theta: f64 },
    Mtem(TruncationConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub implicit_tol: f64,
    pub implicit_max_iter: usize,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind) -> Result<Self> {
        if let SchemeKind::ThetaEm { theta } = kind {
            check_theta(theta)?;
        }
        Ok(Self { kind, implicit_tol: DEFAULT_IMPLICIT_TOL, implicit_max_iter: DEFAULT_IMPLICIT_MAX_ITER })
    }

    pub fn em() -> Self {
        Self { kind: SchemeKind::Em, implicit_tol: DEFAULT_IMPLICIT_TOL, implicit_max_iter: DEFAULT_IMPLICIT_MAX_ITER }
    }

    pub fn theta(theta: f64) -> Result<Self> {
        Self::new(SchemeKind::ThetaEm { theta })
    }

    pub fn mtem(config: TruncationConfig) -> Self {
        Self {
            kind: SchemeKind::Mtem(config),
            implicit_tol: DEFAULT_IMPLICIT_TOL,
            implicit_max_iter: DEFAULT_IMPLICIT_MAX_ITER,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            SchemeKind::Em => "em".into(),
            SchemeKind::ThetaEm { theta } => format!("theta-em(theta={theta})"),
            SchemeKind::Mtem(_) => "mtem".into(),
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::input(format!("theta = {theta} must lie in [0, 1]")))
    }
}

/// The last `m_bar + 1` states `X_{k - m_bar} ..= X_k`.
#[derive(Debug, Clone)]
pub struct PathState {
    history: VecDeque<Vec<f64>>,
    step_index: usize,
    #[cfg(test)]
    max_read: std::cell::Cell<i64>,
}

impl PathState {
    /// `initial` holds `X_{-m_bar} ..= X_0`.
    pub fn new(initial: Vec<Vec<f64>>) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::input("history needs at least one state"));
        }
        Ok(Self {
            history: initial.into(),
            step_index: 0,
            #[cfg(test)]
            max_read: std::cell::Cell::new(i64::MIN),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn m_bar(&self) -> usize {
        self.history.len() - 1
    }

    pub fn current(&self) -> &[f64] {
        self.history.back().expect("history is never empty")
    }

    /// `X_index`; panics unless `k - m_bar <= index <= k`.
    pub fn state_at(&self, index: i64) -> &[f64] {
        let k = self.step_index as i64;
        let oldest = k - self.m_bar() as i64;
        assert!(
            (oldest..=k).contains(&index),
            "history read of X_{index} outside the window [{oldest}, {k}]"
        );
        #[cfg(test)]
        self.max_read.set(self.max_read.get().max(index - k));
        &self.history[(index - oldest) as usize]
    }

    pub fn push(&mut self, next: Vec<f64>) {
        self.history.pop_front();
        self.history.push_back(next);
        self.step_index += 1;
    }
}

/// `floor(tau(k delta) / delta)`.
///
/// Quotients within `1e-9` (relative) of an integer snap to it, so a
/// constant delay `tau = m_bar delta` always yields `m_bar` despite rounding in `delta`.
pub fn lag_index(delay: &DelayFunction, k: usize, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::input(format!("delta must be positive, got {delta}")));
    }
    let tau = delay.checked(k as f64 * delta)?;
    let max_lag = snap_floor(delay.tau_max() / delta);
    Ok(snap_floor(tau / delta).min(max_lag))
}

fn snap_floor(r: f64) -> usize {
    let nearest = r.round();
    if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        r.floor() as usize
    }
}

/// `x + w f + g dw`, the common explicit part.
fn explicit_update(x: &[f64], f: &[f64], weight: f64, g: &DMatrix<f64>, dw: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let noise: f64 = (0..dw.len()).map(|l| g[(i, l)] * dw[l]).sum();
            x[i] + weight * f[i] + noise
        })
        .collect()
}

fn check_noise(system: &SddeSystem, dw: &[f64]) -> Result<()> {
    if dw.len() != system.noise_dim() {
        return Err(Error::input(format!("dW has length {}, expected {}", dw.len(), system.noise_dim())));
    }
    Ok(())
}

fn finite_or_overflow(v: Vec<f64>, step: usize) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Overflow { step })
    }
}

fn delayed_pair(system: &SddeSystem, state: &PathState, delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = state.step_index();
    let lag = lag_index(system.delay(), k, delta)?;
    Ok((state.current().to_vec(), state.state_at(k as i64 - lag as i64).to_vec()))
}

/// Explicit Euler-Maruyama step.
pub fn em_step(system: &SddeSystem, state: &PathState, delta: f64, dw: &[f64]) -> Result<Vec<f64>> {
    check_noise(system, dw)?;
    let (x, y) = delayed_pair(system, state, delta)?;
    let f = system.eval_drift(&x, &y)?;
    let g = system.eval_diffusion(&x, &y)?;
    finite_or_overflow(explicit_update(&x, &f, delta, &g, dw), state.step_index())
}

/// Explicit step on the truncated coefficients `f_delta`, `g_delta`.
pub fn mtem_step(
    system: &SddeSystem,
    state: &PathState,
    config: &TruncationConfig,
    delta: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    check_noise(system, dw)?;
    let h = h_of_delta(config, delta)?;
    let (x, y) = delayed_pair(system, state, delta)?;
    let f = truncated_drift(system, h, &x, &y)?;
    let g = truncated_diffusion(system, h, &x, &y)?;
    finite_or_overflow(explicit_update(&x, &f, delta, &g, dw), state.step_index())
}

/// Output of the implicit solve, kept for residual checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitSolution {
    pub z: Vec<f64>,
    /// Explicit part `c`.
    pub explicit: Vec<f64>,
    /// `|z - c - theta delta f(z, y(z))|`.
    pub residual: f64,
    pub iterations: usize,
    /// True when Newton gave up and the fixed-point iteration finished the solve.
    pub used_fixed_point: bool,
}

/// theta-EM step; see [`theta_step_detailed`].
pub fn theta_step(
    system: &SddeSystem,
    state: &PathState,
    theta: f64,
    delta: f64,
    dw: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    theta_step_detailed(system, state, theta, delta, dw, tol, max_iter).map(|s| s.z)
}

/// Solves `z = c + theta delta f(z, y(z))`.
///
/// `y(z)` is the known state `X_{k+1 - lag_{k+1}}` unless `lag_{k+1} = 0`,
/// in which case the delayed argument is `z` itself. Damped Newton with a
/// forward-difference Jacobian runs first; if the Jacobian is singular or
/// the line search stalls, plain fixed-point iteration takes over.
pub fn theta_step_detailed(
    system: &SddeSystem,
    state: &PathState,
    theta: f64,
    delta: f64,
    dw: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ImplicitSolution> {
    check_theta(theta)?;
    check_noise(system, dw)?;
    if theta > 0.0 {
        if let Some(l) = system.lipschitz.and_then(|m| m.one_sided) {
            let product = l * theta * delta;
            if product >= 1.0 {
                return Err(Error::GridRejected { product });
            }
        }
    }
    let k = state.step_index();
    let (x, y) = delayed_pair(system, state, delta)?;
    let f = system.eval_drift(&x, &y)?;
    let g = system.eval_diffusion(&x, &y)?;
    let c = finite_or_overflow(explicit_update(&x, &f, (1.0 - theta) * delta, &g, dw), k)?;
    if theta == 0.0 {
        return Ok(ImplicitSolution { z: c.clone(), explicit: c, residual: 0.0, iterations: 0, used_fixed_point: false });
    }

    let lag_next = lag_index(system.delay(), k + 1, delta)?;
    let y_next = (lag_next > 0).then(|| state.state_at(k as i64 + 1 - lag_next as i64).to_vec());
    let solver = ImplicitEquation { system, c: &c, y_next: y_next.as_deref(), weight: theta * delta };
    solver.solve(tol, max_iter, k)
}

struct ImplicitEquation<'a> {
    system: &'a SddeSystem,
    c: &'a [f64],
    y_next: Option<&'a [f64]>,
    weight: f64,
}

impl ImplicitEquation<'_> {
    fn drift(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.system.eval_drift(z, self.y_next.unwrap_or(z))
    }

    /// Returns `G(z) = z - c - w f(z, y(z))` and the roundoff floor for it.
    fn residual(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let f = self.drift(z)?;
        let r: Vec<f64> = (0..z.len()).map(|i| z[i] - self.c[i] - self.weight * f[i]).collect();
        let floor = 8.0 * f64::EPSILON * (euclidean_norm(z) + euclidean_norm(self.c) + self.weight * euclidean_norm(&f));
        Ok((r, floor))
    }

    fn jacobian(&self, z: &[f64], f0: &[f64]) -> Result<DMatrix<f64>> {
        let d = z.len();
        let mut jac = DMatrix::identity(d, d);
        let mut probe = z.to_vec();
        for j in 0..d {
            let step = 1e-7 * (1.0 + z[j].abs());
            probe[j] = z[j] + step;
            let fp = self.drift(&probe)?;
            probe[j] = z[j];
            for i in 0..d {
                jac[(i, j)] -= self.weight * (fp[i] - f0[i]) / step;
            }
        }
        Ok(jac)
    }

    fn solve(&self, tol: f64, max_iter: usize, step: usize) -> Result<ImplicitSolution> {
        let mut z = self.c.to_vec();
        let (mut r, mut floor) = self.residual(&z)?;
        let mut norm = euclidean_norm(&r);
        let mut iterations = 0;
        let converged = |norm: f64, floor: f64| norm <= tol.max(floor);

        // Past `tol`, up to POLISH full Newton steps push the residual down
        // to roundoff so errors do not accumulate along the path.
        const POLISH: usize = 2;
        let mut polished = 0;
        while iterations < max_iter && norm > floor && norm.is_finite() {
            let polishing = norm <= tol;
            if polishing {
                if polished == POLISH {
                    break;
                }
                polished += 1;
            }
            iterations += 1;
            let f0 = self.drift(&z)?;
            let jac = self.jacobian(&z, &f0)?;
            let Some(dz) = jac.lu().solve(&-DVector::from_column_slice(&r)) else { break };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..if polishing { 1 } else { 40 } {
                let trial: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + lambda * b).collect();
                if trial.iter().all(|v| v.is_finite()) {
                    let (tr, tf) = self.residual(&trial)?;
                    let tn = euclidean_norm(&tr);
                    if tn < norm || (!polishing && converged(tn, tf)) {
                        (z, r, floor, norm) = (trial, tr, tf, tn);
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if converged(norm, floor) {
            return Ok(ImplicitSolution { z, explicit: self.c.to_vec(), residual: norm, iterations, used_fixed_point: false });
        }

        // Fixed-point fallback: z <- c + w f(z, y(z)), a contraction when L w < 1.
        let mut z = self.c.to_vec();
        for it in 1..=max_iter {
            let f = self.drift(&z)?;
            z = (0..z.len()).map(|i| self.c[i] + self.weight * f[i]).collect();
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { step });
            }
            let (r, floor) = self.residual(&z)?;
            let n = euclidean_norm(&r);
            if converged(n, floor) {
                return Ok(ImplicitSolution {
                    z,
                    explicit: self.c.to_vec(),
                    residual: n,
                    iterations: iterations + it,
                    used_fixed_point: true,
                });
            }
            norm = norm.min(n);
        }
        Err(Error::Convergence { step, residual: norm })
    }
}

/// Dispatches one step of the configured scheme.
pub fn step(system: &SddeSystem, scheme: &SchemeConfig, state: &PathState, delta: f64, dw: &[f64]) -> Result<Vec<f64>> {
    match &scheme.kind {
        SchemeKind::Em => em_step(system, state, delta, dw),
        SchemeKind::ThetaEm { theta } => {
            theta_step(system, state, *theta, delta, dw, scheme.implicit_tol, scheme.implicit_max_iter)
        }
        SchemeKind::Mtem(config) => mtem_step(system, state, config, delta, dw),
    }
}

/// Source of Brownian increments, one `m`-vector per step.
pub trait NoiseSource {
    fn increment(&mut self, step: usize, out: &mut [f64]);
}

impl<F: FnMut(usize, &mut [f64])> NoiseSource for F {
    fn increment(&mut self, step: usize, out: &mut [f64]) {
        self(step, out)
    }
}

/// Pre-recorded increments; mostly for tests.
#[derive(Debug, Clone)]
pub struct FixedIncrements(pub Vec<Vec<f64>>);

impl NoiseSource for FixedIncrements {
    fn increment(&mut self, step: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.0[step]);
    }
}

/// All states `X_{-m_bar} ..= X_N`, addressable by the scheme index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    m_bar: usize,
    d: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, k: i64) -> &[f64] {
        let row = usize::try_from(k + self.m_bar as i64).expect("index below -m_bar");
        &self.data[row * self.d..(row + 1) * self.d]
    }

    /// Number of stored states.
    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Index `N` of the last state.
    pub fn last_index(&self) -> i64 {
        self.len() as i64 - 1 - self.m_bar as i64
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

/// `X_k = xi(k delta)` for `k = -m_bar ..= 0`.
pub fn discretize_initial(xi: &InitialSegment, grid: &GridSpec, d: usize) -> Result<Vec<Vec<f64>>> {
    (-(grid.m_bar as i64)..=0)
        .map(|k| {
            let v = xi.evaluate(grid.time(k));
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                Err(Error::input(format!("initial segment at s = {} must be a finite {d}-vector", grid.time(k))))
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Runs the scheme over the grid, handing every state (initial segment
/// included) to `visit` as `(k, X_k)`. Stops at the first failing step.
pub fn drive_path<N: NoiseSource + ?Sized>(
    system: &SddeSystem,
    scheme: &SchemeConfig,
    grid: &GridSpec,
    xi: &InitialSegment,
    noise: &mut N,
    mut visit: impl FnMut(i64, &[f64]),
) -> Result<()> {
    if (grid.tau_max - system.delay().tau_max()).abs() > 1e-12 * grid.tau_max {
        return Err(Error::input(format!(
            "grid built for tau = {}, system delay bound is {}",
            grid.tau_max,
            system.delay().tau_max()
        )));
    }
    let initial = discretize_initial(xi, grid, system.dim())?;
    for (offset, x) in initial.iter().enumerate() {
        visit(offset as i64 - grid.m_bar as i64, x);
    }
    let mut state = PathState::new(initial)?;
    let mut dw = vec![0.0; system.noise_dim()];
    for k in 0..grid.n_steps {
        noise.increment(k, &mut dw);
        let next = step(system, scheme, &state, grid.delta, &dw)?;
        visit(k as i64 + 1, &next);
        state.push(next);
    }
    Ok(())
}

/// Integrates one path and returns the full trajectory.
pub fn integrate_path<N: NoiseSource + ?Sized>(
    system: &SddeSystem,
    scheme: &SchemeConfig,
    grid: &GridSpec,
    xi: &InitialSegment,
    noise: &mut N,
) -> Result<Trajectory> {
    let d = system.dim();
    let mut data = Vec::with_capacity(grid.n_states() * d);
    drive_path(system, scheme, grid, xi, noise, |_, x| data.extend_from_slice(x))?;
    Ok(Trajectory { m_bar: grid.m_bar, d, data })
}
