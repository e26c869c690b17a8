//! Checks and searches over the coefficient matrices `A`, `B`.
//!
//! Everything here works on the matrices alone except the two sampling
//! checks, which evaluate the system's coefficients at random points to
//! confirm that user-supplied bounds are plausible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{euclidean_norm, CoeffBounds, SddeSystem};

/// Relative slack (against the sum of absolute term magnitudes) allowed
/// before a sampled inequality counts as violated.
pub const BOUND_SLACK: f64 = 1e-9;

/// Abscissa values within this distance of zero are treated as degenerate.
pub const ABSCISSA_TOL: f64 = 1e-12;

pub const BETA_TOL: f64 = 1e-10;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

/// One side-by-side evaluation of the componentwise inequality for row `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerm {
    pub lhs: f64,
    pub rhs: f64,
    /// Sum of absolute values of every term on either side.
    pub scale: f64,
}

impl BoundTerm {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub sample: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub row: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KhasminskiiVerdict {
    /// True when the column sums leave room for an aggregated Khasminskii bound.
    pub possibly_feasible: bool,
    pub column_sums_a: Vec<f64>,
    pub column_sums_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub khasminskii: KhasminskiiVerdict,
    pub growth_k: f64,
    pub n_samples: usize,
    pub violations: Vec<Violation>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub p: Vec<f64>,
    /// Filled in by [`Certificate::with_decay_rate`].
    pub beta: Option<f64>,
    pub margins: Vec<f64>,
}

impl Certificate {
    pub fn with_decay_rate(mut self, bounds: &CoeffBounds, tau_max: f64) -> Result<Self> {
        self.beta = Some(decay_rate(bounds, &self.p, tau_max)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CertificateSearch {
    Feasible { certificate: Certificate, abscissa: f64 },
    Infeasible { abscissa: f64 },
}

impl CertificateSearch {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            CertificateSearch::Feasible { certificate, .. } => Some(certificate),
            CertificateSearch::Infeasible { .. } => None,
        }
    }

    pub fn abscissa(&self) -> f64 {
        match *self {
            CertificateSearch::Feasible { abscissa, .. } | CertificateSearch::Infeasible { abscissa } => abscissa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginCheck {
    pub margins: Vec<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaCheck {
    pub margins: Vec<f64>,
    pub feasible: bool,
    pub epsilon: f64,
    pub epsilon_bound: f64,
}

/// Evaluates both sides of the componentwise bound for every row at one point.
pub fn componentwise_terms(system: &SddeSystem, bounds: &CoeffBounds, x: &[f64], y: &[f64]) -> Result<Vec<BoundTerm>> {
    let f = system.eval_drift(x, y)?;
    let g = system.eval_diffusion(x, y)?;
    Ok(bound_terms(bounds, x, y, &f, &g))
}

pub(crate) fn bound_terms(bounds: &CoeffBounds, x: &[f64], y: &[f64], f: &[f64], g: &DMatrix<f64>) -> Vec<BoundTerm> {
    let (a, b) = (bounds.a(), bounds.b());
    (0..bounds.dim())
        .map(|i| {
            let drift_part = 2.0 * x[i] * f[i];
            let noise_part: f64 = g.row(i).iter().map(|v| v * v).sum();
            let mut rhs = 0.0;
            let mut scale = drift_part.abs() + noise_part;
            for j in 0..x.len() {
                let ax = a[(i, j)] * x[j] * x[j];
                let by = b[(i, j)] * y[j] * y[j];
                rhs += ax + by;
                scale += ax.abs() + by;
            }
            BoundTerm { lhs: drift_part + noise_part, rhs, scale }
        })
        .collect()
}

/// Uniform sample from the ball of radius `radius` in `R^dim`.
pub(crate) fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = euclidean_norm(&v);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    let scale = if norm > 0.0 { r / norm } else { 0.0 };
    v.iter_mut().for_each(|c| *c *= scale);
    v
}

/// Samples `(x, y)` uniformly in the `2d`-ball of the given radius and
/// records every row where the componentwise bound fails.
pub fn check_componentwise_bound(
    system: &SddeSystem,
    bounds: &CoeffBounds,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let d = system.dim();
    if bounds.dim() != d {
        return Err(Error::input(format!("bounds are {0}x{0}, system has d = {1}", bounds.dim(), d)));
    }
    if n_samples == 0 {
        return Err(Error::input("n_samples must be >= 1"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::input(format!("radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for sample in 0..n_samples {
        let z = sample_ball(&mut rng, 2 * d, radius);
        let (x, y) = z.split_at(d);
        let f = system.eval_drift(x, y)?;
        let g = system.eval_diffusion(x, y)?;
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { sample, what: format!("f or g non-finite at x = {x:?}, y = {y:?}") });
        }
        for (row, term) in bound_terms(bounds, x, y, &f, &g).into_iter().enumerate() {
            if !term.holds(BOUND_SLACK) {
                violations.push(Violation { sample, x: x.to_vec(), y: y.to_vec(), row, lhs: term.lhs, rhs: term.rhs });
            }
        }
    }
    Ok(DiagnosticsReport {
        khasminskii: khasminskii_diagnostic(bounds),
        growth_k: growth_constant(bounds),
        n_samples,
        violations,
    })
}

/// Column sums `S_a(j) = sum_i a_ij`, `S_b(j) = sum_i b_ij` and whether an
/// aggregated bound `-C1 |x|^2 + C2 |y|^2` with `C1 > C2 > 0` can follow from them.
pub fn khasminskii_diagnostic(bounds: &CoeffBounds) -> KhasminskiiVerdict {
    let column_sums_a: Vec<f64> = bounds.a().column_iter().map(|c| c.sum()).collect();
    let column_sums_b: Vec<f64> = bounds.b().column_iter().map(|c| c.sum()).collect();
    let max_sa = column_sums_a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_neg_sa = column_sums_a.iter().map(|s| -s).fold(f64::INFINITY, f64::min);
    let max_sb = column_sums_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    KhasminskiiVerdict {
        possibly_feasible: max_sa < 0.0 && min_neg_sa > max_sb,
        column_sums_a,
        column_sums_b,
    }
}

/// `K = max_j { sum_i |a_ij|, sum_i b_ij } v 1`.
pub fn growth_constant(bounds: &CoeffBounds) -> f64 {
    let abs_a = bounds.a().column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>());
    let sum_b = bounds.b().column_iter().map(|c| c.sum());
    abs_a.chain(sum_b).fold(1.0, f64::max)
}

/// Largest real part among the eigenvalues of a Metzler matrix.
///
/// Closed form for `d <= 2`. Larger matrices are shifted to be nonnegative
/// and the Perron root is found by power iteration.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::input("spectral abscissa needs a non-empty square matrix"));
    }
    match m.nrows() {
        1 => Ok(m[(0, 0)]),
        2 => {
            let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
            let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
            let disc = half_diff * half_diff + m[(0, 1)] * m[(1, 0)];
            Ok(if disc >= 0.0 { half_trace + disc.sqrt() } else { half_trace })
        }
        d => {
            let max_diag = (0..d).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
            let max_row = m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
            let shift = max_diag + max_row;
            let shifted = m + DMatrix::identity(d, d) * shift;
            perron_root(&shifted).map(|rho| rho - shift)
        }
    }
}

fn perron_root(n: &DMatrix<f64>) -> Result<f64> {
    let d = n.nrows();
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut rho_prev = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let w = n * &v;
        let rho = w.norm();
        if rho == 0.0 {
            return Ok(0.0);
        }
        // Collatz-Wielandt bracket, valid while v stays positive.
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..d {
            if v[i] > f64::MIN_POSITIVE {
                let r = w[i] / v[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let tol = POWER_TOL * rho.max(1.0);
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        if (rho - rho_prev).abs() <= tol {
            return Ok(rho);
        }
        rho_prev = rho;
        v = w / rho;
    }
    Err(Error::NumericalDegeneracy { abscissa: f64::NAN })
}

/// Positive `p` with `(A + B) p < 0`, built as `p = (-M)^{-1} 1`.
///
/// For a Hurwitz Metzler `M` the inverse of `-M` is entrywise nonnegative
/// with positive row sums, so `p > 0` and `M p = -1` exactly.
pub fn find_certificate(bounds: &CoeffBounds) -> Result<CertificateSearch> {
    certificate_for(bounds, &bounds.combined())
}

fn certificate_for(bounds: &CoeffBounds, m: &DMatrix<f64>) -> Result<CertificateSearch> {
    let abscissa = spectral_abscissa(m)?;
    if abscissa.abs() <= ABSCISSA_TOL || abscissa.is_nan() {
        return Err(Error::NumericalDegeneracy { abscissa });
    }
    if abscissa > 0.0 {
        return Ok(CertificateSearch::Infeasible { abscissa });
    }
    let d = bounds.dim();
    let neg = -m;
    let p = neg
        .lu()
        .solve(&DVector::from_element(d, 1.0))
        .ok_or(Error::NumericalDegeneracy { abscissa })?;
    if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NumericalDegeneracy { abscissa });
    }
    let margins = (m * &p).iter().copied().collect();
    Ok(CertificateSearch::Feasible {
        certificate: Certificate { p: p.iter().copied().collect(), beta: None, margins },
        abscissa,
    })
}

fn check_weights(bounds: &CoeffBounds, p: &[f64]) -> Result<()> {
    if p.len() != bounds.dim() {
        return Err(Error::input(format!("p has length {}, expected {}", p.len(), bounds.dim())));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::input(format!("p[{i}] = {v} must be strictly positive")));
    }
    Ok(())
}

/// `margins_i = sum_j (a_ij + b_ij) p_j`; feasible iff every margin is negative.
pub fn verify_certificate(bounds: &CoeffBounds, p: &[f64]) -> Result<MarginCheck> {
    check_weights(bounds, p)?;
    let p = DVector::from_column_slice(p);
    let margins: Vec<f64> = (bounds.combined() * p).iter().copied().collect();
    let feasible = margins.iter().all(|&m| m < 0.0);
    Ok(MarginCheck { margins, feasible })
}

/// `max_i [ sum_j a_ij p_j + e^{beta tau} sum_j b_ij p_j + beta p_i ]`,
/// strictly increasing in `beta`.
pub fn decay_objective(bounds: &CoeffBounds, p: &[f64], tau_max: f64, beta: f64) -> f64 {
    let pv = DVector::from_column_slice(p);
    let ap = bounds.a() * &pv;
    let bp = bounds.b() * &pv;
    let growth = (beta * tau_max).exp();
    (0..p.len()).map(|i| ap[i] + growth * bp[i] + beta * p[i]).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `beta >= 0` with `sum_j (a_ij + e^{beta tau} b_ij) p_j <= -beta p_i`
/// for every row, by bisection to [`BETA_TOL`].
pub fn decay_rate(bounds: &CoeffBounds, p: &[f64], tau_max: f64) -> Result<f64> {
    if !(tau_max.is_finite() && tau_max > 0.0) {
        return Err(Error::input(format!("tau_max must be positive, got {tau_max}")));
    }
    let check = verify_certificate(bounds, p)?;
    if !check.feasible {
        return Err(Error::Precondition(format!("p is not a certificate: margins {:?}", check.margins)));
    }
    let mut lo = 0.0;
    let mut hi = check.margins.iter().zip(p).map(|(m, pi)| m.abs() / pi).fold(0.0, f64::max);
    let objective = |beta: f64| decay_objective(bounds, p, tau_max, beta);
    while hi - lo > BETA_TOL {
        let mid = 0.5 * (lo + hi);
        if objective(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `min_i |a_ii| / (d max_i |a_ii|)`; requires every `a_ii < 0`.
pub fn epsilon_upper_bound(bounds: &CoeffBounds) -> Result<f64> {
    let diag: Vec<f64> = bounds.a().diagonal().iter().copied().collect();
    if let Some((i, v)) = diag.iter().enumerate().find(|(_, v)| **v >= 0.0) {
        return Err(Error::Precondition(format!("a[{i}][{i}] = {v} must be negative for the epsilon condition")));
    }
    let min = diag.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let max = diag.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(min / (bounds.dim() as f64 * max))
}

/// The implicit-scheme condition
/// `eps a_ii p_i + sum_{j != i} a_ij p_j + sum_j b_ij p_j < 0`.
pub fn check_theta_condition(bounds: &CoeffBounds, p: &[f64], epsilon: f64) -> Result<ThetaCheck> {
    check_weights(bounds, p)?;
    let epsilon_bound = epsilon_upper_bound(bounds)?;
    if !(epsilon > 0.0 && epsilon < epsilon_bound) {
        return Err(Error::input(format!(
            "epsilon = {epsilon} must lie in (0, {epsilon_bound}), the bound min|a_ii| / (d max|a_ii|)"
        )));
    }
    let margins: Vec<f64> =
        (epsilon_weighted(bounds, epsilon) * DVector::from_column_slice(p)).iter().copied().collect();
    let feasible = margins.iter().all(|&m| m < 0.0);
    Ok(ThetaCheck { margins, feasible, epsilon, epsilon_bound })
}

/// `A` with its diagonal scaled by `epsilon`, plus `B`.
fn epsilon_weighted(bounds: &CoeffBounds, epsilon: f64) -> DMatrix<f64> {
    let mut m = bounds.combined();
    for i in 0..bounds.dim() {
        m[(i, i)] -= (1.0 - epsilon) * bounds.a()[(i, i)];
    }
    m
}

/// Certificate search for the epsilon condition; the matrix
/// `eps diag(A) + offdiag(A) + B` is again Metzler, so the same construction applies.
pub fn find_theta_certificate(bounds: &CoeffBounds, epsilon: f64) -> Result<CertificateSearch> {
    let bound = epsilon_upper_bound(bounds)?;
    if !(epsilon > 0.0 && epsilon < bound) {
        return Err(Error::input(format!("epsilon = {epsilon} must lie in (0, {bound})")));
    }
    certificate_for(bounds, &epsilon_weighted(bounds, epsilon))
}

/// Linear-growth constant of a linear drift `f(x, y) = Cx x + Cy y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearGrowth {
    /// `r_i = sum_j |Cx_ij| + sum_j |Cy_ij|`.
    pub row_sums: Vec<f64>,
    /// `K = |r|_2`, which gives `|f(x, y)| <= K (|x| + |y|)` in the Euclidean norm.
    pub k: f64,
}

pub fn linear_growth_constant(cx: &DMatrix<f64>, cy: &DMatrix<f64>) -> Result<LinearGrowth> {
    if cx.nrows() != cy.nrows() {
        return Err(Error::input("drift coefficient matrices must have equal row counts"));
    }
    let row_sums: Vec<f64> = (0..cx.nrows())
        .map(|i| cx.row(i).iter().chain(cy.row(i).iter()).map(|v| v.abs()).sum())
        .collect();
    let k = euclidean_norm(&row_sums);
    Ok(LinearGrowth { row_sums, k })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub sample: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub norm_f: f64,
    pub bound: f64,
}

/// Samples `|f(x, y)| <= K (|x| + |y|)` in the `2d`-ball.
pub fn check_linear_growth(
    system: &SddeSystem,
    k: f64,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<GrowthViolation>> {
    if n_samples == 0 || !(radius > 0.0) {
        return Err(Error::input("need n_samples >= 1 and radius > 0"));
    }
    let d = system.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for sample in 0..n_samples {
        let z = sample_ball(&mut rng, 2 * d, radius);
        let (x, y) = z.split_at(d);
        let norm_f = euclidean_norm(&system.eval_drift(x, y)?);
        if !norm_f.is_finite() {
            return Err(Error::Evaluation { sample, what: format!("drift non-finite at x = {x:?}, y = {y:?}") });
        }
        let bound = k * (euclidean_norm(x) + euclidean_norm(y));
        if norm_f > bound * (1.0 + BOUND_SLACK) {
            out.push(GrowthViolation { sample, x: x.to_vec(), y: y.to_vec(), norm_f, bound });
        }
    }
    Ok(out)
}

/// `2 (1 - 2 theta) K^2 delta + a_ii` per row; the low-theta stability
/// argument needs all of them negative.
pub fn theta_low_step_margins(bounds: &CoeffBounds, k: f64, theta: f64, delta: f64) -> Vec<f64> {
    let extra = 2.0 * (1.0 - 2.0 * theta) * k * k * delta;
    bounds.a().diagonal().iter().map(|a| extra + a).collect()
}
