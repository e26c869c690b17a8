//! Counter-based Brownian increments, ensemble moments and decay fits.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GridSpec, InitialSegment, SddeSystem};
use crate::schemes::{drive_path, NoiseSource, SchemeConfig, Trajectory};

/// Env var capping the worker count.
pub const THREADS_ENV: &str = "STABILAB_THREADS";

/// Paths integrated per parallel batch. Independent of the worker count.
const BLOCK: usize = 64;

/// Values at or below this are skipped by the log-linear fit.
pub const FIT_FLOOR: f64 = 1e-300;

/// Brownian increments for one path.
///
/// Each `(seed, path_id)` pair selects a ChaCha12 key and stream; step `k`
/// reads a fixed block of words starting at `k * words_per_step`, so any
/// increment can be regenerated without replaying earlier ones. Sequential
/// reads through [`NoiseSource`] reuse the generator position.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    path_id: u64,
    m: usize,
    delta: f64,
    rng: ChaCha12Rng,
    next_step: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, path_id: u64, m: usize, delta: f64) -> Result<Self> {
        if m == 0 || !(delta > 0.0) {
            return Err(Error::input(format!("noise stream needs m >= 1 and delta > 0 (m = {m}, delta = {delta})")));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(path_id);
        Ok(Self { seed, path_id, m, delta, rng, next_step: 0 })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// 32-bit words consumed per step: two u64 per Box-Muller pair.
    fn words_per_step(&self) -> u128 {
        4 * self.m.div_ceil(2) as u128
    }

    fn fill(&mut self, step: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.m, "increment buffer has the wrong length");
        if step != self.next_step {
            self.rng.set_word_pos(step as u128 * self.words_per_step());
        }
        let scale = self.delta.sqrt();
        for pair in out.chunks_mut(2) {
            // Uniforms on (0, 1]; ln never sees zero.
            let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let r = (-2.0 * u1.ln()).sqrt() * scale;
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            pair[0] = r * c;
            if pair.len() == 2 {
                pair[1] = r * s;
            }
        }
        self.next_step = step + 1;
    }
}

impl NoiseSource for NoiseStream {
    fn increment(&mut self, step: usize, out: &mut [f64]) {
        self.fill(step, out)
    }
}

/// `Delta B_step` for the stream's path: `m` independent N(0, delta) draws.
pub fn brownian_increments(stream: &NoiseStream, step: usize) -> Vec<f64> {
    let mut fresh = stream.clone();
    let mut out = vec![0.0; stream.m];
    fresh.fill(step, &mut out);
    out
}

/// Reads `STABILAB_THREADS`. Unset or empty means no cap.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Configuration(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Weights `p` for `V_k = sum_i E|X_k^i|^2 / p_i`; all ones when absent.
    pub p: Option<Vec<f64>>,
    /// Worker cap; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl EnsembleOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, ..Self::default() }
    }

    pub fn with_weights(mut self, p: Vec<f64>) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergedPath {
    pub path: usize,
    /// Index of the last state that entered the moments.
    pub step: usize,
    pub reason: String,
}

/// Ensemble second moments on the grid, `k = -m_bar ..= N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub m_bar: usize,
    pub times: Vec<f64>,
    /// `component_moments[i][row]` estimates `E|X^i|^2`.
    pub component_moments: Vec<Vec<f64>>,
    pub component_se: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub weighted: Vec<f64>,
    pub weighted_se: Vec<f64>,
    /// Paths still finite at each row.
    pub n_alive: Vec<usize>,
    pub n_paths: usize,
    pub n_diverged: usize,
    pub diverged: Vec<DivergedPath>,
}

impl MomentSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.component_moments.len()
    }

    /// Row of scheme index `k`.
    pub fn row(&self, k: i64) -> usize {
        usize::try_from(k + self.m_bar as i64).expect("index below -m_bar")
    }

    pub fn initial_weighted(&self) -> f64 {
        self.weighted[self.row(0)]
    }

    pub fn terminal_weighted(&self) -> f64 {
        *self.weighted.last().expect("series is never empty")
    }
}

struct PathResult {
    /// `x_i^2` row by row, `d` per state, for the states reached.
    squares: Vec<f64>,
    diverged: Option<DivergedPath>,
}

fn run_path(
    system: &SddeSystem,
    scheme: &SchemeConfig,
    grid: &GridSpec,
    xi: &InitialSegment,
    seed: u64,
    path: usize,
) -> Result<PathResult> {
    let mut noise = NoiseStream::new(seed, path as u64, system.noise_dim(), grid.delta)?;
    let mut squares = Vec::with_capacity(grid.n_states() * system.dim());
    let outcome = drive_path(system, scheme, grid, xi, &mut noise, |_, x| squares.extend(x.iter().map(|v| v * v)));
    match outcome {
        Ok(()) => Ok(PathResult { squares, diverged: None }),
        Err(e @ (Error::Overflow { .. } | Error::Convergence { .. } | Error::Evaluation { .. })) => {
            // Squares of huge finite states may still overflow; keep only finite rows.
            let d = system.dim();
            let finite_rows = squares.chunks(d).take_while(|r| r.iter().all(|v| v.is_finite())).count();
            squares.truncate(finite_rows * d);
            let step = (finite_rows as i64 - grid.m_bar as i64 - 1).max(0) as usize;
            Ok(PathResult { squares, diverged: Some(DivergedPath { path, step, reason: e.to_string() }) })
        }
        Err(e) => Err(e),
    }
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn standard_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        }
    }
}

/// Integrates `n_paths` paths on path-indexed noise streams and averages
/// `|X_k^i|^2`. A path that overflows contributes up to its last finite
/// state and is listed in `diverged`. The output is bitwise reproducible for
/// fixed `(seed, n_paths)` whatever the worker count.
pub fn ensemble_moments(
    system: &SddeSystem,
    scheme: &SchemeConfig,
    grid: &GridSpec,
    xi: &InitialSegment,
    options: &EnsembleOptions,
) -> Result<MomentSeries> {
    let d = system.dim();
    if options.n_paths == 0 {
        return Err(Error::input("n_paths must be at least 1"));
    }
    let weights = match &options.p {
        Some(p) if p.len() != d || p.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
            return Err(Error::input(format!("weights must be {d} positive finite numbers")));
        }
        Some(p) => p.clone(),
        None => vec![1.0; d],
    };
    let n_rows = grid.n_states();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;

    let mut stats = vec![Welford::default(); n_rows * (d + 1)];
    let mut diverged = Vec::new();
    for start in (0..options.n_paths).step_by(BLOCK) {
        let end = (start + BLOCK).min(options.n_paths);
        let block: Vec<Result<PathResult>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|path| run_path(system, scheme, grid, xi, options.seed, path))
                .collect()
        });
        // Fixed path order keeps the reduction deterministic.
        for result in block {
            let result = result?;
            for (row, sq) in result.squares.chunks(d).enumerate() {
                let cell = &mut stats[row * (d + 1)..(row + 1) * (d + 1)];
                let mut v = 0.0;
                for i in 0..d {
                    cell[i].push(sq[i]);
                    v += sq[i] / weights[i];
                }
                cell[d].push(v);
            }
            diverged.extend(result.diverged);
        }
    }

    let mut series = MomentSeries {
        m_bar: grid.m_bar,
        times: (0..n_rows).map(|r| grid.time(r as i64 - grid.m_bar as i64)).collect(),
        component_moments: vec![Vec::with_capacity(n_rows); d],
        component_se: vec![Vec::with_capacity(n_rows); d],
        weights,
        weighted: Vec::with_capacity(n_rows),
        weighted_se: Vec::with_capacity(n_rows),
        n_alive: Vec::with_capacity(n_rows),
        n_paths: options.n_paths,
        n_diverged: diverged.len(),
        diverged,
    };
    for row in 0..n_rows {
        let cell = &stats[row * (d + 1)..(row + 1) * (d + 1)];
        if cell[d].n == 0 {
            return Err(Error::Estimation { step: row - grid.m_bar });
        }
        for i in 0..d {
            series.component_moments[i].push(cell[i].mean);
            series.component_se[i].push(cell[i].standard_error());
        }
        series.weighted.push(cell[d].mean);
        series.weighted_se.push(cell[d].standard_error());
        series.n_alive.push(cell[d].n);
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Slope of `ln V` against `t`.
    pub lambda: f64,
    pub standard_error: f64,
    pub n_points: usize,
    pub t_start: f64,
}

/// Least squares of `ln V` on `t` over the trailing `window_fraction` of the horizon.
pub fn fit_decay_rate(series: &MomentSeries, window_fraction: f64) -> Result<DecayFit> {
    fit_log_linear(&series.times, &series.weighted, window_fraction)
}

/// [`fit_decay_rate`] on raw columns. The window is `t >= (1 - frac) t_end`.
pub fn fit_log_linear(times: &[f64], values: &[f64], window_fraction: f64) -> Result<DecayFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::input(format!("window fraction {window_fraction} must lie in (0, 1]")));
    }
    if times.len() != values.len() {
        return Err(Error::input("times and values differ in length"));
    }
    let t_end = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_start = (1.0 - window_fraction) * t_end;
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= t_start && **v > FIT_FLOOR && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let n = points.len();
    if n < 3 {
        return Err(Error::Fit(format!("{n} usable points in the window, need at least 3")));
    }
    let nf = n as f64;
    let t_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("window has no spread in t".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    let lambda = sxy / sxx;
    let intercept = y_mean - lambda * t_mean;
    let ssr: f64 = points.iter().map(|p| (p.1 - intercept - lambda * p.0).powi(2)).sum();
    let standard_error = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(DecayFit { lambda, standard_error, n_points: n, t_start })
}

/// `log|X_N^i| / (N delta)` per component; zero components give `-inf`.
pub fn as_exponent(trajectory: &Trajectory, grid: &GridSpec) -> Result<Vec<f64>> {
    let n = trajectory.last_index();
    if n <= 0 {
        return Err(Error::input("terminal exponent needs at least one step"));
    }
    let horizon = n as f64 * grid.delta;
    trajectory
        .state(n)
        .iter()
        .map(|x| {
            if !x.is_finite() {
                Err(Error::input(format!("terminal state {x} is not finite")))
            } else if *x == 0.0 {
                Ok(f64::NEG_INFINITY)
            } else {
                Ok(x.abs().ln() / horizon)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    use crate::model::DelayFunction;
    use crate::schemes::integrate_path;

    fn geometric(a: f64, sigma: f64, tau: f64) -> SddeSystem {
        SddeSystem::new(
            1,
            1,
            move |x, _| vec![a * x[0]],
            move |x, _| DMatrix::from_element(1, 1, sigma * x[0]),
            DelayFunction::constant(tau).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn increments_are_reproducible() {
        let s = NoiseStream::new(7, 3, 3, 0.01).unwrap();
        assert_eq!(brownian_increments(&s, 12), brownian_increments(&s, 12));
        let other = NoiseStream::new(7, 4, 3, 0.01).unwrap();
        assert_ne!(brownian_increments(&s, 12), brownian_increments(&other, 12));
        assert_ne!(brownian_increments(&s, 12), brownian_increments(&s, 13));
    }

    #[test]
    fn sequential_reads_match_random_access() {
        for m in [1usize, 2, 3] {
            let base = NoiseStream::new(42, 9, m, 0.02).unwrap();
            let mut seq = base.clone();
            let mut out = vec![0.0; m];
            for step in 0..50 {
                seq.increment(step, &mut out);
                assert_eq!(out, brownian_increments(&base, step));
            }
            // Jumping backwards and forwards agrees as well.
            seq.increment(7, &mut out);
            assert_eq!(out, brownian_increments(&base, 7));
        }
    }

    #[test]
    fn increment_moments_match_clt_bounds() {
        let delta = 0.01;
        let n = 1_000_000usize;
        let mut stream = NoiseStream::new(2024, 0, 2, delta).unwrap();
        let mut out = [0.0; 2];
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for step in 0..n / 2 {
            stream.increment(step, &mut out);
            for v in out {
                sum += v;
                sumsq += v * v;
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() <= 4.0 * (delta / n as f64).sqrt(), "mean {mean}");
        assert!((var / delta - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn deterministic_system_moments_are_exact() {
        let system = geometric(-1.0, 0.0, 0.1);
        let grid = GridSpec::new(0.1, 10, 50).unwrap();
        let xi = InitialSegment::constant(vec![1.0]);
        let series = ensemble_moments(&system, &SchemeConfig::em(), &grid, &xi, &EnsembleOptions::new(17, 1)).unwrap();
        assert_eq!(series.len(), 61);
        let mut x = 1.0f64;
        for k in 0..=50i64 {
            assert_relative_eq!(series.component_moments[0][series.row(k)], x * x, max_relative = 1e-14);
            x *= 1.0 - 0.01;
        }
        assert!(series.weighted_se.iter().all(|s| *s < 1e-15));
    }

    #[test]
    fn zero_initial_segment_stays_zero() {
        let system = geometric(-1.0, 0.5, 0.1);
        let grid = GridSpec::new(0.1, 10, 30).unwrap();
        let xi = InitialSegment::constant(vec![0.0]);
        let series = ensemble_moments(&system, &SchemeConfig::theta(0.5).unwrap(), &grid, &xi, &EnsembleOptions::new(8, 1)).unwrap();
        assert!(series.weighted.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_paths_rejected() {
        let system = geometric(-1.0, 0.5, 0.1);
        let grid = GridSpec::new(0.1, 10, 3).unwrap();
        let r = ensemble_moments(&system, &SchemeConfig::em(), &grid, &InitialSegment::constant(vec![1.0]), &EnsembleOptions::new(0, 1));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn moments_follow_em_recursion() {
        let delta = 0.01;
        let system = geometric(-1.0, 0.5, delta);
        let grid = GridSpec::new(delta, 1, 60).unwrap();
        let xi = InitialSegment::constant(vec![1.0]);
        let growth = (1.0 - delta).powi(2) + 0.25 * delta;
        let mut worst = Vec::new();
        for n_paths in [2_000usize, 8_000] {
            let series = ensemble_moments(&system, &SchemeConfig::em(), &grid, &xi, &EnsembleOptions::new(n_paths, 11)).unwrap();
            let mut max_z = 0.0f64;
            for k in 1..=60i64 {
                let row = series.row(k);
                let exact = growth.powi(k as i32);
                max_z = max_z.max((series.component_moments[0][row] - exact).abs() / series.component_se[0][row]);
            }
            assert!(max_z < 3.0, "n_paths {n_paths}: {max_z} standard errors");
            worst.push(series.component_se[0][series.row(60)]);
        }
        // Four times the paths, half the standard error.
        assert_relative_eq!(worst[0] / worst[1], 2.0, max_relative = 0.1);
    }

    #[test]
    fn diverging_paths_are_counted() {
        let system = SddeSystem::new(
            1,
            1,
            |x, _| vec![x[0].powi(3)],
            |x, _| DMatrix::from_element(1, 1, x[0]),
            DelayFunction::constant(0.1).unwrap(),
        )
        .unwrap();
        let grid = GridSpec::new(0.1, 10, 400).unwrap();
        let r = ensemble_moments(&system, &SchemeConfig::em(), &grid, &InitialSegment::constant(vec![5.0]), &EnsembleOptions::new(4, 3));
        assert!(matches!(r, Err(Error::Estimation { .. })), "{r:?}");
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let system = geometric(-0.5, 0.8, 0.05);
        let grid = GridSpec::new(0.05, 5, 100).unwrap();
        let xi = InitialSegment::constant(vec![1.0]);
        let run = |threads| {
            ensemble_moments(&system, &SchemeConfig::em(), &grid, &xi, &EnsembleOptions::new(300, 5).with_threads(Some(threads))).unwrap()
        };
        let a = run(1);
        let b = run(4);
        let bits = |s: &MomentSeries| s.weighted.iter().chain(&s.weighted_se).map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn fit_exact_exponential() {
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let values: Vec<f64> = times.iter().map(|t| 2.0 * (-0.5 * t).exp()).collect();
        let fit = fit_log_linear(&times, &values, 0.5).unwrap();
        assert!((fit.lambda + 0.5).abs() < 1e-12);
        let flat = fit_log_linear(&times, &vec![3.0; times.len()], 0.5).unwrap();
        assert!(flat.lambda.abs() < 1e-15);
    }

    #[test]
    fn fit_needs_three_points() {
        let r = fit_log_linear(&[0.0, 1.0, 2.0], &[1.0, 0.0, 1e-320], 1.0);
        assert!(matches!(r, Err(Error::Fit(_))));
        assert!(fit_log_linear(&[0.0, 1.0], &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn exponent_examples() {
        let delta = 0.1;
        let system = geometric(-1.0, 0.0, delta);
        let grid = GridSpec::new(delta, 1, 100).unwrap();
        let mut noise = |_: usize, out: &mut [f64]| out[0] = 0.0;
        let traj = integrate_path(&system, &SchemeConfig::theta(1.0).unwrap(), &grid, &InitialSegment::constant(vec![1.0]), &mut noise).unwrap();
        let e = as_exponent(&traj, &grid).unwrap();
        assert_relative_eq!(e[0], -(1.1f64).ln() * 100.0 / 10.0, epsilon = 1e-10);
        assert_relative_eq!(e[0], -0.9531, epsilon = 1e-4);

        let still = geometric(0.0, 0.0, delta);
        let traj = integrate_path(&still, &SchemeConfig::em(), &grid, &InitialSegment::constant(vec![1.0]), &mut noise).unwrap();
        assert_eq!(as_exponent(&traj, &grid).unwrap(), vec![0.0]);
        let traj = integrate_path(&still, &SchemeConfig::em(), &grid, &InitialSegment::constant(vec![0.0]), &mut noise).unwrap();
        assert_eq!(as_exponent(&traj, &grid).unwrap(), vec![f64::NEG_INFINITY]);
        let empty = GridSpec::new(delta, 1, 0).unwrap();
        let traj = integrate_path(&still, &SchemeConfig::em(), &empty, &InitialSegment::constant(vec![1.0]), &mut noise).unwrap();
        assert!(as_exponent(&traj, &empty).is_err());
    }

    #[test]
    fn exponent_of_exact_exponential() {
        // Drift chosen so one EM step multiplies by e^{-delta}.
        let delta: f64 = 0.01;
        let a = ((-delta).exp() - 1.0) / delta;
        let system = geometric(a, 0.0, delta);
        let grid = GridSpec::new(delta, 1, 500).unwrap();
        let mut noise = |_: usize, out: &mut [f64]| out[0] = 0.0;
        let traj = integrate_path(&system, &SchemeConfig::em(), &grid, &InitialSegment::constant(vec![1.0]), &mut noise).unwrap();
        assert_relative_eq!(as_exponent(&traj, &grid).unwrap()[0], -1.0, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn fit_recovers_slope_under_small_noise(lambda in -2.0f64..-0.05, seed in any::<u64>()) {
            let times: Vec<f64> = (0..=400).map(|k| k as f64 * 0.05).collect();
            let mut stream = NoiseStream::new(seed, 0, 1, 1.0).unwrap();
            let mut eta = [0.0];
            let values: Vec<f64> = times.iter().enumerate().map(|(k, t)| {
                stream.increment(k, &mut eta);
                (lambda * t).exp() * (1.0 + 0.01 * eta[0].clamp(-5.0, 5.0))
            }).collect();
            let fit = fit_log_linear(&times, &values, 0.5).unwrap();
            prop_assert!((fit.lambda - lambda).abs() < 0.05);
        }
    }
}
