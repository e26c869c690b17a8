//! Report structures, text rendering and the moments CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::certify::{CertificateSearch, KhasminskiiVerdict, MarginCheck, ThetaCheck};
use crate::error::{Error, Result};
use crate::montecarlo::{DecayFit, DivergedPath, MomentSeries};
use crate::truncation::TruncationReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceCheck {
    pub p: Vec<f64>,
    pub check: MarginCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowThetaCheck {
    /// Per-row absolute coefficient sums of the linear drift.
    pub row_sums: Vec<f64>,
    pub k: f64,
    /// `2 (1 - 2 theta) K^2 delta + a_ii`.
    pub step_margins: Vec<f64>,
    pub margins_negative: bool,
    pub n_samples: usize,
    pub growth_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaSection {
    pub theta: f64,
    pub epsilon: f64,
    pub epsilon_bound: f64,
    pub certificate: CertificateSearch,
    pub reference: Option<ThetaCheck>,
    pub low_theta: Option<LowThetaCheck>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyReport {
    pub system: String,
    pub tau: f64,
    pub khasminskii: KhasminskiiVerdict,
    pub growth_k: f64,
    pub certificate: CertificateSearch,
    pub reference: Option<ReferenceCheck>,
    pub theta: Option<ThetaSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub n_samples: usize,
    pub radius: f64,
    pub bound_violations: usize,
    pub truncation: Option<TruncationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub scheme: String,
    pub m_bar: usize,
    pub delta: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub weights_source: String,
    pub n_diverged: usize,
    /// First few diverged paths.
    pub diverged: Vec<DivergedPath>,
    pub initial_v: f64,
    pub terminal_v: f64,
    pub window: f64,
    pub fit: DecayFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub certify: CertifyReport,
    pub check: Option<CheckReport>,
    pub simulation: Option<SimulationSummary>,
}

fn vec_str(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn render_search(out: &mut String, label: &str, search: &CertificateSearch) {
    match search {
        CertificateSearch::Feasible { certificate, abscissa } => {
            let _ = writeln!(out, "{label}: found (spectral abscissa {abscissa:.8})");
            let _ = writeln!(out, "  p       = {}", vec_str(&certificate.p));
            let _ = writeln!(out, "  margins = {}", vec_str(&certificate.margins));
            if let Some(beta) = certificate.beta {
                let _ = writeln!(out, "  decay rate beta = {beta:.8}");
            }
        }
        CertificateSearch::Infeasible { abscissa } => {
            let _ = writeln!(out, "{label}: none exists (spectral abscissa {abscissa:.8} >= 0)");
        }
    }
}

impl Report {
    pub fn to_text(&self) -> String {
        let c = &self.certify;
        let mut out = String::new();
        let _ = writeln!(out, "system: {} (tau = {})", c.system, c.tau);
        let k = &c.khasminskii;
        let _ = writeln!(
            out,
            "Khasminskii diagnostic: {} (column sums of A {}, of B {})",
            if k.possibly_feasible { "possibly feasible" } else { "infeasible" },
            vec_str(&k.column_sums_a),
            vec_str(&k.column_sums_b)
        );
        let _ = writeln!(out, "growth constant K = {:.6}", c.growth_k);
        render_search(&mut out, "certificate", &c.certificate);
        if let Some(r) = &c.reference {
            let _ = writeln!(
                out,
                "reference p = {}: margins {} -> {}",
                vec_str(&r.p),
                vec_str(&r.check.margins),
                if r.check.feasible { "feasible" } else { "infeasible" }
            );
        }
        if let Some(t) = &c.theta {
            let _ = writeln!(out, "theta = {}: epsilon = {:.6} (admissible below {:.6})", t.theta, t.epsilon, t.epsilon_bound);
            render_search(&mut out, "epsilon certificate", &t.certificate);
            if let Some(r) = &t.reference {
                let _ = writeln!(
                    out,
                    "reference p under epsilon = {}: margins {} -> {}",
                    r.epsilon,
                    vec_str(&r.margins),
                    if r.feasible { "feasible" } else { "infeasible" }
                );
            }
            if let Some(l) = &t.low_theta {
                let _ = writeln!(out, "linear growth: row sums {}, K = {:.6}", vec_str(&l.row_sums), l.k);
                let _ = writeln!(
                    out,
                    "  step margins {} -> {}; sampled |f| <= K(|x|+|y|): {} violations in {} samples",
                    vec_str(&l.step_margins),
                    if l.margins_negative { "all negative" } else { "NOT all negative" },
                    l.growth_violations,
                    l.n_samples
                );
            }
            for note in &t.notes {
                let _ = writeln!(out, "note: {note}");
            }
        }
        if let Some(ch) = &self.check {
            let _ = writeln!(
                out,
                "componentwise bound: {} violations in {} samples (radius {})",
                ch.bound_violations, ch.n_samples, ch.radius
            );
            if let Some(t) = &ch.truncation {
                let _ = writeln!(
                    out,
                    "truncation (h = {:.6}, L_h = {:.6}): {} samples, {} outside the ball, {} bound and {} growth violations",
                    t.h,
                    t.lipschitz_h,
                    t.n_samples,
                    t.n_outside,
                    t.bound_violations.len(),
                    t.growth_violations.len()
                );
            }
        }
        if let Some(s) = &self.simulation {
            let _ = writeln!(
                out,
                "simulation: {} with m_bar = {} (delta = {}), N = {}, {} paths, seed {}",
                s.scheme, s.m_bar, s.delta, s.n_steps, s.n_paths, s.seed
            );
            let _ = writeln!(out, "  weights {} from {}", vec_str(&s.weights), s.weights_source);
            let _ = writeln!(out, "  diverged paths: {}", s.n_diverged);
            let _ = writeln!(out, "  V at t = 0: {:.6e}, at t = T: {:.6e}", s.initial_v, s.terminal_v);
            let _ = writeln!(
                out,
                "  fitted rate lambda = {:.6} +/- {:.6} over t >= {:.4} ({} points)",
                s.fit.lambda, s.fit.standard_error, s.fit.t_start, s.fit.n_points
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
        Ok(())
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columns `t, m1..md, V, se_V, n_alive`.
pub fn write_moments_csv(series: &MomentSeries, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.dim()).map(|i| format!("m{i}")));
    header.extend(["V", "se_V", "n_alive"].map(String::from));
    w.write_record(&header)?;
    for row in 0..series.len() {
        let mut rec = vec![fmt_real(series.times[row])];
        rec.extend(series.component_moments.iter().map(|m| fmt_real(m[row])));
        rec.push(fmt_real(series.weighted[row]));
        rec.push(fmt_real(series.weighted_se[row]));
        rec.push(series.n_alive[row].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `t` and `V` columns back.
pub fn read_moments_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(format!("{}: missing column {name:?}", path.display())))
    };
    let (ti, vi) = (col("t")?, col("V")?);
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::input(format!("{}: bad number in row {:?}", path.display(), rec.position())))
        };
        t.push(num(ti)?);
        v.push(num(vi)?);
    }
    Ok((t, v))
}
