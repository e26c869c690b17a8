//! Command-line pipeline: presets, configs, certify/simulate/check/fit.

pub mod config;
pub mod preset;
pub mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::certify::{
    check_componentwise_bound, check_linear_growth, check_theta_condition, epsilon_upper_bound, find_certificate,
    find_theta_certificate, growth_constant, khasminskii_diagnostic, linear_growth_constant, theta_low_step_margins,
    verify_certificate, CertificateSearch,
};
use crate::error::{Error, Result};
use crate::model::GridSpec;
use crate::montecarlo::{ensemble_moments, fit_decay_rate, fit_log_linear, threads_from_env, EnsembleOptions, MomentSeries};
use crate::schemes::{SchemeConfig, SchemeKind};
use crate::truncation::check_truncation_lemmas;

pub use config::{ConfigFile, ExperimentConfig, Overrides, SchemeChoice};
pub use preset::{preset, Preset, PRESET_NAMES};
pub use report::{read_moments_csv, write_moments_csv, CertifyReport, CheckReport, Report, SimulationSummary};

/// Default epsilon is this fraction of the admissible bound.
pub const EPSILON_FRACTION: f64 = 0.998;
pub const CHECK_SAMPLES: usize = 10_000;
pub const CHECK_RADIUS: f64 = 10.0;

fn with_beta(search: CertificateSearch, model: &Preset) -> Result<CertificateSearch> {
    Ok(match search {
        CertificateSearch::Feasible { certificate, abscissa } => CertificateSearch::Feasible {
            certificate: certificate.with_decay_rate(&model.bounds, model.system.delay().tau_max())?,
            abscissa,
        },
        other => other,
    })
}

/// Algebraic half of the pipeline: diagnostics, certificate, decay rate,
/// and for theta-EM the epsilon condition and the low-theta growth check.
pub fn certify(model: &Preset, scheme: &SchemeConfig, epsilon: Option<f64>, delta: f64, seed: u64) -> Result<CertifyReport> {
    let bounds = &model.bounds;
    let certificate = with_beta(find_certificate(bounds)?, model)?;
    let reference = match &model.reference_p {
        Some(p) => Some(report::ReferenceCheck { p: p.clone(), check: verify_certificate(bounds, p)? }),
        None => None,
    };
    let theta = match scheme.kind {
        SchemeKind::ThetaEm { theta } => {
            let epsilon_bound = epsilon_upper_bound(bounds)?;
            let epsilon = epsilon.unwrap_or(EPSILON_FRACTION * epsilon_bound);
            let mut notes = Vec::new();
            let reference = match (&model.reference_p, model.reference_epsilon) {
                (Some(p), Some(e)) => Some(check_theta_condition(bounds, p, e)?),
                _ => None,
            };
            let low_theta = if theta <= 0.5 {
                match &model.linear_drift {
                    Some((cx, cy)) => {
                        let growth = linear_growth_constant(cx, cy)?;
                        let step_margins = theta_low_step_margins(bounds, growth.k, theta, delta);
                        let violations = check_linear_growth(&model.system, growth.k, CHECK_SAMPLES, CHECK_RADIUS, seed)?;
                        Some(report::LowThetaCheck {
                            margins_negative: step_margins.iter().all(|m| *m < 0.0),
                            row_sums: growth.row_sums,
                            k: growth.k,
                            step_margins,
                            n_samples: CHECK_SAMPLES,
                            growth_violations: violations.len(),
                        })
                    }
                    None => {
                        notes.push("drift is not linear, so the theta <= 1/2 stability result does not cover this run".into());
                        None
                    }
                }
            } else {
                None
            };
            Some(report::ThetaSection {
                theta,
                epsilon,
                epsilon_bound,
                certificate: with_beta(find_theta_certificate(bounds, epsilon)?, model)?,
                reference,
                low_theta,
                notes,
            })
        }
        _ => None,
    };
    Ok(CertifyReport {
        system: model.name.clone(),
        tau: model.system.delay().tau_max(),
        khasminskii: khasminskii_diagnostic(bounds),
        growth_k: growth_constant(bounds),
        certificate,
        reference,
        theta,
    })
}

/// Sampled assumption checks, plus the truncation lemmas for MTEM.
pub fn check(model: &Preset, scheme: &SchemeConfig, delta: f64, seed: u64) -> Result<CheckReport> {
    let diag = check_componentwise_bound(&model.system, &model.bounds, CHECK_SAMPLES, CHECK_RADIUS, seed)?;
    let truncation = match scheme.kind {
        SchemeKind::Mtem(cfg) => Some(check_truncation_lemmas(&model.system, &model.bounds, &cfg, delta, CHECK_SAMPLES, seed)?),
        _ => None,
    };
    Ok(CheckReport { n_samples: CHECK_SAMPLES, radius: CHECK_RADIUS, bound_violations: diag.violations.len(), truncation })
}

pub struct RunOutput {
    pub report: Report,
    pub series: MomentSeries,
}

/// Full pipeline; writes `moments.csv`, `report.txt`, `report.json` into `config.out`.
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput> {
    let model = &config.model;
    let grid = GridSpec::new(model.system.delay().tau_max(), config.m_bar, config.n_steps)?;
    let certify = certify(model, &config.scheme, config.epsilon, grid.delta, config.seed)?;
    let (weights, weights_source) = match (certify.certificate.certificate(), &model.reference_p) {
        (Some(c), _) => (c.p.clone(), "computed certificate".to_string()),
        (None, Some(p)) => (p.clone(), "reference p (no certificate exists)".to_string()),
        (None, None) => (vec![1.0; model.system.dim()], "unit weights (no certificate exists)".to_string()),
    };
    let options = EnsembleOptions::new(config.n_paths, config.seed).with_weights(weights.clone()).with_threads(threads);
    let series = ensemble_moments(&model.system, &config.scheme, &grid, &model.initial(), &options)?;
    let fit = fit_decay_rate(&series, config.window)?;
    let simulation = SimulationSummary {
        scheme: config.scheme.name(),
        m_bar: grid.m_bar,
        delta: grid.delta,
        n_steps: grid.n_steps,
        n_paths: config.n_paths,
        seed: config.seed,
        weights,
        weights_source,
        n_diverged: series.n_diverged,
        diverged: series.diverged.iter().take(10).cloned().collect(),
        initial_v: series.initial_weighted(),
        terminal_v: series.terminal_weighted(),
        window: config.window,
        fit,
    };
    let report = Report { certify, check: None, simulation: Some(simulation) };
    std::fs::create_dir_all(&config.out)?;
    write_moments_csv(&series, &config.out.join("moments.csv"))?;
    report.write(&config.out)?;
    Ok(RunOutput { report, series })
}

#[derive(Debug, Parser)]
#[command(name = "stabilab", version, about = "Mean-square stability lab for stochastic delay equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bound matrices to certificate report.
    Certify(CommonArgs),
    /// Certificate, ensemble moments and decay fit.
    Simulate(CommonArgs),
    /// Sampled assumption checks and truncation lemmas.
    Check(CommonArgs),
    /// Decay rate from an existing moments.csv.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Em,
    Theta,
    Mtem,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// example1 or example2.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long)]
    pub mbar: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trailing fraction of the horizon used by the decay fit.
    #[arg(long)]
    pub window: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// A moments.csv written by `simulate`.
    pub csv: PathBuf,
    #[arg(long, default_value = "0.5")]
    pub window: String,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let theta = self.theta.as_deref().map(config::parse_number).transpose()?;
        let file_theta = match &file.scheme {
            Some(config::SchemeSpec::Theta { theta, epsilon }) => Some((theta.0, epsilon.map(|e| e.0))),
            _ => None,
        };
        let scheme = match (self.scheme, theta) {
            (Some(SchemeArg::Em), _) => Some(SchemeChoice::Em),
            (Some(SchemeArg::Mtem), _) => Some(SchemeChoice::Mtem { h0: None, gamma: None, delta_star: None }),
            (Some(SchemeArg::Theta) | None, Some(t)) => {
                Some(SchemeChoice::Theta { theta: t, epsilon: file_theta.and_then(|(_, e)| e) })
            }
            (Some(SchemeArg::Theta), None) => match file_theta {
                Some((t, e)) => Some(SchemeChoice::Theta { theta: t, epsilon: e }),
                None => return Err(Error::input("--scheme theta needs --theta")),
            },
            (None, None) => None,
        };
        let overrides = Overrides {
            preset: self.preset.clone(),
            scheme,
            m_bar: self.mbar,
            n_steps: self.steps,
            n_paths: self.paths,
            seed: self.seed,
            window: self.window.as_deref().map(config::parse_number).transpose()?,
            out: self.out.clone(),
        };
        ExperimentConfig::resolve(file, overrides)
    }
}

/// Runs one parsed command; the text of any report goes to stdout.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Certify(args) | Command::Check(args) => {
            let cfg = args.resolve()?;
            let grid = GridSpec::new(cfg.model.system.delay().tau_max(), cfg.m_bar, cfg.n_steps)?;
            let certify = certify(&cfg.model, &cfg.scheme, cfg.epsilon, grid.delta, cfg.seed)?;
            let check = match cli.command {
                Command::Check(_) => Some(check(&cfg.model, &cfg.scheme, grid.delta, cfg.seed)?),
                _ => None,
            };
            let report = Report { certify, check, simulation: None };
            report.write(&cfg.out)?;
            print!("{}", report.to_text());
            if let Some(ch) = &report.check {
                let failed = ch.bound_violations > 0 || ch.truncation.as_ref().is_some_and(|t| !t.passed());
                if failed {
                    return Err(Error::Precondition("sampled assumption checks found violations".into()));
                }
            }
            Ok(())
        }
        Command::Simulate(args) => {
            let cfg = args.resolve()?;
            let out = run(&cfg, threads_from_env()?)?;
            print!("{}", out.report.to_text());
            Ok(())
        }
        Command::Fit(args) => {
            let (t, v) = read_moments_csv(&args.csv)?;
            let fit = fit_log_linear(&t, &v, config::parse_number(&args.window)?)?;
            println!(
                "lambda = {:.10} +/- {:.10} over t >= {} ({} points)",
                fit.lambda, fit.standard_error, fit.t_start, fit.n_points
            );
            Ok(())
        }
    }
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
