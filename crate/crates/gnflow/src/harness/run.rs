//! Sweep driver: turns a config into trajectories, CSV artifacts, and a
//! consolidated TOML summary.
//!
//! One trajectory runs per (α, ρ) pair. Every artifact byte is a pure
//! function of the config content: data generation, initialization, and
//! integration are all seeded, collections iterate in fixed order, and
//! floats are printed with the shortest round-trip formatting. Per-pair
//! failures are captured in the summary instead of aborting the sweep.
//!
//! Certificate verdicts are recomputable after the fact: [`compute_verdicts`]
//! is a pure function of the recorded rows plus numbers that are all present
//! in the summary (the spectral block, ν, μ, Lip_f, the radius fraction, and
//! each run's α/ρ).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::activation::ActivationSpec;
use crate::data::Dataset;
use crate::diagnostics::{
    self, Regime, SpectralReport,
};
use crate::dynamics::{
    self, run_trajectory, FlowConfig, FlowMode, StepRow, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::synth::synth_dataset;
use crate::loss::QuadraticLoss;
use crate::network::Network;

/// Column order of every trajectory artifact.
pub const TRAJECTORY_HEADER: &str =
    "step,t,loss,gap,dev_norm,rgrad_norm,lambda_min_gram,lambda_max_gram,lambda_min_kernel,exited";

/// Multiplicative slack a certificate verdict allows before declaring a
/// violation (covers discretization and round-off, not model error).
pub const CERT_SLACK: f64 = 1.05;

/// File name of one trajectory artifact, e.g. `trajectory_alpha0.125_rho0.csv`.
pub fn artifact_name(alpha: f64, rho: f64) -> String {
    format!("trajectory_alpha{alpha}_rho{rho}.csv")
}

/// Renders rows as CSV with [`TRAJECTORY_HEADER`] column order. Floats use
/// shortest round-trip formatting; the exit flag is 0/1.
pub fn time_series_to_string(rows: &[StepRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(TRAJECTORY_HEADER.split(','))
        .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    for r in rows {
        wtr.write_record(&[
            r.step.to_string(),
            r.t.to_string(),
            r.loss.to_string(),
            r.gap.to_string(),
            r.dev_norm.to_string(),
            r.rgrad_norm.to_string(),
            r.lambda_min_gram.to_string(),
            r.lambda_max_gram.to_string(),
            r.lambda_min_kernel.to_string(),
            if r.exited { "1" } else { "0" }.to_string(),
        ])
        .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Data(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv utf-8: {e}")))
}

fn parse_field<T: std::str::FromStr>(field: &str, column: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| {
        Error::Data(format!(
            "cannot parse {field:?} in column {column:?}, row {line}"
        ))
    })
}

/// Reads a trajectory artifact back. Strict: the header must match
/// [`TRAJECTORY_HEADER`] exactly (names and order), every numeric cell must
/// parse, and the exit flag must be literally `0` or `1`.
pub fn read_time_series<R: Read>(reader: R) -> Result<Vec<StepRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read artifact header: {e}")))?;
    let expected: Vec<&str> = TRAJECTORY_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Data(format!(
            "unexpected artifact header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let names: Vec<String> = expected.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Data(format!("artifact parse error: {e}")))?;
        if record.len() != names.len() {
            return Err(Error::Data(format!(
                "row {line} has {} fields, expected {}",
                record.len(),
                names.len()
            )));
        }
        let exited = match &record[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data(format!(
                    "exit flag must be 0 or 1, got {other:?} in row {line}"
                )))
            }
        };
        rows.push(StepRow {
            step: parse_field(&record[0], &names[0], line)?,
            t: parse_field(&record[1], &names[1], line)?,
            loss: parse_field(&record[2], &names[2], line)?,
            gap: parse_field(&record[3], &names[3], line)?,
            dev_norm: parse_field(&record[4], &names[4], line)?,
            rgrad_norm: parse_field(&record[5], &names[5], line)?,
            lambda_min_gram: parse_field(&record[6], &names[6], line)?,
            lambda_max_gram: parse_field(&record[7], &names[7], line)?,
            lambda_min_kernel: parse_field(&record[8], &names[8], line)?,
            exited,
        });
    }
    Ok(rows)
}

pub fn read_time_series_str(text: &str) -> Result<Vec<StepRow>> {
    read_time_series(text.as_bytes())
}

/// Pass/fail record of one closed-form bound against one trajectory.
/// `max_ratio` is the worst measured-to-bound ratio oriented so that values
/// above `slack` mean the bound was violated (gap and deviation bounds are
/// upper bounds, Gram floors are lower bounds and use the reciprocal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundVerdict {
    pub name: String,
    pub held: bool,
    pub max_ratio: f64,
    pub slack: f64,
}

fn verdict(name: &str, max_ratio: f64) -> BoundVerdict {
    BoundVerdict {
        name: name.to_string(),
        held: max_ratio <= CERT_SLACK,
        max_ratio,
        slack: CERT_SLACK,
    }
}

/// Everything [`compute_verdicts`] needs besides the rows and the spectral
/// report; all of it appears in the run summary, so verdicts can be
/// recomputed offline from the artifacts alone.
#[derive(Clone, Copy, Debug)]
pub struct CertInputs {
    pub alpha: f64,
    pub rho: f64,
    pub mode: FlowMode,
    /// Strong-convexity modulus of the loss (2 for squared error).
    pub nu: f64,
    /// Smoothness modulus of the loss (2 for squared error).
    pub mu: f64,
    /// Lipschitz bound of the network map on the bound features.
    pub lip_f: f64,
    /// Fraction r of the persistence radius used by narrow-regime bounds.
    pub radius_fraction: f64,
}

/// Evaluates every applicable closed-form bound against a recorded
/// trajectory. Only rows before the first exit event are judged (the
/// certificates hold inside the trust ball). Which bounds apply depends on
/// the integration mode, the regime, and ρ; when the curvature-floor
/// assumption fails or the initial gap is zero, nothing is certified.
pub fn compute_verdicts(
    rows: &[StepRow],
    spectral: &SpectralReport,
    inp: &CertInputs,
) -> Vec<BoundVerdict> {
    let mut out = Vec::new();
    let admissible: Vec<&StepRow> = rows.iter().take_while(|r| !r.exited).collect();
    let Some(first) = admissible.first() else {
        return out;
    };
    let delta0 = first.gap;
    let l0 = spectral.lambda0;
    let cert_ready = spectral.assumption_ok && l0 > 0.0 && delta0 > 0.0;

    match inp.mode {
        FlowMode::EulerFlow => {
            if spectral.regime == Regime::Overparameterized && inp.rho > 0.0 && cert_ready {
                let mut max_ratio = 0.0f64;
                for r in &admissible {
                    if let Ok(bound) =
                        diagnostics::rate_bound_over(r.t, inp.nu, l0, inp.rho, delta0)
                    {
                        if bound > 0.0 {
                            max_ratio = max_ratio.max(r.gap / bound);
                        }
                    }
                }
                out.push(verdict("gap-certificate-wide", max_ratio));
            }
            if spectral.regime == Regime::Underparameterized && inp.rho == 0.0 && cert_ready {
                let mut max_ratio = 0.0f64;
                for r in &admissible {
                    let bound = diagnostics::rate_bound_under(r.t, inp.nu, delta0);
                    if bound > 0.0 {
                        max_ratio = max_ratio.max(r.gap / bound);
                    }
                }
                out.push(verdict("gap-certificate-narrow", max_ratio));

                if let Ok(cap) = diagnostics::deviation_bound_under(
                    inp.mu,
                    inp.nu,
                    delta0,
                    inp.alpha,
                    inp.radius_fraction,
                    l0,
                ) {
                    if cap > 0.0 {
                        let worst = admissible
                            .iter()
                            .map(|r| r.dev_norm / cap)
                            .fold(0.0, f64::max);
                        out.push(verdict("deviation-cap-narrow", worst));
                    }
                }

                let (low, high) = diagnostics::trajectory_gram_floors(inp.radius_fraction, l0);
                for (name, floor) in [("gram-floor-low", low), ("gram-floor-high", high)] {
                    let worst = admissible
                        .iter()
                        .map(|r| {
                            if r.lambda_min_gram > 0.0 {
                                floor / r.lambda_min_gram
                            } else {
                                f64::INFINITY
                            }
                        })
                        .fold(0.0, f64::max);
                    out.push(verdict(name, worst));
                }
            }
        }
        FlowMode::DiscreteGn => {
            if spectral.regime == Regime::Overparameterized && cert_ready {
                if let Ok(q) = diagnostics::contraction_factor(
                    inp.nu,
                    inp.mu,
                    l0,
                    spectral.lambda_n,
                    inp.rho,
                    inp.lip_f,
                ) {
                    if q > 0.0 {
                        let mut max_ratio = 0.0f64;
                        for pair in admissible.windows(2) {
                            let (prev, next) = (pair[0], pair[1]);
                            if prev.gap > 1e-300 && next.gap >= 0.0 {
                                max_ratio = max_ratio.max(next.gap / (q * prev.gap));
                            }
                        }
                        out.push(verdict("step-contraction", max_ratio));
                    }
                }
            }
        }
    }
    out
}

/// Per-(α, ρ) entry of the summary. For a failed run only `alpha`, `rho`,
/// and `error` are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub alpha: f64,
    pub rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_recorded: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_fallbacks: Option<usize>,
    /// Scaling threshold the applicable convergence certificate demands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_alpha: Option<f64>,
    /// Recommended learning rate (discrete mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_eta: Option<f64>,
    /// Per-step contraction factor q (discrete mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<BoundVerdict>,
}

/// Consolidated, human-readable record of one sweep. Everything needed to
/// recompute the verdicts from the CSV artifacts is here.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    /// Verbatim text of the config that produced this summary.
    pub config_echo: String,
    pub nu: f64,
    pub mu: f64,
    /// Lipschitz bound of the network map on the bound features.
    pub lip_f: f64,
    /// Configured estimate of the best attainable loss (gap = loss − floor).
    pub loss_floor: f64,
    pub radius_fraction: f64,
    /// Gram-spectrum floors (1−r)²λ₀² and 4(1−r)²λ₀² within the trust ball.
    pub gram_floor_low: f64,
    pub gram_floor_high: f64,
    /// Trust-ball radius the runs actually used (config override or the
    /// spectral report's r₀; `inf` disables the monitor).
    pub exit_radius_used: f64,
    pub runs: Vec<TrajectorySummary>,
    pub spectral: SpectralReport,
}

/// Problem state shared by every run of a sweep.
pub struct Prepared {
    pub dataset: Dataset,
    pub network: Network,
    pub loss: QuadraticLoss,
    pub spectral: SpectralReport,
    pub lip_f: f64,
    pub sigma2: f64,
}

/// Loads the dataset, initializes and binds the network, and computes the
/// initialization-time spectral report.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dataset = match (&cfg.dataset.csv, &cfg.dataset.synthetic) {
        (Some(csv), None) => Dataset::load_csv(
            &csv.path,
            &csv.target,
            csv.n_subset,
            csv.subsample_seed,
        )?,
        (None, Some(synth)) => synth_dataset(synth)?,
        _ => {
            return Err(Error::Config(
                "exactly one of dataset.csv / dataset.synthetic is required".into(),
            ))
        }
    };
    let mut network = Network::init(
        cfg.network.init_seed,
        cfg.network.m,
        dataset.d(),
        ActivationSpec::from_kind(cfg.network.activation),
    )?;
    network.bind(dataset.x())?;
    let loss = QuadraticLoss::new(dataset.y().clone())?;
    let sigma2 = network.activation().sigma2();
    let l_estimate = cfg
        .diagnostics
        .l_override
        .unwrap_or_else(|| diagnostics::jacobian_lipschitz_estimate(sigma2, dataset.x()));
    let spectral = diagnostics::spectral_report(&network.jacobian()?, l_estimate)?;
    let lip_f = network.lipschitz_bound()?;
    Ok(Prepared {
        dataset,
        network,
        loss,
        spectral,
        lip_f,
        sigma2,
    })
}

/// The trust-ball radius a sweep uses: the config override if present,
/// otherwise the persistence radius r₀ (monitor disabled when r₀ degenerates).
pub fn resolve_exit_radius(cfg: &ExperimentConfig, spectral: &SpectralReport) -> f64 {
    if let Some(r) = cfg.flow.exit_radius {
        return r;
    }
    if spectral.r0 > 0.0 {
        spectral.r0 // may be +inf when L = 0: monitor disabled
    } else {
        log::warn!(
            "persistence radius r0 = {} is degenerate; disabling the exit monitor",
            spectral.r0
        );
        f64::INFINITY
    }
}

/// Output of [`execute`]: the summary plus where it was written.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub summary_text: String,
    pub summary_path: PathBuf,
    pub output_dir: PathBuf,
}

fn certificate_recommendations(
    prep: &Prepared,
    fc: &FlowConfig,
    record: &TrajectoryRecord,
    radius_fraction: f64,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let (nu, mu) = (prep.loss.nu(), prep.loss.mu());
    let sp = &prep.spectral;
    let delta0 = record.initial_gap();
    if !delta0.is_finite() {
        return (None, None, None);
    }
    match fc.mode {
        FlowMode::EulerFlow => match sp.regime {
            Regime::Overparameterized if fc.rho > 0.0 => (
                dynamics::recommended_alpha_over(
                    sp.l_estimate,
                    mu,
                    nu,
                    delta0,
                    sp.lambda0,
                    sp.lambda_n,
                    fc.rho,
                )
                .ok(),
                None,
                None,
            ),
            Regime::Underparameterized if fc.rho == 0.0 => (
                dynamics::recommended_alpha_under(
                    sp.l_estimate,
                    mu,
                    nu,
                    delta0,
                    sp.lambda0,
                    radius_fraction,
                )
                .ok(),
                None,
                None,
            ),
            _ => (None, None, None),
        },
        FlowMode::DiscreteGn => {
            let loss0 = record.rows.first().map_or(f64::NAN, |r| r.loss);
            let lip_g = 2.0 * loss0.max(0.0).sqrt();
            let alpha_rec = dynamics::recommended_alpha_disc(
                sp.l_estimate,
                mu,
                nu,
                delta0,
                sp.lambda0,
                sp.lambda_n,
                fc.rho,
                prep.network.m(),
                prep.dataset.n(),
                prep.sigma2,
                prep.lip_f,
                lip_g,
            )
            .ok();
            let eta_rec = dynamics::recommended_eta(
                sp.lambda0,
                sp.lambda_n,
                fc.rho,
                fc.alpha,
                prep.network.m(),
                prep.lip_f,
            )
            .ok();
            let q = diagnostics::contraction_factor(
                nu,
                mu,
                sp.lambda0,
                sp.lambda_n,
                fc.rho,
                prep.lip_f,
            )
            .ok();
            (alpha_rec, eta_rec, q)
        }
    }
}

fn run_one(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    fc: &FlowConfig,
    out_dir: &Path,
) -> TrajectorySummary {
    let failed = |msg: String| TrajectorySummary {
        alpha: fc.alpha,
        rho: fc.rho,
        artifact: None,
        error: Some(msg),
        steps_recorded: None,
        initial_gap: None,
        final_loss: None,
        final_gap: None,
        exit_step: None,
        exit_time: None,
        fitted_rate: None,
        solver_fallbacks: None,
        recommended_alpha: None,
        recommended_eta: None,
        contraction_q: None,
        verdicts: Vec::new(),
    };

    let mut net = prep.network.clone();
    let record = match run_trajectory(&mut net, &prep.loss, fc, cfg.loss.floor) {
        Ok(rec) => rec,
        Err(e) => return failed(e.to_string()),
    };
    let csv_text = match time_series_to_string(&record.rows) {
        Ok(text) => text,
        Err(e) => return failed(e.to_string()),
    };
    let name = artifact_name(fc.alpha, fc.rho);
    if let Err(e) = std::fs::write(out_dir.join(&name), &csv_text) {
        return failed(format!("cannot write artifact {name:?}: {e}"));
    }

    let inputs = CertInputs {
        alpha: fc.alpha,
        rho: fc.rho,
        mode: fc.mode,
        nu: prep.loss.nu(),
        mu: prep.loss.mu(),
        lip_f: prep.lip_f,
        radius_fraction: cfg.diagnostics.radius_fraction,
    };
    let verdicts = compute_verdicts(&record.rows, &prep.spectral, &inputs);
    let (recommended_alpha, recommended_eta, contraction_q) =
        certificate_recommendations(prep, fc, &record, cfg.diagnostics.radius_fraction);
    let last = record.rows.last();
    TrajectorySummary {
        alpha: fc.alpha,
        rho: fc.rho,
        artifact: Some(name),
        error: None,
        steps_recorded: Some(record.rows.len()),
        initial_gap: Some(record.initial_gap()),
        final_loss: last.map(|r| r.loss),
        final_gap: last.map(|r| r.gap),
        exit_step: record.exit_step,
        exit_time: record.exit_time,
        fitted_rate: record.fitted_rate(cfg.diagnostics.fit_window).ok(),
        solver_fallbacks: Some(record.solver_fallbacks),
        recommended_alpha,
        recommended_eta,
        contraction_q,
        verdicts,
    }
}

/// Runs the whole sweep described by `cfg` (paths already resolved) and
/// writes all artifacts plus `summary.toml` into the output directory.
/// `config_text` is echoed verbatim into the summary.
pub fn execute(cfg: &ExperimentConfig, config_text: &str) -> Result<RunOutcome> {
    let prep = prepare(cfg)?;
    let exit_radius = resolve_exit_radius(cfg, &prep.spectral);
    std::fs::create_dir_all(&cfg.output_dir)?;

    let mut runs = Vec::with_capacity(cfg.flow.alpha.len() * cfg.flow.rho.len());
    for &alpha in &cfg.flow.alpha {
        for &rho in &cfg.flow.rho {
            let fc = FlowConfig {
                alpha,
                rho,
                mode: cfg.flow.mode,
                step_size: cfg.flow.step_size,
                horizon: cfg.flow.horizon,
                exit_radius,
                exit_policy: cfg.flow.exit_policy,
            };
            runs.push(run_one(&prep, cfg, &fc, &cfg.output_dir));
        }
    }

    let (gram_floor_low, gram_floor_high) = diagnostics::trajectory_gram_floors(
        cfg.diagnostics.radius_fraction,
        prep.spectral.lambda0,
    );
    let summary = RunSummary {
        config_echo: config_text.to_string(),
        nu: prep.loss.nu(),
        mu: prep.loss.mu(),
        lip_f: prep.lip_f,
        loss_floor: cfg.loss.floor,
        radius_fraction: cfg.diagnostics.radius_fraction,
        gram_floor_low,
        gram_floor_high,
        exit_radius_used: exit_radius,
        runs,
        spectral: prep.spectral,
    };
    let summary_text = toml::to_string_pretty(&summary)
        .map_err(|e| Error::Data(format!("cannot serialize summary: {e}")))?;
    let summary_path = cfg.output_dir.join("summary.toml");
    std::fs::write(&summary_path, &summary_text)?;
    Ok(RunOutcome {
        summary,
        summary_text,
        summary_path,
        output_dir: cfg.output_dir.clone(),
    })
}

/// Payload of the `spectral` subcommand: the report plus the derived
/// trust-ball quantities, without running any trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralCommandOutput {
    pub lip_f: f64,
    pub gram_floor_low: f64,
    pub gram_floor_high: f64,
    pub exit_radius_default: f64,
    pub spectral: SpectralReport,
}

pub fn spectral_summary(cfg: &ExperimentConfig) -> Result<SpectralCommandOutput> {
    let prep = prepare(cfg)?;
    let (gram_floor_low, gram_floor_high) = diagnostics::trajectory_gram_floors(
        cfg.diagnostics.radius_fraction,
        prep.spectral.lambda0,
    );
    Ok(SpectralCommandOutput {
        lip_f: prep.lip_f,
        gram_floor_low,
        gram_floor_high,
        exit_radius_default: resolve_exit_radius(cfg, &prep.spectral),
        spectral: prep.spectral,
    })
}

/// Kernel matrix K₀ = D₀D₀ᵀ of the prepared problem; exposed for offline
/// analysis of conditioning sweeps.
pub fn initial_kernel(prep: &Prepared) -> Result<DMatrix<f64>> {
    Ok(crate::linalg::kernel(&prep.network.jacobian()?))
}
