//! Self-contained numerical invariant suites behind the `check` subcommand.
//!
//! Each suite stresses one identity the rest of the pipeline leans on:
//!
//! * `smw-equivalence` — the dual (n×n) damped solve agrees with the direct
//!   (p×p) factorization in both shape regimes;
//! * `eigen-map` — the output-space operator D H_ρ⁻¹ Dᵀ acts on kernel
//!   eigenvectors as γ ↦ γ/((1−ρ)γ+ρ);
//! * `projection-laws` — the range projection is idempotent, self-adjoint,
//!   non-expansive, and fixes the range;
//! * `jacobian-fd` — analytic Jacobians match central finite differences;
//! * `euler-defect` — halving the Euler step roughly halves the terminal
//!   integration error (first-order convergence).
//!
//! Suites are deterministic (fixed seeds) and graded `quick` or `full` (more
//! cases). [`Sabotage::TransposeJacobian`] feeds the Jacobian suite a
//! block-transposed matrix; it must fail, which keeps the suite itself
//! honest.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

use crate::activation::ActivationSpec;
use crate::dynamics::{gn_flow_step, ExitPolicy, FlowConfig, FlowMode};
use crate::linalg;
use crate::loss::QuadraticLoss;
use crate::network::Network;

/// How many cases each suite runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckLevel {
    /// Fast smoke pass.
    Quick,
    /// Acceptance-scale case counts.
    Full,
}

/// Deliberate defect injection, used to verify the suites can actually fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sabotage {
    None,
    /// Feed the Jacobian suite a block-transposed analytic Jacobian.
    TransposeJacobian,
}

/// Result of one suite.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst-case measurement, human-readable.
    pub detail: String,
    pub millis: u128,
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

pub fn run_checks(level: CheckLevel) -> Vec<CheckOutcome> {
    run_checks_with(level, Sabotage::None)
}

pub fn run_checks_with(level: CheckLevel, sabotage: Sabotage) -> Vec<CheckOutcome> {
    vec![
        smw_equivalence(level),
        eigen_map(level),
        projection_laws(level),
        jacobian_fd(level, sabotage),
        euler_defect(level),
    ]
}

fn rng_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn rng_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn finish(
    name: &'static str,
    start: Instant,
    cases: usize,
    worst: f64,
    tol: f64,
    error: Option<String>,
) -> CheckOutcome {
    let (passed, detail) = match error {
        Some(msg) => (false, msg),
        None => (
            worst <= tol,
            format!("worst {worst:.3e}, tolerance {tol:.0e}"),
        ),
    };
    CheckOutcome {
        name,
        passed,
        cases,
        detail,
        millis: start.elapsed().as_millis(),
    }
}

/// Direct p×p vs dual n×n damped solves on random systems in both regimes.
fn smw_equivalence(level: CheckLevel) -> CheckOutcome {
    let start = Instant::now();
    let cases = match level {
        CheckLevel::Quick => 12,
        CheckLevel::Full => 60,
    };
    let tol = 1e-8;
    let rhos = [0.1, 0.5, 0.9];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_c4ec);
    let mut worst = 0.0f64;
    for case in 0..cases {
        // alternate wide (p > n) and narrow (p < n) shapes
        let (n, p) = if case % 2 == 0 { (6, 15) } else { (15, 6) };
        let rho = rhos[case % rhos.len()];
        let jac = rng_matrix(&mut rng, n, p);
        let rhs = rng_vector(&mut rng, p);
        let direct = match linalg::precond_solve(&jac, rho, &rhs) {
            Ok(v) => v,
            Err(e) => return finish("smw-equivalence", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let dual = match linalg::precond_solve_smw(&jac, rho, &rhs) {
            Ok(v) => v,
            Err(e) => return finish("smw-equivalence", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let rel = (&direct - &dual).norm() / direct.norm().max(1e-300);
        worst = worst.max(rel);
    }
    finish("smw-equivalence", start, cases, worst, tol, None)
}

/// D H_ρ⁻¹ Dᵀ must scale each kernel eigenvector by γ/((1−ρ)γ+ρ).
fn eigen_map(level: CheckLevel) -> CheckOutcome {
    let start = Instant::now();
    let cases = match level {
        CheckLevel::Quick => 6,
        CheckLevel::Full => 24,
    };
    let tol = 1e-8;
    let rhos = [0.2, 0.7];
    let mut rng = ChaCha8Rng::seed_from_u64(0xe16e_2a90);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (n, p) = if case % 2 == 0 { (5, 12) } else { (12, 5) };
        let rho = rhos[case % rhos.len()];
        let jac = rng_matrix(&mut rng, n, p);
        let eig = linalg::kernel(&jac).symmetric_eigen();
        for i in 0..n {
            let gamma = eig.eigenvalues[i].max(0.0);
            let u: DVector<f64> = eig.eigenvectors.column(i).into();
            let mapped = match linalg::output_operator_apply(&jac, rho, &u) {
                Ok(v) => v,
                Err(e) => return finish("eigen-map", start, cases, 1.0, tol, Some(e.to_string())),
            };
            let expected = &u * (gamma / ((1.0 - rho) * gamma + rho));
            let rel = (&mapped - &expected).norm() / expected.norm().max(1.0);
            worst = worst.max(rel);
        }
    }
    finish("eigen-map", start, cases, worst, tol, None)
}

/// Orthogonal-projection laws for the range projection of a full-column-rank
/// Jacobian: idempotent, self-adjoint, non-expansive, fixes the range.
fn projection_laws(level: CheckLevel) -> CheckOutcome {
    let start = Instant::now();
    let cases = match level {
        CheckLevel::Quick => 12,
        CheckLevel::Full => 50,
    };
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a04_ec7d);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, p) = (14, 5);
        let jac = rng_matrix(&mut rng, n, p);
        let v = rng_vector(&mut rng, n);
        let u = rng_vector(&mut rng, n);
        let z = rng_vector(&mut rng, p);
        let pv = match linalg::projection_apply(&jac, &v) {
            Ok(w) => w,
            Err(e) => return finish("projection-laws", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let ppv = match linalg::projection_apply(&jac, &pv) {
            Ok(w) => w,
            Err(e) => return finish("projection-laws", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let pu = match linalg::projection_apply(&jac, &u) {
            Ok(w) => w,
            Err(e) => return finish("projection-laws", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let scale = 1.0 + v.norm() + u.norm();
        worst = worst.max((&ppv - &pv).norm() / scale); // idempotence
        worst = worst.max((pu.dot(&v) - u.dot(&pv)).abs() / scale); // self-adjoint
        worst = worst.max((pv.norm() - v.norm()).max(0.0) / scale); // non-expansive
        let in_range = &jac * z;
        let fixed = match linalg::projection_apply(&jac, &in_range) {
            Ok(w) => w,
            Err(e) => return finish("projection-laws", start, cases, 1.0, tol, Some(e.to_string())),
        };
        worst = worst.max((&fixed - &in_range).norm() / (1.0 + in_range.norm()));
    }
    finish("projection-laws", start, cases, worst, tol, None)
}

/// Swaps the (unit, coordinate) block layout inside each Jacobian row:
/// column i·d + k moves to column k·m + i. Dimension-preserving and wrong
/// whenever m, d >= 2, which is exactly what the sabotage run needs.
fn block_transpose(jac: &DMatrix<f64>, m: usize, d: usize) -> DMatrix<f64> {
    let mut out = jac.clone();
    for row in 0..jac.nrows() {
        for i in 0..m {
            for k in 0..d {
                out[(row, k * m + i)] = jac[(row, i * d + k)];
            }
        }
    }
    out
}

/// Analytic Jacobians vs central finite differences on small tanh networks.
fn jacobian_fd(level: CheckLevel, sabotage: Sabotage) -> CheckOutcome {
    let start = Instant::now();
    let cases = match level {
        CheckLevel::Quick => 6,
        CheckLevel::Full => 20,
    };
    let tol = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd0c);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (m, d, n) = [(2usize, 2usize, 4usize), (3, 2, 5), (4, 3, 6)][case % 3];
        let net = match Network::init(rng.random(), m, d, ActivationSpec::tanh()) {
            Ok(net) => net,
            Err(e) => return finish("jacobian-fd", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let x = rng_matrix(&mut rng, n, d);
        let analytic = match net.jacobian_on(&x) {
            Ok(jac) => jac,
            Err(e) => return finish("jacobian-fd", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let analytic = match sabotage {
            Sabotage::None => analytic,
            Sabotage::TransposeJacobian => block_transpose(&analytic, m, d),
        };
        let fd = match net.fd_jacobian_on(&x, 1e-6) {
            Ok(jac) => jac,
            Err(e) => return finish("jacobian-fd", start, cases, 1.0, tol, Some(e.to_string())),
        };
        let rel = (&analytic - &fd).norm() / fd.norm().max(1e-300);
        worst = worst.max(rel);
    }
    finish("jacobian-fd", start, cases, worst, tol, None)
}

/// Terminal Euler error must roughly halve when the step does: the ratio
/// ‖w_Δt − w_ref‖ / ‖w_{Δt/2} − w_ref‖ of a first-order method sits near 2.
fn euler_defect(level: CheckLevel) -> CheckOutcome {
    let start = Instant::now();
    let cases = match level {
        CheckLevel::Quick => 2,
        CheckLevel::Full => 5,
    };
    let (lo, hi) = (1.5, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0xed1);
    let mut worst_low = f64::INFINITY;
    let mut worst_high = 0.0f64;
    for _ in 0..cases {
        let (m, d, n) = (3usize, 2usize, 4usize);
        let seed: u64 = rng.random();
        let x = rng_matrix(&mut rng, n, d);
        let y = rng_vector(&mut rng, n);
        let integrate = |dt: f64, steps: usize| -> crate::error::Result<DVector<f64>> {
            let mut net = Network::init(seed, m, d, ActivationSpec::tanh())?;
            net.bind(&x)?;
            let loss = QuadraticLoss::new(y.clone())?;
            let cfg = FlowConfig {
                alpha: 2.0,
                rho: 0.3,
                mode: FlowMode::EulerFlow,
                step_size: dt,
                horizon: steps,
                exit_radius: f64::INFINITY,
                exit_policy: ExitPolicy::FlagAndContinue,
            };
            for _ in 0..steps {
                gn_flow_step(&mut net, &cfg, &loss)?;
            }
            Ok(net.weights().clone())
        };
        let dt = 0.05;
        let result = (|| -> crate::error::Result<f64> {
            let w_ref = integrate(dt / 16.0, 128)?;
            let e1 = (integrate(dt, 8)? - &w_ref).norm();
            let e2 = (integrate(dt / 2.0, 16)? - &w_ref).norm();
            Ok(e1 / e2.max(1e-300))
        })();
        match result {
            Ok(ratio) => {
                worst_low = worst_low.min(ratio);
                worst_high = worst_high.max(ratio);
            }
            Err(e) => {
                return finish("euler-defect", start, cases, 1.0, 0.0, Some(e.to_string()))
            }
        }
    }
    let passed = worst_low >= lo && worst_high <= hi;
    CheckOutcome {
        name: "euler-defect",
        passed,
        cases,
        detail: format!("halving ratios in [{worst_low:.3}, {worst_high:.3}], expected [{lo}, {hi}]"),
        millis: start.elapsed().as_millis(),
    }
}
