//! The training dynamics: preconditioned flow steps, the discrete update,
//! trajectory execution with exit tracking, and the closed-form
//! recommendations for the scaling factor and learning rate.
//!
//! Both steppers share one algebraic kernel. With D the Jacobian of the
//! centered output f at the current weights and ∇g evaluated at ψ = αf(w),
//! the descent direction is −H_ρ⁻¹ Dᵀ ∇g(αf(w)). The continuous-time flow
//! ẇ = −(1/α) H_ρ⁻¹ Dᵀ ∇g is integrated by explicit Euler with step Δt
//! (so the weight increment is scaled by Δt/α), while the discrete update
//! applies the same direction scaled by a learning rate η. At ρ = 1 the
//! direction reduces to the plain gradient direction −Dᵀ∇g: one flow step
//! then equals a Euclidean gradient step on w ↦ g(αf(w)) shrunk by exactly
//! α².

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::FitWindow;
use crate::error::{Error, Result};
use crate::linalg::{self, DampedPreconditioner, SINGULAR_REL_TOL};
use crate::loss::QuadraticLoss;
use crate::network::Network;

/// Gradient norms below this are treated as exactly stationary: the step is
/// the zero vector and no solve is attempted.
pub const STATIONARY_TOL: f64 = 1e-14;

/// How the trajectory advances per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    /// Explicit Euler on the continuous flow; `step_size` is Δt and the
    /// recorded time is t = k·Δt.
    EulerFlow,
    /// Discrete update with learning rate `step_size` = η; the recorded time
    /// is the step index.
    DiscreteGn,
}

/// What to do once the trajectory leaves the trust ball (or the
/// preconditioner goes singular).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitPolicy {
    /// Stop recording at the first exit event.
    Halt,
    /// Keep integrating with the exit flag set (singular solves switch to a
    /// floored factorization), so post-exit behavior is observable.
    FlagAndContinue,
}

/// Full specification of one trajectory.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Output scaling α > 0.
    pub alpha: f64,
    /// Damping ρ ∈ [0,1]; 0 = undamped Gauss-Newton, 1 = gradient direction.
    pub rho: f64,
    pub mode: FlowMode,
    /// Δt for [`FlowMode::EulerFlow`], η for [`FlowMode::DiscreteGn`].
    pub step_size: f64,
    /// Number of steps to attempt (the record holds `horizon + 1` states
    /// unless halted early).
    pub horizon: usize,
    /// Deviation radius ‖w − w₀‖₂ at which the exit flag is raised.
    pub exit_radius: f64,
    pub exit_policy: ExitPolicy,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !crate::error::is_positive(self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "scaling factor must be positive and finite, got {}",
                self.alpha
            )));
        }
        if !self.rho.is_finite() || !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !crate::error::is_positive(self.step_size) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive and finite, got {}",
                self.step_size
            )));
        }
        // an infinite radius is allowed: the exit monitor never triggers
        if self.exit_radius.is_nan() || self.exit_radius <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "exit radius must be positive, got {}",
                self.exit_radius
            )));
        }
        if self.mode == FlowMode::DiscreteGn && self.rho == 0.0 {
            return Err(Error::InvalidArgument(
                "the discrete update needs damping in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Recorded time of step k: k·Δt for the Euler flow, k for the discrete
    /// update.
    pub fn time_at(&self, step: usize) -> f64 {
        match self.mode {
            FlowMode::EulerFlow => step as f64 * self.step_size,
            FlowMode::DiscreteGn => step as f64,
        }
    }
}

/// Descent direction −H_ρ⁻¹ Dᵀ ∇g(αf(w)) at the network's current weights,
/// plus whether the solver had to fall back to a floored factorization.
pub struct StepDirection {
    pub direction: DVector<f64>,
    pub used_fallback: bool,
}

/// Computes the shared descent direction. Returns the zero vector without
/// solving when ‖∇g‖ < [`STATIONARY_TOL`]. Solver routing: ρ = 0 direct,
/// ρ = 1 identity shortcut, otherwise the dual n×n system when p > n and the
/// direct p×p factorization when p ≤ n.
pub fn gn_step_direction(
    net: &Network,
    loss: &QuadraticLoss,
    alpha: f64,
    rho: f64,
) -> Result<StepDirection> {
    let psi = net.centered_output()? * alpha;
    let grad = loss.grad(&psi)?;
    if grad.norm() < STATIONARY_TOL {
        return Ok(StepDirection {
            direction: DVector::zeros(net.p()),
            used_fallback: false,
        });
    }
    let jac = net.jacobian()?;
    direction_from_parts(&jac, &grad, rho)
}

fn direction_from_parts(
    jac: &DMatrix<f64>,
    grad: &DVector<f64>,
    rho: f64,
) -> Result<StepDirection> {
    let pre = DampedPreconditioner::auto(jac, rho)?;
    let direction = -pre.solve(&jac.tr_mul(grad))?;
    Ok(StepDirection {
        direction,
        used_fallback: pre.used_fallback(),
    })
}

/// One explicit-Euler step of the continuous flow:
/// w ← w − (Δt/α) H_ρ⁻¹ Dᵀ ∇g(αf(w)). Requires `mode = euler-flow`.
pub fn gn_flow_step(net: &mut Network, cfg: &FlowConfig, loss: &QuadraticLoss) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != FlowMode::EulerFlow {
        return Err(Error::InvalidArgument(
            "gn_flow_step needs mode = euler-flow".into(),
        ));
    }
    let sd = gn_step_direction(net, loss, cfg.alpha, cfg.rho)?;
    let w = net.weights() + sd.direction * (cfg.step_size / cfg.alpha);
    net.set_weights(w)
}

/// One discrete update: w ← w − η H_ρ⁻¹ Dᵀ ∇g(αf(w)). Requires
/// `mode = discrete-gn` and ρ ∈ (0,1]. Same algebraic kernel as the flow
/// step with η in place of Δt/α; kept distinct so the learning-rate contract
/// stays explicit.
pub fn gn_discrete_step(net: &mut Network, cfg: &FlowConfig, loss: &QuadraticLoss) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != FlowMode::DiscreteGn {
        return Err(Error::InvalidArgument(
            "gn_discrete_step needs mode = discrete-gn".into(),
        ));
    }
    let sd = gn_step_direction(net, loss, cfg.alpha, cfg.rho)?;
    let w = net.weights() + sd.direction * cfg.step_size;
    net.set_weights(w)
}

/// One recorded state of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    /// k·Δt (Euler flow) or k (discrete update).
    pub t: f64,
    /// g(αf(w)).
    pub loss: f64,
    /// loss minus the configured in-class optimum estimate.
    pub gap: f64,
    /// ‖w − w₀‖₂.
    pub dev_norm: f64,
    /// Norm of ∇g projected onto the numerical range of the Jacobian.
    pub rgrad_norm: f64,
    /// λ_min(DᵀD); structurally 0 when p > n.
    pub lambda_min_gram: f64,
    /// λ_max(DᵀD) = λ_max(DDᵀ).
    pub lambda_max_gram: f64,
    /// λ_min(DDᵀ); structurally 0 when p < n.
    pub lambda_min_kernel: f64,
    /// Exit flag; monotone along the record.
    pub exited: bool,
}

/// A fully recorded trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub rows: Vec<StepRow>,
    /// First step index at which the exit flag was raised.
    pub exit_step: Option<usize>,
    /// Recorded time of that step.
    pub exit_time: Option<f64>,
    /// Number of steps that needed the floored solver fallback.
    pub solver_fallbacks: usize,
}

impl TrajectoryRecord {
    /// Gap at the initial state.
    pub fn initial_gap(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.gap)
    }

    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Empirical decay exponent of the gap over a fractional window of the
    /// recorded steps.
    pub fn fitted_rate(&self, window: FitWindow) -> Result<f64> {
        let times: Vec<f64> = self.rows.iter().map(|r| r.t).collect();
        let gaps: Vec<f64> = self.rows.iter().map(|r| r.gap).collect();
        crate::diagnostics::fit_decay_rate(&times, &gaps, window)
    }
}

struct Snapshot {
    lambda_min_gram: f64,
    lambda_max_gram: f64,
    lambda_min_kernel: f64,
    rgrad_norm: f64,
}

/// One eigendecomposition of the smaller of DᵀD / DDᵀ yields all recorded
/// spectral columns plus the projected gradient norm; the larger matrix's
/// extra eigenvalues are structural zeros.
fn spectral_snapshot(jac: &DMatrix<f64>, grad: &DVector<f64>) -> Snapshot {
    let n = jac.nrows();
    let p = jac.ncols();
    if p <= n {
        let eig = linalg::gram(jac).symmetric_eigen();
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = SINGULAR_REL_TOL * hi.max(0.0);
        let proj = jac.tr_mul(grad);
        let mut acc = 0.0;
        for i in 0..p {
            if eig.eigenvalues[i] > tol {
                let c = eig.eigenvectors.column(i).dot(&proj);
                acc += c * c / eig.eigenvalues[i];
            }
        }
        Snapshot {
            lambda_min_gram: lo,
            lambda_max_gram: hi,
            lambda_min_kernel: if p < n { 0.0 } else { lo },
            rgrad_norm: acc.sqrt(),
        }
    } else {
        let eig = linalg::kernel(jac).symmetric_eigen();
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = SINGULAR_REL_TOL * hi.max(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            if eig.eigenvalues[i] > tol {
                let c = eig.eigenvectors.column(i).dot(grad);
                acc += c * c;
            }
        }
        Snapshot {
            lambda_min_gram: 0.0,
            lambda_max_gram: hi,
            lambda_min_kernel: lo,
            rgrad_norm: acc.sqrt(),
        }
    }
}

/// Runs a full trajectory from the network's current weights, recording every
/// state. `loss_floor` is the configured estimate of the in-class optimum
/// used for the gap column (0 when the targets are reachable).
///
/// Exit semantics: the flag is raised at the first state whose deviation
/// reaches `exit_radius`, or retroactively at state k when the solve for the
/// step k → k+1 hits a singular preconditioner (the singularity is a property
/// of state k). Under [`ExitPolicy::Halt`] recording stops at the flagged
/// state; under [`ExitPolicy::FlagAndContinue`] singular solves are retried
/// with the floored factorization and the run proceeds, so post-exit behavior
/// stays observable. A non-finite weight update terminates the record under
/// either policy. The network is left at the last recorded state.
pub fn run_trajectory(
    net: &mut Network,
    loss: &QuadraticLoss,
    cfg: &FlowConfig,
    loss_floor: f64,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let mut rows: Vec<StepRow> = Vec::with_capacity(cfg.horizon + 1);
    let mut exit_step: Option<usize> = None;
    let mut solver_fallbacks = 0usize;
    let mut flagged = false;

    let scale = match cfg.mode {
        FlowMode::EulerFlow => cfg.step_size / cfg.alpha,
        FlowMode::DiscreteGn => cfg.step_size,
    };

    for k in 0..=cfg.horizon {
        let psi = net.centered_output()? * cfg.alpha;
        let loss_val = loss.value(&psi)?;
        let grad = loss.grad(&psi)?;
        let jac = net.jacobian()?;
        let snap = spectral_snapshot(&jac, &grad);
        let dev = net.deviation();
        if !flagged && dev >= cfg.exit_radius {
            flagged = true;
            exit_step.get_or_insert(k);
        }
        rows.push(StepRow {
            step: k,
            t: cfg.time_at(k),
            loss: loss_val,
            gap: loss_val - loss_floor,
            dev_norm: dev,
            rgrad_norm: snap.rgrad_norm,
            lambda_min_gram: snap.lambda_min_gram,
            lambda_max_gram: snap.lambda_max_gram,
            lambda_min_kernel: snap.lambda_min_kernel,
            exited: flagged,
        });

        if flagged && cfg.exit_policy == ExitPolicy::Halt {
            break;
        }
        if k == cfg.horizon {
            break;
        }

        let attempt = if grad.norm() < STATIONARY_TOL {
            Ok(StepDirection {
                direction: DVector::zeros(net.p()),
                used_fallback: false,
            })
        } else {
            direction_from_parts(&jac, &grad, cfg.rho)
        };

        let sd = match attempt {
            Ok(sd) => sd,
            Err(Error::SingularPreconditioner { .. }) => {
                flagged = true;
                exit_step.get_or_insert(k);
                if let Some(last) = rows.last_mut() {
                    last.exited = true;
                }
                if cfg.exit_policy == ExitPolicy::Halt {
                    break;
                }
                let pre = DampedPreconditioner::floored(&jac, cfg.rho);
                StepDirection {
                    direction: -pre.solve(&jac.tr_mul(&grad))?,
                    used_fallback: true,
                }
            }
            Err(e) => return Err(e),
        };
        if sd.used_fallback {
            solver_fallbacks += 1;
        }

        let w_new = net.weights() + sd.direction * scale;
        if net.set_weights(w_new).is_err() {
            // the update produced non-finite weights: record the divergence
            // at the current state and stop
            exit_step.get_or_insert(k);
            if let Some(last) = rows.last_mut() {
                last.exited = true;
            }
            break;
        }
    }

    Ok(TrajectoryRecord {
        exit_time: exit_step.map(|k| cfg.time_at(k)),
        rows,
        exit_step,
        solver_fallbacks,
    })
}

fn require_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !crate::error::is_positive(*v) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

/// Learning rate for the discrete damped update:
/// η = (1/(α√m)) · (λ₀²/λₙ²) · (1/Lip_f²) · ((1−ρ)λₙ²+ρ)² / ((1−ρ)λ₀²+ρ).
/// Needs ρ ∈ (0,1] and positive spectral inputs.
pub fn recommended_eta(
    lambda0: f64,
    lambda_n: f64,
    rho: f64,
    alpha: f64,
    m: usize,
    lip_f: f64,
) -> Result<f64> {
    if !crate::error::in_half_open_unit(rho) {
        return Err(Error::InvalidArgument(format!(
            "learning-rate recommendation needs damping in (0, 1], got {rho}"
        )));
    }
    require_positive(&[
        ("lambda0", lambda0),
        ("lambda_n", lambda_n),
        ("alpha", alpha),
        ("lip_f", lip_f),
    ])?;
    if m == 0 {
        return Err(Error::InvalidArgument("width m must be at least 1".into()));
    }
    let l02 = lambda0 * lambda0;
    let ln2 = lambda_n * lambda_n;
    let num = (1.0 - rho) * ln2 + rho;
    let den = (1.0 - rho) * l02 + rho;
    Ok((1.0 / (alpha * (m as f64).sqrt())) * (l02 / ln2) * (1.0 / (lip_f * lip_f)) * num * num
        / den)
}

/// Scaling threshold for the continuous damped flow in the wide regime:
/// α ≥ (Lμ√(2Δ₀)/ν^{3/2}) · (λₙ/λ₀³) · ((1−ρ)λ₀²+ρ) / ((1−ρ)λₙ²+ρ).
pub fn recommended_alpha_over(
    l: f64,
    mu: f64,
    nu: f64,
    delta0: f64,
    lambda0: f64,
    lambda_n: f64,
    rho: f64,
) -> Result<f64> {
    if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in [0, 1], got {rho}"
        )));
    }
    require_positive(&[
        ("l", l),
        ("mu", mu),
        ("nu", nu),
        ("lambda0", lambda0),
        ("lambda_n", lambda_n),
    ])?;
    if !crate::error::is_nonnegative(delta0) {
        return Err(Error::InvalidArgument(format!(
            "initial gap must be nonnegative, got {delta0}"
        )));
    }
    let l02 = lambda0 * lambda0;
    let ln2 = lambda_n * lambda_n;
    let ratio = ((1.0 - rho) * l02 + rho) / ((1.0 - rho) * ln2 + rho);
    Ok((l * mu * (2.0 * delta0).sqrt() / nu.powf(1.5)) * (lambda_n / lambda0.powi(3)) * ratio)
}

/// Scaling threshold for the discrete damped update: the larger of the
/// width-normalized flow threshold and the second, loss-geometry term
/// σ₂√n·Lip_g / (μ·Lip_f²·√m).
#[allow(clippy::too_many_arguments)]
pub fn recommended_alpha_disc(
    l: f64,
    mu: f64,
    nu: f64,
    delta0: f64,
    lambda0: f64,
    lambda_n: f64,
    rho: f64,
    m: usize,
    n: usize,
    sigma2: f64,
    lip_f: f64,
    lip_g: f64,
) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "width m and sample count n must be at least 1".into(),
        ));
    }
    require_positive(&[("lip_f", lip_f), ("lip_g", lip_g), ("sigma2", sigma2)])?;
    let sqrt_m = (m as f64).sqrt();
    let first = recommended_alpha_over(l, mu, nu, delta0, lambda0, lambda_n, rho)? / sqrt_m;
    let second = sigma2 * (n as f64).sqrt() * lip_g / (mu * lip_f * lip_f * sqrt_m);
    Ok(first.max(second))
}

/// Scaling threshold for the undamped flow in the narrow regime:
/// α ≥ (Lμ/(r(1−r)λ₀²)) · (√Δ₀/(2√(2ν³))).
pub fn recommended_alpha_under(
    l: f64,
    mu: f64,
    nu: f64,
    delta0: f64,
    lambda0: f64,
    r: f64,
) -> Result<f64> {
    if !crate::error::in_open_unit(r) {
        return Err(Error::InvalidArgument(format!(
            "radius fraction must lie strictly inside (0, 1), got {r}"
        )));
    }
    require_positive(&[("l", l), ("mu", mu), ("nu", nu), ("lambda0", lambda0)])?;
    if !crate::error::is_nonnegative(delta0) {
        return Err(Error::InvalidArgument(format!(
            "initial gap must be nonnegative, got {delta0}"
        )));
    }
    Ok((l * mu / (r * (1.0 - r) * lambda0 * lambda0))
        * (delta0.sqrt() / (2.0 * (2.0 * nu.powi(3)).sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;
    use crate::diagnostics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng_matrix(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn rng_vector(seed: u64, n: usize) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Random bound problem: network, features, loss.
    fn toy_problem(seed: u64, m: usize, d: usize, n: usize) -> (Network, QuadraticLoss) {
        let mut net = Network::init(seed, m, d, ActivationSpec::tanh()).unwrap();
        let x = rng_matrix(seed ^ 0x5a5a, n, d);
        net.bind(&x).unwrap();
        let loss = QuadraticLoss::new(rng_vector(seed ^ 0x33, n)).unwrap();
        (net, loss)
    }

    fn euler_cfg(alpha: f64, rho: f64, dt: f64, horizon: usize) -> FlowConfig {
        FlowConfig {
            alpha,
            rho,
            mode: FlowMode::EulerFlow,
            step_size: dt,
            horizon,
            exit_radius: 1e9,
            exit_policy: ExitPolicy::FlagAndContinue,
        }
    }

    #[test]
    fn config_validation() {
        let good = euler_cfg(1.0, 0.5, 0.01, 10);
        assert!(good.validate().is_ok());
        assert!(FlowConfig { alpha: 0.0, ..good }.validate().is_err());
        assert!(FlowConfig { rho: 1.5, ..good }.validate().is_err());
        assert!(FlowConfig { step_size: 0.0, ..good }.validate().is_err());
        assert!(FlowConfig { exit_radius: 0.0, ..good }.validate().is_err());
        let disc = FlowConfig {
            mode: FlowMode::DiscreteGn,
            rho: 0.0,
            ..good
        };
        assert!(disc.validate().is_err());
    }

    #[test]
    fn recorded_time_per_mode() {
        let flow = euler_cfg(1.0, 0.5, 0.25, 10);
        assert_eq!(flow.time_at(4), 1.0);
        let disc = FlowConfig {
            mode: FlowMode::DiscreteGn,
            ..flow
        };
        assert_eq!(disc.time_at(4), 4.0);
    }

    #[test]
    fn scalar_euler_steps_match_hand_computation() {
        // m = d = n = 1, c = +1, w0 = 0.3, x = 1.2, y = 0.9, alpha = 2,
        // rho = 0.3, dt = 0.05; two hand-computed Euler steps.
        let mut net = Network::from_parts(
            ActivationSpec::tanh(),
            1,
            1,
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.3]),
        )
        .unwrap();
        net.bind(&DMatrix::from_row_slice(1, 1, &[1.2])).unwrap();
        let loss = QuadraticLoss::new(DVector::from_vec(vec![0.9])).unwrap();
        let cfg = euler_cfg(2.0, 0.3, 0.05, 2);
        gn_flow_step(&mut net, &cfg, &loss).unwrap();
        assert!(
            (net.weights()[0] - 0.34395737506492946).abs() < 1e-12,
            "first step: {}",
            net.weights()[0]
        );
        gn_flow_step(&mut net, &cfg, &loss).unwrap();
        assert!(
            (net.weights()[0] - 0.3841262881997666).abs() < 1e-11,
            "second step: {}",
            net.weights()[0]
        );
    }

    #[test]
    fn discrete_step_equals_flow_step_at_matching_rate() {
        let (net0, loss) = toy_problem(41, 2, 3, 4);
        let alpha = 2.0;
        let dt = 0.05;
        let mut flow_net = net0.clone();
        let mut disc_net = net0.clone();
        gn_flow_step(&mut flow_net, &euler_cfg(alpha, 0.4, dt, 1), &loss).unwrap();
        let disc_cfg = FlowConfig {
            mode: FlowMode::DiscreteGn,
            step_size: dt / alpha,
            ..euler_cfg(alpha, 0.4, dt, 1)
        };
        gn_discrete_step(&mut disc_net, &disc_cfg, &loss).unwrap();
        assert_eq!(flow_net.weights(), disc_net.weights());
    }

    #[test]
    fn identity_damping_direction_is_negative_gradient_pullback() {
        let (net, loss) = toy_problem(43, 2, 2, 3);
        let alpha = 1.5;
        let sd = gn_step_direction(&net, &loss, alpha, 1.0).unwrap();
        let psi = net.centered_output().unwrap() * alpha;
        let grad = loss.grad(&psi).unwrap();
        let expect = -net.jacobian().unwrap().tr_mul(&grad);
        assert!((sd.direction - expect).amax() < 1e-14);
    }

    #[test]
    fn stationary_point_leaves_weights_bitwise_unchanged() {
        let (mut net, _) = toy_problem(47, 2, 2, 3);
        let alpha = 1.3;
        // realizable targets: y equals the current scaled output exactly
        let y = net.centered_output().unwrap() * alpha;
        let loss = QuadraticLoss::new(y).unwrap();
        let before = net.weights().clone();
        gn_flow_step(&mut net, &euler_cfg(alpha, 0.2, 0.1, 1), &loss).unwrap();
        assert_eq!(net.weights(), &before);
    }

    #[test]
    fn discrete_step_matches_dense_normal_equations_oracle() {
        // linear activation: f(w) = D (w - w0) exactly, D constant
        let mut net = Network::init(51, 2, 2, ActivationSpec::linear()).unwrap();
        let x = rng_matrix(52, 3, 2);
        net.bind(&x).unwrap();
        let w_start = net.w_init() + rng_vector(53, 4) * 0.3;
        net.set_weights(w_start.clone()).unwrap();
        let y = rng_vector(54, 3);
        let loss = QuadraticLoss::new(y.clone()).unwrap();
        let (alpha, rho, eta) = (1.7, 0.35, 0.07);

        let jac = net.jacobian().unwrap();
        let h = linalg::damped_matrix(&jac, rho);
        let f0 = &jac * (&w_start - net.w_init());
        let grad = (f0 * alpha - y) * 2.0;
        let oracle = &w_start - h.try_inverse().unwrap() * jac.tr_mul(&grad) * eta;

        let cfg = FlowConfig {
            mode: FlowMode::DiscreteGn,
            step_size: eta,
            ..euler_cfg(alpha, rho, 1.0, 1)
        };
        gn_discrete_step(&mut net, &cfg, &loss).unwrap();
        assert!((net.weights() - oracle).amax() < 1e-10);
    }

    #[test]
    fn identity_damping_step_shrinks_euclidean_gradient_step_by_alpha_squared() {
        let (net, loss) = toy_problem(57, 2, 3, 4);
        let alpha = 2.5;
        let dt = 0.01;

        // independent finite-difference gradient of w -> g(alpha f(w))
        let composite = |w: &DVector<f64>| {
            let mut probe = net.clone();
            probe.set_weights(w.clone()).unwrap();
            loss
                .value(&(probe.centered_output().unwrap() * alpha))
                .unwrap()
        };
        let w0 = net.weights().clone();
        let h = 1e-6;
        let mut fd_grad = DVector::zeros(net.p());
        for l in 0..net.p() {
            let mut wp = w0.clone();
            let mut wm = w0.clone();
            wp[l] += h;
            wm[l] -= h;
            fd_grad[l] = (composite(&wp) - composite(&wm)) / (2.0 * h);
        }

        let mut stepped = net.clone();
        gn_flow_step(&mut stepped, &euler_cfg(alpha, 1.0, dt, 1), &loss).unwrap();
        let dw = stepped.weights() - &w0;

        // direction: dw is anti-parallel to the euclidean gradient
        let cosine = dw.dot(&fd_grad) / (dw.norm() * fd_grad.norm());
        assert!((cosine + 1.0).abs() < 1e-6, "cosine {cosine}");
        // magnitude: the euclidean Euler step -dt * grad is alpha^2 larger
        let ratio = (dt * fd_grad.norm()) / dw.norm();
        assert!(
            (ratio - alpha * alpha).abs() < 1e-4 * alpha * alpha,
            "ratio {ratio} vs {}",
            alpha * alpha
        );
    }

    #[test]
    fn undamped_energy_dissipation_residual_halves_with_step() {
        // p < n, full column rank, rho = 0: along the flow the loss decays at
        // rate ||P grad||^2, so the Euler residual shrinks linearly in dt.
        let (net, loss) = toy_problem(61, 1, 3, 7);
        let alpha = 1.2;
        let psi = net.centered_output().unwrap() * alpha;
        let g0 = loss.value(&psi).unwrap();
        let grad = loss.grad(&psi).unwrap();
        let jac = net.jacobian().unwrap();
        let rgrad = diagnostics::riemannian_grad_norm(&jac, &grad).unwrap();

        let residual = |dt: f64| {
            let mut probe = net.clone();
            gn_flow_step(&mut probe, &euler_cfg(alpha, 0.0, dt, 1), &loss).unwrap();
            let g1 = loss
                .value(&(probe.centered_output().unwrap() * alpha))
                .unwrap();
            ((g1 - g0) / dt + rgrad * rgrad).abs()
        };
        let (r1, r2) = (residual(1e-3), residual(5e-4));
        let ratio = r1 / r2;
        assert!(
            (1.5..3.0).contains(&ratio),
            "halving dt should halve the residual: {r1} -> {r2} (ratio {ratio})"
        );
    }

    #[test]
    fn output_space_change_matches_operator_to_first_order() {
        let (net, loss) = toy_problem(67, 3, 2, 4); // p = 6 > n = 4
        let alpha = 1.4;
        let rho = 0.4;
        let psi0 = net.centered_output().unwrap() * alpha;
        let grad = loss.grad(&psi0).unwrap();
        let jac = net.jacobian().unwrap();
        let operator = linalg::output_operator_apply(&jac, rho, &grad).unwrap();

        let residual = |dt: f64| {
            let mut probe = net.clone();
            gn_flow_step(&mut probe, &euler_cfg(alpha, rho, dt, 1), &loss).unwrap();
            let psi1 = probe.centered_output().unwrap() * alpha;
            ((psi1 - &psi0) + &operator * dt).norm()
        };
        let (r1, r2) = (residual(1e-3), residual(5e-4));
        let ratio = r1 / r2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "halving dt should quarter the residual: {r1} -> {r2} (ratio {ratio})"
        );
    }

    #[test]
    fn zero_horizon_records_single_initial_state() {
        let (mut net, loss) = toy_problem(71, 2, 2, 3);
        let rec = run_trajectory(&mut net, &loss, &euler_cfg(1.0, 0.5, 0.01, 0), 0.0).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.rows[0].step, 0);
        assert_eq!(rec.rows[0].t, 0.0);
        assert_eq!(rec.rows[0].dev_norm, 0.0);
        assert!(!rec.rows[0].exited);
        assert!(rec.exit_step.is_none());
    }

    #[test]
    fn trajectories_are_bitwise_deterministic() {
        let cfg = euler_cfg(1.5, 0.3, 0.02, 25);
        let (mut net_a, loss) = toy_problem(73, 2, 3, 5);
        let (mut net_b, _) = toy_problem(73, 2, 3, 5);
        let rec_a = run_trajectory(&mut net_a, &loss, &cfg, 0.0).unwrap();
        let rec_b = run_trajectory(&mut net_b, &loss, &cfg, 0.0).unwrap();
        assert_eq!(rec_a.rows, rec_b.rows);
    }

    #[test]
    fn trajectory_time_and_steps_increase() {
        let (mut net, loss) = toy_problem(79, 2, 2, 6);
        let rec = run_trajectory(&mut net, &loss, &euler_cfg(1.0, 0.5, 0.01, 30), 0.0).unwrap();
        assert_eq!(rec.rows.len(), 31);
        for (i, row) in rec.rows.iter().enumerate() {
            assert_eq!(row.step, i);
            if i > 0 {
                assert!(row.t > rec.rows[i - 1].t);
            }
        }
    }

    #[test]
    fn spectral_columns_match_reference_diagnostics() {
        for (seed, m, d, n) in [(83u64, 2usize, 3usize, 4usize), (89, 3, 2, 9)] {
            let (net, loss) = toy_problem(seed, m, d, n);
            let psi = net.centered_output().unwrap() * 1.1;
            let grad = loss.grad(&psi).unwrap();
            let jac = net.jacobian().unwrap();
            let snap = spectral_snapshot(&jac, &grad);
            let (g_lo, g_hi) = linalg::sym_eig_extremes(&linalg::gram(&jac)).unwrap();
            let (k_lo, _) = linalg::sym_eig_extremes(&linalg::kernel(&jac)).unwrap();
            let p = jac.ncols();
            let nn = jac.nrows();
            if p > nn {
                assert_eq!(snap.lambda_min_gram, 0.0);
            } else {
                assert!((snap.lambda_min_gram - g_lo).abs() < 1e-10 * (1.0 + g_hi));
            }
            if p < nn {
                assert_eq!(snap.lambda_min_kernel, 0.0);
            } else {
                assert!((snap.lambda_min_kernel - k_lo).abs() < 1e-10 * (1.0 + g_hi));
            }
            assert!((snap.lambda_max_gram - g_hi).abs() < 1e-10 * (1.0 + g_hi));
            let reference = diagnostics::projected_grad_norm_lenient(&jac, &grad);
            assert!((snap.rgrad_norm - reference).abs() < 1e-10 * (1.0 + reference));
        }
    }

    #[test]
    fn radius_exit_halts_or_flags_monotonically() {
        // far-away targets force immediate large steps
        let mk = || {
            let mut net = Network::init(97, 2, 2, ActivationSpec::tanh()).unwrap();
            let x = rng_matrix(98, 3, 2);
            net.bind(&x).unwrap();
            net
        };
        let loss = QuadraticLoss::new(DVector::from_vec(vec![50.0, -40.0, 30.0])).unwrap();
        let base = FlowConfig {
            exit_radius: 0.5,
            ..euler_cfg(1.0, 0.5, 0.5, 40)
        };

        let halt_cfg = FlowConfig {
            exit_policy: ExitPolicy::Halt,
            ..base
        };
        let mut net = mk();
        let rec = run_trajectory(&mut net, &loss, &halt_cfg, 0.0).unwrap();
        let last = rec.rows.last().unwrap();
        assert!(last.exited);
        assert!(rec.rows.len() < 41, "halt should truncate the record");
        assert_eq!(rec.exit_step, Some(last.step));
        assert_eq!(rec.exit_time, Some(last.t));

        let mut net = mk();
        let rec = run_trajectory(&mut net, &loss, &base, 0.0).unwrap();
        assert_eq!(rec.rows.len(), 41, "flag-and-continue keeps recording");
        let k0 = rec.exit_step.unwrap();
        for row in &rec.rows {
            assert_eq!(row.exited, row.step >= k0, "flag must be monotone");
        }
    }

    #[test]
    fn singular_start_is_flagged_and_skipped_or_continued() {
        // one sample at the origin makes the Jacobian identically zero, so
        // the undamped preconditioner is singular at the very first solve
        let mk = || {
            let mut net = Network::init(101, 1, 2, ActivationSpec::tanh()).unwrap();
            net.bind(&DMatrix::from_row_slice(1, 2, &[0.0, 0.0])).unwrap();
            net
        };
        let loss = QuadraticLoss::new(DVector::from_vec(vec![1.0])).unwrap();

        let halt_cfg = FlowConfig {
            exit_policy: ExitPolicy::Halt,
            ..euler_cfg(1.0, 0.0, 0.01, 10)
        };
        let mut net = mk();
        let rec = run_trajectory(&mut net, &loss, &halt_cfg, 0.0).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert!(rec.rows[0].exited, "singularity at state 0 flags row 0");
        assert_eq!(rec.exit_step, Some(0));

        let cont_cfg = euler_cfg(1.0, 0.0, 0.01, 10);
        let mut net = mk();
        let rec = run_trajectory(&mut net, &loss, &cont_cfg, 0.0).unwrap();
        assert_eq!(rec.rows.len(), 11, "floored fallback keeps integrating");
        assert!(rec.rows.iter().all(|r| r.exited));
        assert!(rec.solver_fallbacks >= 10);
    }

    #[test]
    fn undamped_narrow_loss_is_nonincreasing() {
        // realizable narrow problem: m=1, d=2 (p=2) with n=5 samples
        let mut net = Network::init(103, 1, 2, ActivationSpec::tanh()).unwrap();
        let x = rng_matrix(104, 5, 2);
        net.bind(&x).unwrap();
        let alpha = 2.0;
        let delta = rng_vector(105, 2).normalize() * 0.4;
        net.set_weights(net.w_init() + delta).unwrap();
        let y = net.centered_output().unwrap() * alpha;
        net.set_weights(net.w_init().clone()).unwrap();
        let loss = QuadraticLoss::new(y).unwrap();

        let rec =
            run_trajectory(&mut net, &loss, &euler_cfg(alpha, 0.0, 1e-3, 400), 0.0).unwrap();
        assert!(rec.exit_step.is_none());
        for w in rec.rows.windows(2) {
            assert!(
                w[1].loss <= w[0].loss + 1e-9 * (1.0 + w[0].loss.abs()),
                "loss rose at step {}: {} -> {}",
                w[1].step,
                w[0].loss,
                w[1].loss
            );
        }
        // the run actually makes progress
        assert!(rec.final_loss() < 0.9 * rec.rows[0].loss);
    }

    #[test]
    fn fitted_rate_of_recorded_trajectory_is_positive() {
        let (mut net, _) = toy_problem(107, 2, 2, 3);
        let alpha = 4.0;
        let delta = rng_vector(108, net.p()).normalize() * 0.2;
        net.set_weights(net.w_init() + delta).unwrap();
        let y = net.centered_output().unwrap() * alpha;
        net.set_weights(net.w_init().clone()).unwrap();
        let loss = QuadraticLoss::new(y).unwrap();
        let rec =
            run_trajectory(&mut net, &loss, &euler_cfg(alpha, 0.5, 1e-3, 500), 0.0).unwrap();
        let rate = rec.fitted_rate(FitWindow::default()).unwrap();
        assert!(rate > 0.0, "rate {rate}");
    }

    #[test]
    fn eta_recommendation_values() {
        // all spectral ratios collapse to 1
        let flat = recommended_eta(1.0, 1.0, 0.7, 2.0, 9, 1.7).unwrap();
        assert!((flat - 0.05767012687427912).abs() < 1e-15);
        // identity damping
        let id = recommended_eta(0.6, 1.1, 1.0, 2.0, 9, 1.7).unwrap();
        assert!((id - 0.01715805427664503).abs() < 1e-15);
        // generic frozen value
        let gen = recommended_eta(0.6, 1.1, 0.3, 2.0, 9, 1.7).unwrap();
        assert!((gen - 0.04089364244355559).abs() < 1e-15);
        // domain errors
        assert!(recommended_eta(0.6, 1.1, 0.0, 2.0, 9, 1.7).is_err());
        assert!(recommended_eta(0.0, 1.1, 0.3, 2.0, 9, 1.7).is_err());
        assert!(recommended_eta(0.6, 1.1, 0.3, 2.0, 0, 1.7).is_err());
    }

    #[test]
    fn alpha_recommendation_values() {
        // generic frozen value (wide regime)
        let over = recommended_alpha_over(1.2, 2.0, 2.0, 4.0, 0.5, 1.5, 0.25).unwrap();
        assert!((over - 6.503225806451612).abs() < 1e-12);
        // identity damping closed form
        let over1 = recommended_alpha_over(1.2, 2.0, 2.0, 4.0, 0.5, 1.5, 1.0).unwrap();
        assert!((over1 - 28.799999999999997).abs() < 1e-12);
        // narrow-regime hand value: L=mu=lambda0=1, nu=2, delta0=8, r=1/2
        let under = recommended_alpha_under(1.0, 1.0, 2.0, 8.0, 1.0, 0.5).unwrap();
        assert!((under - std::f64::consts::SQRT_2).abs() < 1e-14);
        assert!(recommended_alpha_under(1.0, 1.0, 2.0, 8.0, 1.0, 0.0).is_err());
        assert!(recommended_alpha_under(1.0, 1.0, 2.0, 8.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn alpha_disc_takes_the_binding_branch() {
        // first branch dominates: equals the wide threshold over sqrt(m)
        let a = recommended_alpha_disc(
            1.2, 2.0, 2.0, 4.0, 0.5, 1.5, 0.25, 16, 10,
            0.769800358919501, 1.7, 4.0,
        )
        .unwrap();
        assert!((a - 1.625806451612903).abs() < 1e-12);
        // second branch dominates at large loss-Lipschitz modulus
        let b = recommended_alpha_disc(
            1.2, 2.0, 2.0, 4.0, 0.5, 1.5, 0.25, 16, 10,
            0.769800358919501, 1.7, 30.0,
        )
        .unwrap();
        assert!((b - 3.1587229383227577).abs() < 1e-12);
    }

    #[test]
    fn alpha_over_grows_with_damping_when_ceiling_exceeds_floor() {
        // the damping-dependent ratio ((1-rho)l0^2+rho)/((1-rho)ln^2+rho)
        // has derivative proportional to ln^2 - l0^2 > 0, so the threshold
        // is nondecreasing in rho
        let mut prev = 0.0;
        for i in 1..100 {
            let rho = i as f64 / 100.0;
            let a = recommended_alpha_over(1.0, 2.0, 2.0, 1.0, 0.7, 1.3, rho).unwrap();
            assert!(a >= prev - 1e-15, "rho {rho}: {a} < {prev}");
            prev = a;
        }
        let lo = recommended_alpha_over(1.0, 2.0, 2.0, 1.0, 0.7, 1.3, 0.1).unwrap();
        let hi = recommended_alpha_over(1.0, 2.0, 2.0, 1.0, 0.7, 1.3, 0.9).unwrap();
        assert!(hi > lo);
    }
}
