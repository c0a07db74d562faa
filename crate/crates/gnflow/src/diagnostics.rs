//! Spectral reports, closed-form rate certificates, and projected-gradient
//! diagnostics.
//!
//! Everything here is a pure function of matrices and scalars. The spectral
//! quantities are defined once, at initialization: with D₀ the Jacobian of
//! the centered output at the starting weights, K₀ = D₀D₀ᵀ is the kernel and
//! H₀ = D₀ᵀD₀ the Gram matrix. The certificates are parameterized by
//!
//! * λ₀ = √(λ_min(M)/4) with M = K₀ in the wide regime (p ≥ n) and M = H₀ in
//!   the narrow regime (p < n) — the curvature floor;
//! * λₙ = √(‖K₀‖_op/4) — the curvature ceiling;
//! * L — a bound on the Lipschitz modulus of the Jacobian map w ↦ D(w);
//! * r₀ = λ₀/L — the radius of the ball around the initial weights inside
//!   which the floor provably persists.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, SINGULAR_REL_TOL};

/// Parameter count relative to sample count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// p < n: fewer parameters than samples.
    Underparameterized,
    /// p ≥ n: at least as many parameters as samples.
    Overparameterized,
}

/// Spectral summary of the Jacobian at initialization.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SpectralReport {
    pub regime: Regime,
    pub n: usize,
    pub p: usize,
    /// Curvature floor λ₀ = √(λ_min(M)/4); zero when the floor collapses.
    pub lambda0: f64,
    /// Curvature ceiling λₙ = √(‖K₀‖_op/4).
    pub lambda_n: f64,
    /// Raw λ_min of the regime-defining matrix M (4λ₀²).
    pub lambda_min_floor: f64,
    /// Raw operator norm of the kernel K₀ (4λₙ²).
    pub lambda_max_kernel: f64,
    /// Jacobian-Lipschitz estimate used for the radius.
    pub l_estimate: f64,
    /// Persistence radius r₀ = λ₀/L (infinite when L = 0).
    pub r0: f64,
    /// Whether the curvature floor is strictly positive (beyond round-off).
    pub assumption_ok: bool,
}

/// Builds the spectral summary from the Jacobian at initialization. The
/// regime picks which matrix supplies the floor: the kernel when p ≥ n, the
/// Gram matrix when p < n. Only the smaller of the two is eigendecomposed;
/// they share every nonzero eigenvalue.
pub fn spectral_report(jac_init: &DMatrix<f64>, l_estimate: f64) -> Result<SpectralReport> {
    let n = jac_init.nrows();
    let p = jac_init.ncols();
    if n == 0 || p == 0 {
        return Err(Error::ShapeMismatch("empty Jacobian".into()));
    }
    if !crate::error::is_nonnegative(l_estimate) {
        return Err(Error::InvalidArgument(format!(
            "Jacobian-Lipschitz estimate must be nonnegative, got {l_estimate}"
        )));
    }
    let regime = if p < n {
        Regime::Underparameterized
    } else {
        Regime::Overparameterized
    };
    // The small-side matrix carries the regime floor in both cases, and its
    // top eigenvalue is always ‖K₀‖_op.
    let small = if p < n {
        linalg::gram(jac_init)
    } else {
        linalg::kernel(jac_init)
    };
    let (lambda_min_floor, lambda_max_kernel) = linalg::sym_eig_extremes(&small)?;
    let assumption_ok = lambda_min_floor > SINGULAR_REL_TOL * lambda_max_kernel.max(0.0);
    let lambda0 = (lambda_min_floor.max(0.0) / 4.0).sqrt();
    let lambda_n = (lambda_max_kernel.max(0.0) / 4.0).sqrt();
    let r0 = if l_estimate > 0.0 {
        lambda0 / l_estimate
    } else {
        f64::INFINITY
    };
    Ok(SpectralReport {
        regime,
        n,
        p,
        lambda0,
        lambda_n,
        lambda_min_floor,
        lambda_max_kernel,
        l_estimate,
        r0,
        assumption_ok,
    })
}

/// Default bound on the Lipschitz modulus of the Jacobian map w ↦ D(w):
/// σ₂ √(Σⱼ ‖x_j‖₂⁴), where σ₂ bounds the activation's second derivative.
pub fn jacobian_lipschitz_estimate(sigma2: f64, x: &DMatrix<f64>) -> f64 {
    let sum: f64 = x.row_iter().map(|r| r.norm_squared().powi(2)).sum();
    sigma2 * sum.sqrt()
}

/// Gap certificate for the damped flow in the wide regime:
/// Δ₀ · exp(−2νλ₀²t / (ρ + (1−ρ)λ₀²)). Needs ρ ∈ (0,1] and λ₀ > 0.
pub fn rate_bound_over(t: f64, nu: f64, lambda0: f64, rho: f64, delta0: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
    }
    if !crate::error::in_half_open_unit(rho) {
        return Err(Error::InvalidArgument(format!(
            "the wide-regime certificate needs damping in (0, 1], got {rho}"
        )));
    }
    if !crate::error::is_positive(lambda0)
        || !crate::error::is_positive(nu)
        || !crate::error::is_nonnegative(delta0)
    {
        return Err(Error::InvalidArgument(format!(
            "certificate needs lambda0 > 0, nu > 0, delta0 >= 0; \
             got lambda0 = {lambda0}, nu = {nu}, delta0 = {delta0}"
        )));
    }
    let l2 = lambda0 * lambda0;
    Ok(delta0 * (-2.0 * nu * l2 * t / (rho + (1.0 - rho) * l2)).exp())
}

/// Gap certificate for the undamped flow in the narrow regime:
/// Δ₀ · exp(−2νt). Independent of the curvature floor.
pub fn rate_bound_under(t: f64, nu: f64, delta0: f64) -> f64 {
    delta0 * (-2.0 * nu * t).exp()
}

/// Per-step contraction factor of the discrete damped update run at its
/// recommended learning rate:
/// q = 1 − (ν/μ)·(λ₀⁴/(λₙ² Lip_f²))·[((1−ρ)λₙ²+ρ)/((1−ρ)λ₀²+ρ)]².
/// A negative value means the inputs violate the certificate's premises; it
/// is clamped to 0 with a warning.
pub fn contraction_factor(
    nu: f64,
    mu: f64,
    lambda0: f64,
    lambda_n: f64,
    rho: f64,
    lip_f: f64,
) -> Result<f64> {
    if !crate::error::in_half_open_unit(rho) {
        return Err(Error::InvalidArgument(format!(
            "contraction factor needs damping in (0, 1], got {rho}"
        )));
    }
    for (name, v) in [
        ("nu", nu),
        ("mu", mu),
        ("lambda0", lambda0),
        ("lambda_n", lambda_n),
        ("lip_f", lip_f),
    ] {
        if !crate::error::is_positive(v) {
            return Err(Error::InvalidArgument(format!(
                "contraction factor needs {name} > 0, got {v}"
            )));
        }
    }
    let l02 = lambda0 * lambda0;
    let ln2 = lambda_n * lambda_n;
    let ratio = ((1.0 - rho) * ln2 + rho) / ((1.0 - rho) * l02 + rho);
    let q = 1.0 - (nu / mu) * (l02 * l02 / (ln2 * lip_f * lip_f)) * ratio * ratio;
    if q < 0.0 {
        log::warn!(
            "contraction factor {q} is negative (premises violated); clamping to 0"
        );
        return Ok(0.0);
    }
    Ok(q)
}

/// ‖P ∇g‖₂ where P is the orthogonal projection onto the column space of D.
/// Requires full column rank; rank deficiency propagates as a singular
/// preconditioner error.
pub fn riemannian_grad_norm(jac: &DMatrix<f64>, euclid_grad: &DVector<f64>) -> Result<f64> {
    Ok(linalg::projection_apply(jac, euclid_grad)?.norm())
}

/// Rank-tolerant version of [`riemannian_grad_norm`]: projects onto the
/// numerical range of D (eigenvalues above `SINGULAR_REL_TOL` relative to the
/// top) instead of failing, working through whichever of the kernel or Gram
/// matrix is smaller. Used for per-step trajectory recording, where rank
/// collapse is an observation rather than an error.
pub fn projected_grad_norm_lenient(jac: &DMatrix<f64>, euclid_grad: &DVector<f64>) -> f64 {
    let n = jac.nrows();
    let p = jac.ncols();
    if n <= p {
        // range(D) = range(K): project onto the kernel's dominant eigenspace.
        let eig = linalg::kernel(jac).symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = SINGULAR_REL_TOL * top;
        let mut acc = 0.0;
        for i in 0..n {
            if eig.eigenvalues[i] > tol {
                let c = eig.eigenvectors.column(i).dot(euclid_grad);
                acc += c * c;
            }
        }
        acc.sqrt()
    } else {
        // Columns D v_i / √γ_i of the Gram eigenbasis span range(D).
        let eig = linalg::gram(jac).symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = SINGULAR_REL_TOL * top;
        let proj = jac.tr_mul(euclid_grad);
        let mut acc = 0.0;
        for i in 0..p {
            if eig.eigenvalues[i] > tol {
                let c = eig.eigenvectors.column(i).dot(&proj);
                acc += c * c / eig.eigenvalues[i];
            }
        }
        acc.sqrt()
    }
}

/// Analytic cap on the weight deviation of the undamped narrow-regime flow:
/// μ√Δ₀ / (α(1−r)λ₀√(2ν³)). At the recommended scaling the cap equals
/// 2rλ₀/L exactly.
pub fn deviation_bound_under(
    mu: f64,
    nu: f64,
    delta0: f64,
    alpha: f64,
    r: f64,
    lambda0: f64,
) -> Result<f64> {
    if !crate::error::in_open_unit(r) {
        return Err(Error::InvalidArgument(format!(
            "radius fraction must lie strictly inside (0, 1), got {r}"
        )));
    }
    for (name, v) in [
        ("mu", mu),
        ("nu", nu),
        ("alpha", alpha),
        ("lambda0", lambda0),
    ] {
        if !crate::error::is_positive(v) {
            return Err(Error::InvalidArgument(format!(
                "deviation bound needs {name} > 0, got {v}"
            )));
        }
    }
    if !crate::error::is_nonnegative(delta0) {
        return Err(Error::InvalidArgument(format!(
            "deviation bound needs delta0 >= 0, got {delta0}"
        )));
    }
    Ok(mu * delta0.sqrt() / (alpha * (1.0 - r) * lambda0 * (2.0 * nu.powi(3)).sqrt()))
}

/// The two candidate floors for the Gram spectrum along a trajectory that
/// stays within radius r·r₀ of the start: ((1−r)²λ₀², 4(1−r)²λ₀²). The
/// analysis states both; diagnostics report which of them the measured
/// spectrum clears instead of picking one.
pub fn trajectory_gram_floors(r: f64, lambda0: f64) -> (f64, f64) {
    let base = (1.0 - r) * (1.0 - r) * lambda0 * lambda0;
    (base, 4.0 * base)
}

/// Closed-form gap certificate, evaluable over time (continuous kinds) or
/// step index (discrete kind).
#[derive(Clone, Copy, Debug)]
pub enum RateBound {
    /// Damped flow, wide regime: Δ₀·exp(−2νλ₀²t/(ρ+(1−ρ)λ₀²)).
    OverContinuous {
        nu: f64,
        lambda0: f64,
        rho: f64,
        delta0: f64,
    },
    /// Discrete damped update at the recommended rate: Δ₀·qᵏ.
    OverDiscrete { q: f64, delta0: f64 },
    /// Undamped flow, narrow regime: Δ₀·exp(−2νt).
    UnderContinuous { nu: f64, delta0: f64 },
}

impl RateBound {
    /// Value at time t (or step index for the discrete kind).
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            RateBound::OverContinuous {
                nu,
                lambda0,
                rho,
                delta0,
            } => {
                let l2 = lambda0 * lambda0;
                delta0 * (-2.0 * nu * l2 * t / (rho + (1.0 - rho) * l2)).exp()
            }
            RateBound::OverDiscrete { q, delta0 } => delta0 * q.powf(t),
            RateBound::UnderContinuous { nu, delta0 } => delta0 * (-2.0 * nu * t).exp(),
        }
    }

    pub fn delta0(&self) -> f64 {
        match *self {
            RateBound::OverContinuous { delta0, .. }
            | RateBound::OverDiscrete { delta0, .. }
            | RateBound::UnderContinuous { delta0, .. } => delta0,
        }
    }
}

/// Fractional window over a recorded trajectory used for exponent fitting;
/// defaults to the middle 60% to avoid the initial transient and the
/// round-off floor near convergence.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct FitWindow {
    pub lo_frac: f64,
    pub hi_frac: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            lo_frac: 0.2,
            hi_frac: 0.8,
        }
    }
}

impl FitWindow {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lo_frac >= 0.0 && self.lo_frac < self.hi_frac && self.hi_frac <= 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "fit window must satisfy 0 <= lo < hi <= 1, got [{}, {}]",
                self.lo_frac, self.hi_frac
            )));
        }
        Ok(())
    }
}

/// Empirical decay exponent: least-squares slope of log Δ against t over the
/// windowed portion of the series, negated so a decaying gap yields a
/// positive rate. Points with nonpositive gap are dropped; fewer than two
/// surviving points is an error.
pub fn fit_decay_rate(times: &[f64], gaps: &[f64], window: FitWindow) -> Result<f64> {
    window.validate()?;
    if times.len() != gaps.len() {
        return Err(Error::ShapeMismatch(format!(
            "times and gaps have different lengths ({} vs {})",
            times.len(),
            gaps.len()
        )));
    }
    let len = times.len();
    let lo = (window.lo_frac * len as f64).floor() as usize;
    let hi = ((window.hi_frac * len as f64).ceil() as usize).min(len);
    let pts: Vec<(f64, f64)> = (lo..hi)
        .filter(|&i| gaps[i] > 0.0 && gaps[i].is_finite() && times[i].is_finite())
        .map(|i| (times[i], gaps[i].ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 2 points with positive gap in the window, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let (st, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / n, sy / n);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in &pts {
        num += (t - mt) * (y - my);
        den += (t - mt) * (t - mt);
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "decay fit window has zero time spread".into(),
        ));
    }
    Ok(-num / den)
}
