//! Dense matrix core: Gram/kernel assembly, damped-preconditioner solves
//! (direct p×p and dual n×n via the Sherman–Morrison–Woodbury identity),
//! tangent-space projection, and symmetric eigenvalue extraction.
//!
//! The central object is H_ρ = (1−ρ) DᵀD + ρ I for a Jacobian D (n×p) and
//! damping ρ ∈ [0,1]. H_ρ is positive definite whenever ρ > 0, and at ρ = 0
//! exactly when D has full column rank. All algebra is dense: problem sizes
//! stay in the hundreds, where exactness and simplicity beat iterative
//! machinery.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative rank tolerance for undamped solves: λ_min ≤ tol · λ_max is
/// treated as singular. Separates genuine rank collapse (an event the flow
/// drivers must react to) from round-off.
pub const SINGULAR_REL_TOL: f64 = 1e-10;

/// DᵀD (p×p), symmetric positive semidefinite.
pub fn gram(jac: &DMatrix<f64>) -> DMatrix<f64> {
    jac.tr_mul(jac)
}

/// DDᵀ (n×n), symmetric positive semidefinite; shares its nonzero spectrum
/// with the Gram matrix.
pub fn kernel(jac: &DMatrix<f64>) -> DMatrix<f64> {
    jac * jac.transpose()
}

/// H_ρ = (1−ρ) DᵀD + ρ I, materialized densely.
pub fn damped_matrix(jac: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let p = jac.ncols();
    let mut h = gram(jac);
    h *= 1.0 - rho;
    for i in 0..p {
        h[(i, i)] += rho;
    }
    h
}

/// Extreme eigenvalues (λ_min, λ_max) of a symmetric matrix via a full
/// symmetric eigendecomposition. The input must be symmetric within an
/// absolute entrywise tolerance of 1e−10; it is symmetrized before
/// factorization so the result is exact for the nearest symmetric matrix.
pub fn sym_eig_extremes(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue extraction needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "matrix is asymmetric (max |A - A^T| entry = {asym:e})"
        )));
    }
    let sym = 0.5 * (a + a.transpose());
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    Ok((lo, hi))
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in [0, 1], got {rho}"
        )));
    }
    Ok(())
}

enum Route {
    /// ρ = 1: H is the identity.
    Identity,
    /// Positive-definite factorization of the p×p matrix H_ρ.
    DirectChol(Cholesky<f64, Dyn>),
    /// Eigendecomposition of H_ρ with reciprocals of the (possibly floored)
    /// eigenvalues; used for ρ = 0 and as the fallback route.
    DirectEig {
        q: DMatrix<f64>,
        inv_evals: DVector<f64>,
    },
    /// Dual route through the n×n system: H_ρ⁻¹ r = (r − ρ₀⁻¹ Dᵀ (I + ρ₀⁻¹K)⁻¹ D r)/ρ.
    Smw {
        jac: DMatrix<f64>,
        rho0_inv: f64,
        chol: Cholesky<f64, Dyn>,
    },
}

/// Factorization handle for H_ρ = (1−ρ)DᵀD + ρI. Immutable once built;
/// `solve` applies H_ρ⁻¹ and `solve_sq` applies H_ρ⁻².
pub struct DampedPreconditioner {
    rho: f64,
    p: usize,
    route: Route,
    fallback: bool,
}

impl std::fmt::Debug for DampedPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let route = match &self.route {
            Route::Identity => "identity",
            Route::DirectChol(_) => "direct-cholesky",
            Route::DirectEig { .. } => "direct-eigen",
            Route::Smw { .. } => "dual-system",
        };
        f.debug_struct("DampedPreconditioner")
            .field("rho", &self.rho)
            .field("dim", &self.p)
            .field("route", &route)
            .field("fallback", &self.fallback)
            .finish()
    }
}

impl DampedPreconditioner {
    /// Factorizes through the p×p matrix. For ρ = 0 the Gram matrix is
    /// eigendecomposed and rank-checked against [`SINGULAR_REL_TOL`]; for
    /// ρ ∈ (0,1) a positive-definite factorization is attempted first with an
    /// eigenvalue-floored fallback (reported via [`Self::used_fallback`]).
    pub fn direct(jac: &DMatrix<f64>, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let p = jac.ncols();
        if rho == 1.0 {
            return Ok(Self {
                rho,
                p,
                route: Route::Identity,
                fallback: false,
            });
        }
        let h = damped_matrix(jac, rho);
        if rho == 0.0 {
            let eig = h.symmetric_eigen();
            let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if lambda_min <= SINGULAR_REL_TOL * lambda_max.max(0.0) {
                return Err(Error::SingularPreconditioner {
                    lambda_min,
                    lambda_max,
                });
            }
            let inv_evals = eig.eigenvalues.map(|v| 1.0 / v);
            return Ok(Self {
                rho,
                p,
                route: Route::DirectEig {
                    q: eig.eigenvectors,
                    inv_evals,
                },
                fallback: false,
            });
        }
        match Cholesky::new(h.clone()) {
            Some(chol) => Ok(Self {
                rho,
                p,
                route: Route::DirectChol(chol),
                fallback: false,
            }),
            None => {
                log::warn!(
                    "positive-definite factorization failed at damping {rho}; \
                     falling back to floored eigendecomposition"
                );
                Ok(Self::from_floored_eig(h, rho, p))
            }
        }
    }

    /// Factorizes through the dual n×n system (I + ρ₀⁻¹ DDᵀ) with
    /// ρ₀ = ρ/(1−ρ); intended for the wide case p > n. Requires ρ ∈ (0,1).
    pub fn smw(jac: &DMatrix<f64>, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        if rho == 0.0 || rho == 1.0 {
            return Err(Error::InvalidArgument(format!(
                "the dual-system route needs damping strictly inside (0, 1), got {rho}"
            )));
        }
        let p = jac.ncols();
        let n = jac.nrows();
        let rho0_inv = (1.0 - rho) / rho;
        let mut a = kernel(jac);
        a *= rho0_inv;
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        match Cholesky::new(a) {
            Some(chol) => Ok(Self {
                rho,
                p,
                route: Route::Smw {
                    jac: jac.clone(),
                    rho0_inv,
                    chol,
                },
                fallback: false,
            }),
            None => {
                log::warn!(
                    "dual-system factorization failed at damping {rho}; \
                     falling back to floored direct eigendecomposition"
                );
                Ok(Self::floored(jac, rho))
            }
        }
    }

    /// Picks the route automatically: direct for ρ ∈ {0, 1}, otherwise the
    /// dual system when p > n and the direct factorization when p ≤ n.
    pub fn auto(jac: &DMatrix<f64>, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        if rho > 0.0 && rho < 1.0 && jac.ncols() > jac.nrows() {
            Self::smw(jac, rho)
        } else {
            Self::direct(jac, rho)
        }
    }

    /// Never-failing construction: eigendecomposes H_ρ and floors the
    /// eigenvalues at 1e−12 · trace/p, so rank-deficient systems still yield
    /// a usable (regularized) solve. Always reports as a fallback.
    pub fn floored(jac: &DMatrix<f64>, rho: f64) -> Self {
        let p = jac.ncols();
        if rho >= 1.0 {
            return Self {
                rho: 1.0,
                p,
                route: Route::Identity,
                fallback: false,
            };
        }
        let h = damped_matrix(jac, rho.max(0.0));
        Self::from_floored_eig(h, rho.max(0.0), p)
    }

    fn from_floored_eig(h: DMatrix<f64>, rho: f64, p: usize) -> Self {
        let floor = (1e-12 * h.trace() / p as f64).max(f64::MIN_POSITIVE);
        let eig = h.symmetric_eigen();
        let inv_evals = eig.eigenvalues.map(|v| 1.0 / v.max(floor));
        Self {
            rho,
            p,
            route: Route::DirectEig {
                q: eig.eigenvectors,
                inv_evals,
            },
            fallback: true,
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Parameter dimension p of the system.
    pub fn dim(&self) -> usize {
        self.p
    }

    /// True when the positive-definite factorization failed and the floored
    /// eigendecomposition was used instead.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// H_ρ⁻¹ · rhs.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.p {
            return Err(Error::ShapeMismatch(format!(
                "solve rhs has length {}, system dimension is {}",
                rhs.len(),
                self.p
            )));
        }
        Ok(match &self.route {
            Route::Identity => rhs.clone(),
            Route::DirectChol(chol) => chol.solve(rhs),
            Route::DirectEig { q, inv_evals } => {
                let y = q.tr_mul(rhs).component_mul(inv_evals);
                q * y
            }
            Route::Smw {
                jac,
                rho0_inv,
                chol,
            } => {
                let inner = chol.solve(&(jac * rhs));
                let correction = jac.tr_mul(&inner) * *rho0_inv;
                (rhs - correction) / self.rho
            }
        })
    }

    /// H_ρ⁻² · rhs (two successive solves).
    pub fn solve_sq(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let once = self.solve(rhs)?;
        self.solve(&once)
    }
}

/// H_ρ⁻¹ · rhs through the direct p×p factorization.
pub fn precond_solve(jac: &DMatrix<f64>, rho: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    DampedPreconditioner::direct(jac, rho)?.solve(rhs)
}

/// H_ρ⁻¹ · rhs through the dual n×n system; requires ρ ∈ (0,1).
pub fn precond_solve_smw(
    jac: &DMatrix<f64>,
    rho: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    DampedPreconditioner::smw(jac, rho)?.solve(rhs)
}

/// H_ρ⁻² · rhs through the direct factorization.
pub fn precond_solve_sq(jac: &DMatrix<f64>, rho: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    DampedPreconditioner::direct(jac, rho)?.solve_sq(rhs)
}

/// D H_ρ⁻¹ Dᵀ · v — the operator that drives the output-space dynamics. Every
/// eigenpair (γ, u) of DDᵀ maps to the eigenpair (γ/((1−ρ)γ+ρ), u).
pub fn output_operator_apply(
    jac: &DMatrix<f64>,
    rho: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    if v.len() != jac.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "output-space vector has length {}, Jacobian has {} rows",
            v.len(),
            jac.nrows()
        )));
    }
    let pre = DampedPreconditioner::auto(jac, rho)?;
    Ok(jac * pre.solve(&jac.tr_mul(v))?)
}

/// Orthogonal projection P v = D (DᵀD)⁻¹ Dᵀ v onto the column space of D.
/// Requires full column rank; rank deficiency surfaces as
/// [`Error::SingularPreconditioner`].
pub fn projection_apply(jac: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != jac.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "projection input has length {}, Jacobian has {} rows",
            v.len(),
            jac.nrows()
        )));
    }
    let pre = DampedPreconditioner::direct(jac, 0.0)?;
    Ok(jac * pre.solve(&jac.tr_mul(v))?)
}
