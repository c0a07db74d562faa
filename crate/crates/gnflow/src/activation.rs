//! Scalar activation functions and their derivative bounds.
//!
//! The model applies a smooth activation σ coordinatewise. Several rate
//! thresholds need uniform bounds on its derivatives:
//!
//! * `sigma0 ≥ sup |σ|`
//! * `sigma1 ≥ sup |σ′|`
//! * `sigma2 ≥ sup |σ″|`
//!
//! For tanh, σ and σ′ are bounded by 1 exactly. The second-derivative bound
//! is obtained numerically: |tanh″| is maximized over a grid on [−5, 5] and
//! the best bracket is refined by golden-section search. (The refinement
//! converges to the true maximum 4/(3√3) ≈ 0.7698; tests pin this.)
//!
//! A linear activation σ(z) = z is provided as a test fixture only: its
//! derivative is constant, so analytic Jacobians must match finite
//! differences to machine precision, which isolates assembly bugs from
//! finite-difference truncation noise.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    /// Identity activation; test fixture for exact-derivative baselines.
    Linear,
}

/// An activation together with its derivative bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationSpec {
    kind: ActivationKind,
    sigma0: f64,
    sigma1: f64,
    sigma2: f64,
}

impl ActivationSpec {
    pub fn tanh() -> Self {
        Self {
            kind: ActivationKind::Tanh,
            sigma0: 1.0,
            sigma1: 1.0,
            sigma2: tanh_second_derivative_bound(),
        }
    }

    /// Test-only identity activation. |σ| is unbounded (σ0 = ∞) and σ″ = 0,
    /// so the σ2-gated diagnostics degenerate; fine for derivative checks.
    pub fn linear() -> Self {
        Self {
            kind: ActivationKind::Linear,
            sigma0: f64::INFINITY,
            sigma1: 1.0,
            sigma2: 0.0,
        }
    }

    pub fn from_kind(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Tanh => Self::tanh(),
            ActivationKind::Linear => Self::linear(),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    /// σ(z)
    pub fn value(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Linear => z,
        }
    }

    /// σ′(z)
    pub fn deriv(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Linear => 1.0,
        }
    }

    /// σ″(z)
    pub fn second_deriv(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            ActivationKind::Linear => 0.0,
        }
    }

    /// Bound on |σ|.
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Bound on |σ′|.
    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    /// Bound on |σ″|.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// max |tanh″| over ℝ, computed once by grid search on [−5, 5] plus
/// golden-section refinement of the best bracket.
///
/// |tanh″(z)| = 2|t|(1 − t²) with t = tanh z decays to 0 as |z| → ∞, so the
/// grid interval safely contains the maximizer.
fn tanh_second_derivative_bound() -> f64 {
    static BOUND: OnceLock<f64> = OnceLock::new();
    *BOUND.get_or_init(|| {
        let obj = |z: f64| {
            let t = z.tanh();
            (2.0 * t * (1.0 - t * t)).abs()
        };
        let (lo, hi) = (-5.0_f64, 5.0_f64);
        let grid_points = 2001usize;
        let step = (hi - lo) / (grid_points - 1) as f64;
        let mut best_i = 0usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..grid_points {
            let v = obj(lo + i as f64 * step);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        // Refine within one grid cell on each side of the best point.
        let mut a = lo + (best_i.saturating_sub(1)) as f64 * step;
        let mut b = (lo + (best_i + 1) as f64 * step).min(hi);
        let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let (mut f1, mut f2) = (obj(x1), obj(x2));
        for _ in 0..90 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = obj(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = obj(x1);
            }
        }
        obj(0.5 * (a + b)).max(best)
    })
}
